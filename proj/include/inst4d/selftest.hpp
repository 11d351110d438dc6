#pragma once

#include <string>
#include <vector>

namespace inst4d {

struct SelfTestResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Compact property suites: Sinkhorn invariants, Hungarian versus exhaustive
// search, dual-quaternion identities, and finite-difference gradient checks
// for every differentiable operation. Intended for `inst4d selftest`.
std::vector<SelfTestResult> run_selftest(int threads);

}  // namespace inst4d
