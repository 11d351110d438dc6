#pragma once

#include <filesystem>
#include <string>

#include "inst4d/dataset.hpp"
#include "inst4d/metrics.hpp"
#include "inst4d/serialization.hpp"

namespace inst4d {

struct EvalOptions {
    // "test" (manifest test views; falls back to all when none designated),
    // "train", or "all".
    std::string views = "test";
    int threads = 1;
    bool dump_features = false;
    std::filesystem::path dump_dir;
};

struct EvalResult {
    SceneMetrics metrics;
    std::vector<double> traj_per_timestep;
};

// Renders the checkpoint over the evaluated views/timesteps, applies
// test-time label alignment per view, and computes the full metric battery.
EvalResult evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& ds,
                               const std::string& scene_name, const EvalOptions& opts);

}  // namespace inst4d
