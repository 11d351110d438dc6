#pragma once

#include <filesystem>
#include <vector>

#include "inst4d/dataset.hpp"
#include "inst4d/decoder.hpp"
#include "inst4d/gaussians.hpp"
#include "inst4d/scaffold.hpp"
#include "inst4d/sinkhorn.hpp"

namespace inst4d {

// Per-view permutation entry written to permutations.json.
struct PermutationRecord {
    int view = -1;
    Eigen::MatrixXd z;                  // raw latent, row-major in the file
    std::vector<int> local_to_canonical;  // hardened assignment
    double confidence = 0.0;
};

struct Checkpoint {
    GaussianSet gaussians;
    IdentityDecoder decoder;
    std::vector<PermutationRecord> permutations;
    Scaffold scaffold;  // empty before stage 2
    bool has_scaffold = false;
};

// A checkpoint directory holds gaussians.json, decoder.json,
// permutations.json and, once stage 2 ran, scaffold.json plus
// trajectories.bin/.json. Writing is byte-deterministic.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace inst4d
