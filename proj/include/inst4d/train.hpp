#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "inst4d/adam.hpp"
#include "inst4d/dataset.hpp"
#include "inst4d/decoder.hpp"
#include "inst4d/labels.hpp"
#include "inst4d/report.hpp"
#include "inst4d/scaffold.hpp"
#include "inst4d/serialization.hpp"

namespace inst4d {

struct LearningRates {
    double mean = 2e-3;
    double color = 1e-2;
    double opacity = 5e-2;
    double scale = 5e-3;
    double rotation = 2e-3;
    double feature = 1e-2;
    double decoder = 2e-3;
    double latent = 3e-2;
    double traj_rot = 2e-3;
    double traj_trans = 2e-3;
};

struct AblationFlags {
    bool no_sinkhorn = false;
    bool no_track_masking = false;
    bool no_progressive = false;
    bool no_instance_grouping = false;
    bool no_motion_bases = false;
    bool straight_through = false;
};

struct TrainConfig {
    int stage1_steps = 3000;
    int steps_per_timestep = 120;
    double lambda_l1 = 0.8;
    double lambda_ssim = 0.2;
    double s_th = 0.9;
    int activation_interval = 100;
    int sinkhorn_iters = 20;
    int feature_dim = 16;
    int decoder_hidden = 32;
    int bases_per_instance = 16;
    int knn_gaussian = 4;
    int knn_base_graph = 6;
    double w_coord = 1.0, w_len = 1.0, w_iso = 1.0;
    bool finetune_appearance = false;
    uint64_t seed = 1;
    int threads = 1;
    int checkpoint_interval = 0;  // 0: final model only
    LearningRates lr;
    AblationFlags ablation;

    void validate() const;
    std::string to_json_string() const;               // resolved, deterministic
    static TrainConfig from_json_file(const std::filesystem::path& path);
    void apply_json_overrides(const std::string& json_text);
};

struct TrainState {
    TrainConfig config;
    GaussianSet gaussians;
    IdentityDecoder decoder;
    std::vector<Eigen::MatrixXd> latents;  // per view; reference stays identity
    ActiveViewSet active;
    Scaffold scaffold;
    bool has_scaffold = false;
    std::vector<LossRow> log;
    int64_t global_step = 0;
    int skipped_steps = 0;
    std::map<std::string, AdamState> adam;
};

// Per-step diagnostics, mainly for tests of the gradient gating rules.
struct Stage1StepInfo {
    double ce = 0.0, l1 = 0.0, ssim = 0.0, total = 0.0;
    std::vector<double> view_ce;
    std::vector<double> view_feature_grad_norm;  // zero for gated views
    std::vector<double> view_latent_grad_norm;
};

void init_stage1(TrainState& state, const Dataset& ds);
Stage1StepInfo stage1_step(TrainState& state, const Dataset& ds);
void run_stage1(TrainState& state, const Dataset& ds,
                const std::filesystem::path* checkpoint_root = nullptr);

// Assigns each Gaussian the argmax instance of its decoded feature;
// background-winning Gaussians become unassigned (static).
void label_gaussians(GaussianSet& g, const IdentityDecoder& decoder);

void init_stage2(TrainState& state, const Dataset& ds);
void run_stage2(TrainState& state, const Dataset& ds,
                const std::filesystem::path* checkpoint_root = nullptr);

Checkpoint make_checkpoint(const TrainState& state, const Dataset& ds);

enum class TrainStage { kInit, kSeq, kAll };

// Full training driver: writes config.json, log.csv and model/ under run_dir.
// kSeq requires an existing stage-1 model in run_dir.
void run_train(const std::filesystem::path& data_dir, const std::filesystem::path& run_dir,
               TrainConfig config, TrainStage stage);

}  // namespace inst4d
