#pragma once

#include <optional>
#include <string>
#include <vector>

#include "inst4d/dataset.hpp"
#include "inst4d/image.hpp"

namespace inst4d {

// Instance-weighted mIoU: per-instance IoU averaged with weights proportional
// to ground-truth pixel counts; background excluded. Labels must already be
// aligned. Empty ground truth -> nullopt (UNDEFINED).
std::optional<double> miou_instance(const LabelMap& pred, const LabelMap& gt);

// Labeled-pixel accuracy over ground-truth instance pixels.
std::optional<double> macc(const LabelMap& pred, const LabelMap& gt);

// Binary foreground/background IoU (foreground = any instance label).
std::optional<double> miou_dynamic(const LabelMap& pred, const LabelMap& gt);

// Hungarian assignment maximizing pixel overlap accumulated over a stream of
// (pred, gt) map pairs; returns pred-label -> gt-label.
std::vector<int> test_time_align(const std::vector<const LabelMap*>& pred,
                                 const std::vector<const LabelMap*>& gt, int num_instances);

LabelMap apply_label_permutation(const LabelMap& map, const std::vector<int>& perm);

// 10 log10(1 / MSE) on [0,1] images; nullopt flags an exact match (INFINITE).
std::optional<double> psnr(const Image& img, const Image& ref);

// Fraction of views whose learned permutation matches the ground truth
// exactly. Both arguments map canonical -> local ids.
double perm_accuracy(const std::vector<std::vector<int>>& learned,
                     const std::vector<std::vector<int>>& gt);

// RMS position error of base trajectories against ground-truth rigid units.
// Each track is matched to the unit of the nearest same-instance seed point
// at t = 0 after applying `instance_alignment` (learned -> gt instance ids).
struct TrajectoryError {
    double rmse = 0.0;
    std::vector<double> per_timestep;  // RMS over bases at each t
};
TrajectoryError traj_rmse(const std::vector<RigidUnit>& tracks,
                          const std::vector<RigidUnit>& gt_units,
                          const std::vector<SeedPoint>& seeds,
                          const std::vector<int>& instance_alignment);

struct SceneMetrics {
    std::string name;
    std::optional<double> miou_instance;
    std::optional<double> macc;
    std::optional<double> miou_dynamic;
    std::optional<double> psnr_db;  // nullopt = INFINITE (exact match)
    double ssim = 0.0;
    std::optional<double> traj_rmse;
    std::optional<double> perm_accuracy;
};

struct MetricsBundle {
    uint64_t seed = 0;
    std::string config_hash;
    std::vector<SceneMetrics> scenes;
};

// FNV-1a over a string; used to stamp resolved configs into reports.
std::string fnv1a_hex(const std::string& text);

}  // namespace inst4d
