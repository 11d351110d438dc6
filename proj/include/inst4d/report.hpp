#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "inst4d/metrics.hpp"

namespace inst4d {

// One training-log row, mirrored in log.csv.
struct LossRow {
    int stage = 1;
    int64_t step = 0;
    int timestep = 0;
    double ce = 0.0, l1 = 0.0, ssim = 0.0;
    double coord = 0.0, len = 0.0, iso = 0.0;
    double total = 0.0;
    int active_views = 0;
};

void write_log_csv(const std::vector<LossRow>& rows, const std::filesystem::path& path);
std::vector<LossRow> read_log_csv(const std::filesystem::path& path);

// Writes metrics.json, metrics.csv (one row per scene) and self-contained SVG
// plots (loss history when a log is given, per-timestep trajectory error when
// available). Byte-deterministic for identical inputs.
void emit_report(const MetricsBundle& bundle, const std::filesystem::path& out_dir,
                 const std::vector<LossRow>* log = nullptr,
                 const std::vector<double>* traj_per_timestep = nullptr);

void save_metrics_json(const MetricsBundle& bundle, const std::filesystem::path& path);
MetricsBundle load_metrics_json(const std::filesystem::path& path);

}  // namespace inst4d
