#pragma once

#include <Eigen/Core>
#include <vector>

#include "inst4d/quat.hpp"

namespace inst4d {

// Scene as a flat collection of anisotropic Gaussians. Opacity is stored as a
// logit and scale as a log so the (0,1) and (>0) constraints hold by
// construction. Means (and derived rotations) are per-timestep; timestep 0 is
// learnable, later steps are materialized by the motion scaffold during
// sequential optimization.
struct GaussianSet {
    int num_instances = 0;  // K; instance labels live in [0, K-1], K = unassigned

    std::vector<Vec3> colors;           // [0,1]^3, projected after optimizer steps
    std::vector<double> opacity_logits; // opacity = sigmoid(logit)
    std::vector<Vec3> log_scales;       // scale = exp(log_scale)
    std::vector<Quat> rotations;        // unit, orientation at t = 0
    Eigen::MatrixXd features;           // C x N identity features
    std::vector<int> labels;            // instance id or unassigned_label()

    std::vector<std::vector<Vec3>> means;        // [t][i]
    std::vector<std::vector<Quat>> rotations_t;  // [t][i]; [0] mirrors `rotations`

    int size() const { return static_cast<int>(colors.size()); }
    int feature_dim() const { return static_cast<int>(features.rows()); }
    int timesteps() const { return static_cast<int>(means.size()); }
    int unassigned_label() const { return num_instances; }

    double opacity(int i) const { return 1.0 / (1.0 + std::exp(-opacity_logits[static_cast<size_t>(i)])); }
    Vec3 scale(int i) const {
        const Vec3& l = log_scales[static_cast<size_t>(i)];
        return {std::exp(l[0]), std::exp(l[1]), std::exp(l[2])};
    }

    // Ensure means/rotations exist for timesteps [0, t]; new steps copy t = 0.
    void materialize_through(int t) {
        while (timesteps() <= t) {
            means.push_back(means.empty() ? std::vector<Vec3>(static_cast<size_t>(size()), Vec3::Zero())
                                          : means[0]);
            rotations_t.push_back(rotations_t.empty() ? rotations : rotations_t[0]);
        }
    }

    void resize(int n, int feature_channels) {
        colors.assign(static_cast<size_t>(n), Vec3::Zero());
        opacity_logits.assign(static_cast<size_t>(n), 0.0);
        log_scales.assign(static_cast<size_t>(n), Vec3::Zero());
        rotations.assign(static_cast<size_t>(n), Quat::identity());
        features = Eigen::MatrixXd::Zero(feature_channels, n);
        labels.assign(static_cast<size_t>(n), 0);
        means.assign(1, std::vector<Vec3>(static_cast<size_t>(n), Vec3::Zero()));
        rotations_t.assign(1, rotations);
    }
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace inst4d
