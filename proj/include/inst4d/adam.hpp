#pragma once

#include <Eigen/Core>
#include <cmath>

namespace inst4d {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Eigen::ArrayXd m, v;
    int64_t t = 0;

    void init(Eigen::Index n) {
        m = Eigen::ArrayXd::Zero(n);
        v = Eigen::ArrayXd::Zero(n);
        t = 0;
    }
};

// Bias-corrected Adam update in place. A non-finite gradient skips the step
// entirely (moments and t untouched) and returns false.
inline bool adam_step(Eigen::ArrayXd& params, const Eigen::ArrayXd& grads, AdamState& state,
                      const AdamConfig& cfg) {
    if (!grads.allFinite()) return false;
    state.t += 1;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads.square();
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    params -= cfg.lr * (state.m / c1) / ((state.v / c2).sqrt() + cfg.eps);
    return true;
}

}  // namespace inst4d
