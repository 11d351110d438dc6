// Test-only reference implementations, independent of the library code paths
// they check.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace oracles {

// Central finite differences of a scalar function of a flat parameter vector.
inline Eigen::VectorXd finite_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                         const Eigen::VectorXd& x, double h = 1e-5) {
    Eigen::VectorXd g(x.size());
    for (int i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

// Max relative error between analytic and finite-difference gradients, with a
// small absolute floor so matched near-zero entries compare equal.
inline double max_rel_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd,
                            double floor = 1e-6) {
    double worst = 0.0;
    for (int i = 0; i < analytic.size(); ++i) {
        double denom = std::max({floor, std::abs(analytic[i]), std::abs(fd[i])});
        worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
    }
    return worst;
}

// Exhaustive minimum-cost assignment; returns the lexicographically smallest
// optimal row->column vector.
inline std::vector<int> brute_force_assignment(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (int i = 0; i < n; ++i) c += cost(i, perm[static_cast<size_t>(i)]);
        if (c < best_cost - 1e-12 ||
            (std::abs(c - best_cost) <= 1e-12 && perm < best)) {
            best_cost = c;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// Scripted row/column normalization loop run to convergence (independent of
// the implementation's fixed-iteration layer).
inline Eigen::MatrixXd sinkhorn_reference(const Eigen::MatrixXd& z, double tol = 1e-14,
                                          int max_iters = 10000) {
    Eigen::MatrixXd s = z.array().exp();
    for (int it = 0; it < max_iters; ++it) {
        for (int i = 0; i < s.rows(); ++i) s.row(i) /= s.row(i).sum();
        for (int j = 0; j < s.cols(); ++j) s.col(j) /= s.col(j).sum();
        double dev = 0.0;
        for (int i = 0; i < s.rows(); ++i) dev = std::max(dev, std::abs(s.row(i).sum() - 1.0));
        if (dev < tol) break;
    }
    return s;
}

// Rotation about +z by `deg` degrees as a 3x3 matrix.
inline Eigen::Matrix3d rot_z(double deg) {
    double r = deg * M_PI / 180.0;
    Eigen::Matrix3d m;
    m << std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0, 0, 0, 1;
    return m;
}

}  // namespace oracles
