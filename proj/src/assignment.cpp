#include "inst4d/assignment.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace inst4d {

namespace {

// Jonker-Volgenant shortest augmenting path; returns the optimal total cost.
// rowsol[i] receives the column assigned to row i.
double jv_solve(const Eigen::MatrixXd& cost, std::vector<int>* rowsol_out) {
    const int n = static_cast<int>(cost.rows());
    std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1,
                                 std::numeric_limits<double>::infinity());
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            int i0 = p[static_cast<size_t>(j0)], j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] -
                             v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> rowsol(static_cast<size_t>(n), -1);
    double total = 0.0;
    for (int j = 1; j <= n; ++j) {
        if (p[static_cast<size_t>(j)]) {
            rowsol[static_cast<size_t>(p[static_cast<size_t>(j)]) - 1] = j - 1;
            total += cost(p[static_cast<size_t>(j)] - 1, j - 1);
        }
    }
    if (rowsol_out) *rowsol_out = rowsol;
    return total;
}

}  // namespace

std::vector<int> hungarian_assign(const Eigen::MatrixXd& cost) {
    if (cost.rows() != cost.cols() || cost.rows() == 0) {
        throw std::invalid_argument("hungarian_assign: cost matrix must be square and non-empty");
    }
    if (!cost.allFinite()) {
        throw std::invalid_argument("hungarian_assign: cost matrix has non-finite entries");
    }
    const int n = static_cast<int>(cost.rows());
    const double optimal = jv_solve(cost, nullptr);
    const double tol = 1e-9 * (1.0 + std::abs(optimal));

    // Fix rows in order; each takes the smallest column that still allows an
    // optimal completion of the remaining rows.
    std::vector<int> result(static_cast<size_t>(n), -1);
    std::vector<int> free_cols(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) free_cols[static_cast<size_t>(j)] = j;
    double prefix = 0.0;
    for (int i = 0; i < n; ++i) {
        const int m = static_cast<int>(free_cols.size());
        for (int cand = 0; cand < m; ++cand) {
            int j = free_cols[static_cast<size_t>(cand)];
            double rest = 0.0;
            if (i + 1 < n) {
                Eigen::MatrixXd sub(n - i - 1, m - 1);
                for (int r = i + 1; r < n; ++r) {
                    int cc = 0;
                    for (int k = 0; k < m; ++k) {
                        if (k == cand) continue;
                        sub(r - i - 1, cc++) = cost(r, free_cols[static_cast<size_t>(k)]);
                    }
                }
                rest = jv_solve(sub, nullptr);
            }
            if (prefix + cost(i, j) + rest <= optimal + tol) {
                result[static_cast<size_t>(i)] = j;
                prefix += cost(i, j);
                free_cols.erase(free_cols.begin() + cand);
                break;
            }
        }
        if (result[static_cast<size_t>(i)] < 0) {
            throw std::logic_error("hungarian_assign: no optimal completion found");
        }
    }
    return result;
}

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& perm) {
    double total = 0.0;
    for (size_t i = 0; i < perm.size(); ++i) total += cost(static_cast<int>(i), perm[i]);
    return total;
}

bool is_permutation(const std::vector<int>& perm) {
    std::vector<char> seen(perm.size(), 0);
    for (int p : perm) {
        if (p < 0 || p >= static_cast<int>(perm.size()) || seen[static_cast<size_t>(p)]) return false;
        seen[static_cast<size_t>(p)] = 1;
    }
    return true;
}

std::vector<int> invert_permutation(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size(), -1);
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    return inv;
}

}  // namespace inst4d
