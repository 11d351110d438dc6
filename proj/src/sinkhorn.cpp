#include "inst4d/sinkhorn.hpp"

#include <stdexcept>

#include "inst4d/assignment.hpp"

namespace inst4d {

void PermutationLatent::clip() {
    z = z.cwiseMax(-kLatentClip).cwiseMin(kLatentClip);
}

namespace {

void check_input(const Eigen::MatrixXd& z, int iters) {
    if (z.rows() != z.cols() || z.rows() < 1) {
        throw std::invalid_argument("sinkhorn: latent must be square and non-empty");
    }
    if (iters < 1) throw std::invalid_argument("sinkhorn: iters must be >= 1");
    if (!z.allFinite()) throw std::invalid_argument("sinkhorn: latent has non-finite entries");
}

void normalize_rows(Eigen::MatrixXd& s) {
    for (int i = 0; i < s.rows(); ++i) {
        double sum = s.row(i).sum();
        if (sum <= 0.0) throw std::runtime_error("sinkhorn: zero row sum");
        s.row(i) /= sum;
    }
}

void normalize_cols(Eigen::MatrixXd& s) {
    for (int j = 0; j < s.cols(); ++j) {
        double sum = s.col(j).sum();
        if (sum <= 0.0) throw std::runtime_error("sinkhorn: zero column sum");
        s.col(j) /= sum;
    }
}

// dL/dX for Y = X / rowsum(X): dX_ij = (dY_ij - sum_k dY_ik Y_ik) / r_i.
Eigen::MatrixXd row_norm_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                  const Eigen::MatrixXd& dy) {
    Eigen::MatrixXd dx(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i) {
        double r = x.row(i).sum();
        double inner = dy.row(i).dot(y.row(i));
        dx.row(i) = (dy.row(i).array() - inner).matrix() / r;
    }
    return dx;
}

Eigen::MatrixXd col_norm_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                  const Eigen::MatrixXd& dy) {
    Eigen::MatrixXd dx(x.rows(), x.cols());
    for (int j = 0; j < x.cols(); ++j) {
        double c = x.col(j).sum();
        double inner = dy.col(j).dot(y.col(j));
        dx.col(j) = (dy.col(j).array() - inner).matrix() / c;
    }
    return dx;
}

}  // namespace

Eigen::MatrixXd sinkhorn_normalize(const Eigen::MatrixXd& z, int iters) {
    check_input(z, iters);
    Eigen::MatrixXd s = z.array().exp();
    for (int it = 0; it < iters; ++it) {
        normalize_rows(s);
        normalize_cols(s);
    }
    return s;
}

Eigen::MatrixXd sinkhorn_backward(const Eigen::MatrixXd& z, int iters,
                                  const Eigen::MatrixXd& upstream) {
    check_input(z, iters);
    if (upstream.rows() != z.rows() || upstream.cols() != z.cols()) {
        throw std::invalid_argument("sinkhorn_backward: upstream shape mismatch");
    }
    // Replay the forward pass, keeping each normalization's input and output.
    std::vector<Eigen::MatrixXd> stages;
    stages.reserve(static_cast<size_t>(2 * iters) + 1);
    Eigen::MatrixXd s = z.array().exp();
    stages.push_back(s);
    for (int it = 0; it < iters; ++it) {
        normalize_rows(s);
        stages.push_back(s);
        normalize_cols(s);
        stages.push_back(s);
    }
    Eigen::MatrixXd grad = upstream;
    for (int it = iters - 1; it >= 0; --it) {
        const Eigen::MatrixXd& col_in = stages[static_cast<size_t>(2 * it) + 1];
        const Eigen::MatrixXd& col_out = stages[static_cast<size_t>(2 * it) + 2];
        grad = col_norm_backward(col_in, col_out, grad);
        const Eigen::MatrixXd& row_in = stages[static_cast<size_t>(2 * it)];
        const Eigen::MatrixXd& row_out = stages[static_cast<size_t>(2 * it) + 1];
        grad = row_norm_backward(row_in, row_out, grad);
    }
    return grad.cwiseProduct(stages[0]);  // through exp
}

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd s(z.rows(), z.cols());
    for (int i = 0; i < z.rows(); ++i) {
        Eigen::ArrayXd row = (z.row(i).array() - z.row(i).maxCoeff()).exp();
        s.row(i) = (row / row.sum()).matrix();
    }
    return s;
}

Eigen::MatrixXd row_softmax_backward(const Eigen::MatrixXd& z, const Eigen::MatrixXd& upstream) {
    Eigen::MatrixXd s = row_softmax(z);
    Eigen::MatrixXd dz(z.rows(), z.cols());
    for (int i = 0; i < z.rows(); ++i) {
        double inner = upstream.row(i).dot(s.row(i));
        dz.row(i) = s.row(i).cwiseProduct((upstream.row(i).array() - inner).matrix());
    }
    return dz;
}

std::vector<int> harden(const Eigen::MatrixXd& s) { return hungarian_assign(-s); }

Eigen::MatrixXd permutation_matrix(const std::vector<int>& perm) {
    const int n = static_cast<int>(perm.size());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) m(i, perm[static_cast<size_t>(i)]) = 1.0;
    return m;
}

}  // namespace inst4d
