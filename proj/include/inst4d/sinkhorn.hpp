#pragma once

#include <Eigen/Core>
#include <vector>

namespace inst4d {

// Learnable per-video permutation latent. Entries are clipped to
// [-kLatentClip, kLatentClip] after each optimizer step so exp stays
// representable.
struct PermutationLatent {
    static constexpr double kLatentClip = 30.0;

    Eigen::MatrixXd z;
    int video_id = -1;

    void clip();
};

// `iters` alternating row-then-column normalizations of exp(z).
// Throws on non-finite input or a zero row/column sum.
Eigen::MatrixXd sinkhorn_normalize(const Eigen::MatrixXd& z, int iters);

// dL/dz by reverse accumulation through the unrolled iterations.
Eigen::MatrixXd sinkhorn_backward(const Eigen::MatrixXd& z, int iters,
                                  const Eigen::MatrixXd& upstream);

// Row-wise softmax and its backward; the permutation layer used when Sinkhorn
// normalization is ablated.
Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& z);
Eigen::MatrixXd row_softmax_backward(const Eigen::MatrixXd& z, const Eigen::MatrixXd& upstream);

// Discrete matching implied by a soft permutation: hungarian on cost = -s.
// Rows index local labels, columns canonical labels.
std::vector<int> harden(const Eigen::MatrixXd& s);

// Permutation matrix (rows = local, cols = canonical) for a row->column map.
Eigen::MatrixXd permutation_matrix(const std::vector<int>& perm);

}  // namespace inst4d
