#pragma once

#include <Eigen/Core>

#include "inst4d/rng.hpp"

namespace inst4d {

// Per-pixel feature -> instance-logit decoder: affine, nonlinearity, affine.
// Output dimension is K+1 (K instances plus a background channel).
struct IdentityDecoder {
    enum class Activation { kTanh, kRelu };

    Eigen::MatrixXd w1;  // hidden x C
    Eigen::VectorXd b1;  // hidden
    Eigen::MatrixXd w2;  // (K+1) x hidden
    Eigen::VectorXd b2;  // K+1
    Activation activation = Activation::kTanh;

    int in_dim() const { return static_cast<int>(w1.cols()); }
    int hidden_dim() const { return static_cast<int>(w1.rows()); }
    int out_dim() const { return static_cast<int>(w2.rows()); }

    static IdentityDecoder seeded(int in_dim, int hidden_dim, int out_dim, Rng& rng);

    // Exact passthrough: logits == features (relu split trick). Requires
    // hidden = 2 * dim; used for oracle models whose features are labels.
    static IdentityDecoder exact_identity(int dim, const Eigen::VectorXd& output_bias);
};

struct DecoderTape {
    Eigen::MatrixXd pre;     // hidden x P, pre-activation
    Eigen::MatrixXd hidden;  // hidden x P, post-activation
};

struct DecoderGrads {
    Eigen::MatrixXd dw1, dw2;
    Eigen::VectorXd db1, db2;

    void init_like(const IdentityDecoder& d);
    void accumulate(const DecoderGrads& o, double scale);
    bool all_finite() const;
};

// features: C x P -> logits (K+1) x P. Pixels are independent columns.
Eigen::MatrixXd decode_identity(const IdentityDecoder& d, const Eigen::MatrixXd& features,
                                DecoderTape* tape = nullptr);

// Backward pass: accumulates parameter gradients into `grads` (if non-null)
// and returns dL/dfeatures (if want_dfeatures).
Eigen::MatrixXd decode_identity_backward(const IdentityDecoder& d, const Eigen::MatrixXd& features,
                                         const DecoderTape& tape, const Eigen::MatrixXd& dlogits,
                                         DecoderGrads* grads, bool want_dfeatures);

}  // namespace inst4d
