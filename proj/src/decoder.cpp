#include "inst4d/decoder.hpp"

#include <cmath>
#include <stdexcept>

namespace inst4d {

IdentityDecoder IdentityDecoder::seeded(int in_dim, int hidden_dim, int out_dim, Rng& rng) {
    IdentityDecoder d;
    auto fill = [&rng](Eigen::MatrixXd& m, double scale) {
        for (int c = 0; c < m.cols(); ++c)
            for (int r = 0; r < m.rows(); ++r) m(r, c) = scale * rng.next_normal();
    };
    d.w1.resize(hidden_dim, in_dim);
    d.w2.resize(out_dim, hidden_dim);
    fill(d.w1, std::sqrt(2.0 / in_dim));
    fill(d.w2, std::sqrt(2.0 / hidden_dim));
    d.b1 = Eigen::VectorXd::Zero(hidden_dim);
    d.b2 = Eigen::VectorXd::Zero(out_dim);
    return d;
}

IdentityDecoder IdentityDecoder::exact_identity(int dim, const Eigen::VectorXd& output_bias) {
    if (output_bias.size() != dim) {
        throw std::invalid_argument("exact_identity: bias size must equal dim");
    }
    IdentityDecoder d;
    d.activation = Activation::kRelu;
    d.w1 = Eigen::MatrixXd::Zero(2 * dim, dim);
    d.w1.topRows(dim) = Eigen::MatrixXd::Identity(dim, dim);
    d.w1.bottomRows(dim) = -Eigen::MatrixXd::Identity(dim, dim);
    d.b1 = Eigen::VectorXd::Zero(2 * dim);
    d.w2 = Eigen::MatrixXd::Zero(dim, 2 * dim);
    d.w2.leftCols(dim) = Eigen::MatrixXd::Identity(dim, dim);
    d.w2.rightCols(dim) = -Eigen::MatrixXd::Identity(dim, dim);
    d.b2 = output_bias;
    return d;
}

void DecoderGrads::init_like(const IdentityDecoder& d) {
    dw1 = Eigen::MatrixXd::Zero(d.w1.rows(), d.w1.cols());
    dw2 = Eigen::MatrixXd::Zero(d.w2.rows(), d.w2.cols());
    db1 = Eigen::VectorXd::Zero(d.b1.size());
    db2 = Eigen::VectorXd::Zero(d.b2.size());
}

void DecoderGrads::accumulate(const DecoderGrads& o, double scale) {
    dw1 += scale * o.dw1;
    dw2 += scale * o.dw2;
    db1 += scale * o.db1;
    db2 += scale * o.db2;
}

bool DecoderGrads::all_finite() const {
    return dw1.allFinite() && dw2.allFinite() && db1.allFinite() && db2.allFinite();
}

Eigen::MatrixXd decode_identity(const IdentityDecoder& d, const Eigen::MatrixXd& features,
                                DecoderTape* tape) {
    if (features.rows() != d.in_dim()) {
        throw std::invalid_argument("decode_identity: feature dimension mismatch");
    }
    Eigen::MatrixXd pre = (d.w1 * features).colwise() + d.b1;
    Eigen::MatrixXd hidden;
    if (d.activation == IdentityDecoder::Activation::kTanh) {
        hidden = pre.array().tanh().matrix();
    } else {
        hidden = pre.cwiseMax(0.0);
    }
    Eigen::MatrixXd logits = (d.w2 * hidden).colwise() + d.b2;
    if (tape) {
        tape->pre = std::move(pre);
        tape->hidden = hidden;
    }
    return logits;
}

Eigen::MatrixXd decode_identity_backward(const IdentityDecoder& d, const Eigen::MatrixXd& features,
                                         const DecoderTape& tape, const Eigen::MatrixXd& dlogits,
                                         DecoderGrads* grads, bool want_dfeatures) {
    if (dlogits.rows() != d.out_dim() || dlogits.cols() != features.cols()) {
        throw std::invalid_argument("decode_identity_backward: dlogits shape mismatch");
    }
    Eigen::MatrixXd dhidden = d.w2.transpose() * dlogits;
    Eigen::MatrixXd dpre;
    if (d.activation == IdentityDecoder::Activation::kTanh) {
        dpre = dhidden.cwiseProduct(
            (1.0 - tape.hidden.array().square()).matrix());
    } else {
        dpre = dhidden.cwiseProduct((tape.pre.array() > 0.0).cast<double>().matrix());
    }
    if (grads) {
        grads->dw2 += dlogits * tape.hidden.transpose();
        grads->db2 += dlogits.rowwise().sum();
        grads->dw1 += dpre * features.transpose();
        grads->db1 += dpre.rowwise().sum();
    }
    if (!want_dfeatures) return {};
    return d.w1.transpose() * dpre;
}

}  // namespace inst4d
