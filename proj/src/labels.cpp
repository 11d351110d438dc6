#include "inst4d/labels.hpp"

#include <stdexcept>

namespace inst4d {

ActiveViewSet ActiveViewSet::with_reference(int ref, double threshold) {
    ActiveViewSet s;
    s.reference_view = ref;
    s.threshold = threshold;
    s.active.insert(ref);
    return s;
}

ActiveViewSet update_active_set(const ActiveViewSet& state, const std::vector<double>& scores,
                                const std::vector<bool>& eligible) {
    ActiveViewSet next = state;
    for (size_t v = 0; v < scores.size(); ++v) {
        bool ok = eligible.empty() || (v < eligible.size() && eligible[v]);
        if (ok && scores[v] > state.threshold) next.active.insert(static_cast<int>(v));
    }
    return next;
}

Eigen::MatrixXd remap_logits(const Eigen::MatrixXd& s, const Eigen::MatrixXd& canonical_logits) {
    const int k = static_cast<int>(s.rows());
    if (s.cols() != k || canonical_logits.rows() != k + 1) {
        throw std::invalid_argument("remap_logits: shape mismatch");
    }
    Eigen::MatrixXd local(canonical_logits.rows(), canonical_logits.cols());
    local.topRows(k) = s * canonical_logits.topRows(k);
    local.row(k) = canonical_logits.row(k);
    return local;
}

void remap_logits_backward(const Eigen::MatrixXd& s, const Eigen::MatrixXd& canonical_logits,
                           const Eigen::MatrixXd& dlocal, Eigen::MatrixXd* dcanonical,
                           Eigen::MatrixXd* ds) {
    const int k = static_cast<int>(s.rows());
    if (dlocal.rows() != k + 1 || dlocal.cols() != canonical_logits.cols()) {
        throw std::invalid_argument("remap_logits_backward: shape mismatch");
    }
    if (dcanonical) {
        dcanonical->resize(canonical_logits.rows(), canonical_logits.cols());
        dcanonical->topRows(k) = s.transpose() * dlocal.topRows(k);
        dcanonical->row(k) = dlocal.row(k);
    }
    if (ds) *ds = dlocal.topRows(k) * canonical_logits.topRows(k).transpose();
}

Eigen::MatrixXd softmax_channels(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd probs(logits.rows(), logits.cols());
    for (int p = 0; p < logits.cols(); ++p) {
        Eigen::ArrayXd col = (logits.col(p).array() - logits.col(p).maxCoeff()).exp();
        probs.col(p) = (col / col.sum()).matrix();
    }
    return probs;
}

CeResult instance_ce_loss(const Eigen::MatrixXd& probs, const LabelMap& local_labels,
                          const std::vector<uint8_t>& mask, bool background_as_class) {
    const int channels = static_cast<int>(probs.rows());
    const int k = channels - 1;
    const auto pixels = local_labels.pixel_count();
    if (static_cast<size_t>(probs.cols()) != pixels) {
        throw std::invalid_argument("instance_ce_loss: probability map size mismatch");
    }
    if (!mask.empty() && mask.size() != pixels) {
        throw std::invalid_argument("instance_ce_loss: mask size mismatch");
    }

    CeResult res;
    res.dlogits = Eigen::MatrixXd::Zero(channels, static_cast<int>(pixels));
    int count = 0;
    double loss = 0.0;
    constexpr double kProbFloor = 1e-12;
    for (size_t p = 0; p < pixels; ++p) {
        if (!mask.empty() && !mask[p]) continue;
        uint8_t lab = local_labels.labels[p];
        int cls;
        if (lab == LabelMap::kUnlabeled) {
            if (!background_as_class) continue;
            cls = k;
        } else {
            if (lab >= k) throw std::invalid_argument("instance_ce_loss: label id out of range");
            cls = lab;
        }
        ++count;
        loss -= std::log(std::max(probs(cls, static_cast<int>(p)), kProbFloor));
        res.dlogits.col(static_cast<int>(p)) = probs.col(static_cast<int>(p));
        res.dlogits(cls, static_cast<int>(p)) -= 1.0;
    }
    if (count == 0) {
        res.no_supervision = true;
        res.dlogits.setZero();
        return res;
    }
    res.loss = loss / count;
    res.dlogits /= static_cast<double>(count);
    res.supervised_pixels = count;
    return res;
}

double permutation_confidence(const LabelMap& rendered_canonical, const LabelMap& local,
                              const std::vector<int>& perm) {
    if (rendered_canonical.width != local.width || rendered_canonical.height != local.height) {
        throw std::invalid_argument("permutation_confidence: dimension mismatch");
    }
    size_t joint = 0, agree = 0;
    for (size_t p = 0; p < local.pixel_count(); ++p) {
        uint8_t r = rendered_canonical.labels[p];
        uint8_t l = local.labels[p];
        if (r == LabelMap::kUnlabeled || l == LabelMap::kUnlabeled) continue;
        ++joint;
        if (r < perm.size() && perm[r] == static_cast<int>(l)) ++agree;
    }
    return joint == 0 ? 0.0 : static_cast<double>(agree) / static_cast<double>(joint);
}

std::vector<uint8_t> unseen_mask(const LabelMap& rendered_canonical, const std::vector<int>& perm,
                                 const LabelMap& local) {
    if (rendered_canonical.width != local.width || rendered_canonical.height != local.height) {
        throw std::invalid_argument("unseen_mask: dimension mismatch");
    }
    std::vector<char> present(perm.size(), 0);
    for (uint8_t l : local.labels) {
        if (l != LabelMap::kUnlabeled && l < present.size()) present[l] = 1;
    }
    std::vector<uint8_t> mask(rendered_canonical.pixel_count(), 1);
    for (size_t p = 0; p < mask.size(); ++p) {
        uint8_t r = rendered_canonical.labels[p];
        if (r == LabelMap::kUnlabeled || r >= perm.size()) continue;
        int local_id = perm[r];
        if (local_id >= 0 && local_id < static_cast<int>(present.size()) &&
            !present[static_cast<size_t>(local_id)]) {
            mask[p] = 0;
        }
    }
    return mask;
}

Eigen::MatrixXd label_cooccurrence(const LabelMap& rendered_canonical, const LabelMap& local,
                                   int num_instances) {
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(num_instances, num_instances);
    for (size_t p = 0; p < local.pixel_count(); ++p) {
        uint8_t r = rendered_canonical.labels[p];
        uint8_t l = local.labels[p];
        if (r == LabelMap::kUnlabeled || l == LabelMap::kUnlabeled) continue;
        if (r < num_instances && l < num_instances) counts(l, r) += 1.0;
    }
    return counts;
}

}  // namespace inst4d
