#include "inst4d/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "inst4d/assignment.hpp"

namespace inst4d {

namespace {

void check_dims(const LabelMap& a, const LabelMap& b) {
    if (a.width != b.width || a.height != b.height) {
        throw std::invalid_argument("metrics: label map dimension mismatch");
    }
}

}  // namespace

std::optional<double> miou_instance(const LabelMap& pred, const LabelMap& gt) {
    check_dims(pred, gt);
    constexpr int kMax = 256;
    std::vector<int64_t> inter(kMax, 0), pred_count(kMax, 0), gt_count(kMax, 0);
    for (size_t p = 0; p < gt.labels.size(); ++p) {
        uint8_t pl = pred.labels[p], gl = gt.labels[p];
        if (pl != LabelMap::kUnlabeled) ++pred_count[pl];
        if (gl != LabelMap::kUnlabeled) {
            ++gt_count[gl];
            if (pl == gl) ++inter[gl];
        }
    }
    int64_t total_gt = 0;
    for (int k = 0; k < kMax - 1; ++k) total_gt += gt_count[static_cast<size_t>(k)];
    if (total_gt == 0) return std::nullopt;
    double result = 0.0;
    for (int k = 0; k < kMax - 1; ++k) {
        if (gt_count[static_cast<size_t>(k)] == 0) continue;
        int64_t uni = gt_count[static_cast<size_t>(k)] + pred_count[static_cast<size_t>(k)] -
                      inter[static_cast<size_t>(k)];
        double iou = uni == 0 ? 0.0
                              : static_cast<double>(inter[static_cast<size_t>(k)]) /
                                    static_cast<double>(uni);
        result += iou * static_cast<double>(gt_count[static_cast<size_t>(k)]) /
                  static_cast<double>(total_gt);
    }
    return result;
}

std::optional<double> macc(const LabelMap& pred, const LabelMap& gt) {
    check_dims(pred, gt);
    int64_t labeled = 0, correct = 0;
    for (size_t p = 0; p < gt.labels.size(); ++p) {
        if (gt.labels[p] == LabelMap::kUnlabeled) continue;
        ++labeled;
        if (pred.labels[p] == gt.labels[p]) ++correct;
    }
    if (labeled == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(labeled);
}

std::optional<double> miou_dynamic(const LabelMap& pred, const LabelMap& gt) {
    check_dims(pred, gt);
    int64_t inter = 0, uni = 0, gt_fg = 0;
    for (size_t p = 0; p < gt.labels.size(); ++p) {
        bool pf = pred.labels[p] != LabelMap::kUnlabeled;
        bool gf = gt.labels[p] != LabelMap::kUnlabeled;
        if (gf) ++gt_fg;
        if (pf && gf) ++inter;
        if (pf || gf) ++uni;
    }
    if (gt_fg == 0) return std::nullopt;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int> test_time_align(const std::vector<const LabelMap*>& pred,
                                 const std::vector<const LabelMap*>& gt, int num_instances) {
    if (pred.empty() || pred.size() != gt.size()) {
        throw std::invalid_argument("test_time_align: empty or mismatched streams");
    }
    Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(num_instances, num_instances);
    for (size_t f = 0; f < pred.size(); ++f) {
        check_dims(*pred[f], *gt[f]);
        for (size_t p = 0; p < gt[f]->labels.size(); ++p) {
            uint8_t pl = pred[f]->labels[p], gl = gt[f]->labels[p];
            if (pl == LabelMap::kUnlabeled || gl == LabelMap::kUnlabeled) continue;
            if (pl < num_instances && gl < num_instances) overlap(pl, gl) += 1.0;
        }
    }
    return hungarian_assign(-overlap);
}

LabelMap apply_label_permutation(const LabelMap& map, const std::vector<int>& perm) {
    LabelMap out = map;
    for (uint8_t& l : out.labels) {
        if (l != LabelMap::kUnlabeled && l < perm.size()) {
            l = static_cast<uint8_t>(perm[l]);
        }
    }
    return out;
}

std::optional<double> psnr(const Image& img, const Image& ref) {
    if (img.width != ref.width || img.height != ref.height) {
        throw std::invalid_argument("psnr: image dimension mismatch");
    }
    double mse = 0.0;
    for (size_t i = 0; i < img.data.size(); ++i) {
        double d = img.data[i] - ref.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(img.data.size());
    if (mse == 0.0) return std::nullopt;
    return 10.0 * std::log10(1.0 / mse);
}

double perm_accuracy(const std::vector<std::vector<int>>& learned,
                     const std::vector<std::vector<int>>& gt) {
    if (learned.size() != gt.size() || learned.empty()) {
        throw std::invalid_argument("perm_accuracy: view count mismatch");
    }
    int exact = 0;
    for (size_t v = 0; v < learned.size(); ++v) {
        if (learned[v] == gt[v]) ++exact;
    }
    return static_cast<double>(exact) / static_cast<double>(learned.size());
}

TrajectoryError traj_rmse(const std::vector<RigidUnit>& tracks,
                          const std::vector<RigidUnit>& gt_units,
                          const std::vector<SeedPoint>& seeds,
                          const std::vector<int>& instance_alignment) {
    TrajectoryError err;
    if (tracks.empty() || gt_units.empty()) return err;
    const int t_count = static_cast<int>(gt_units[0].trajectory.size());
    std::vector<double> sq(static_cast<size_t>(t_count), 0.0);
    std::vector<int64_t> counts(static_cast<size_t>(t_count), 0);

    for (const RigidUnit& track : tracks) {
        int gt_label = track.instance_label;
        if (gt_label >= 0 && gt_label < static_cast<int>(instance_alignment.size())) {
            gt_label = instance_alignment[static_cast<size_t>(gt_label)];
        }
        // The rigid unit of the nearest same-instance seed point at t = 0.
        const Vec3 anchor = track.trajectory[0].translation;
        int unit = -1;
        double best = std::numeric_limits<double>::max();
        for (const SeedPoint& sp : seeds) {
            if (sp.label != gt_label) continue;
            double d = (sp.pos - anchor).squaredNorm();
            if (d < best) {
                best = d;
                unit = sp.unit;
            }
        }
        if (unit < 0) continue;
        const RigidUnit& gtu = gt_units[static_cast<size_t>(unit)];
        const SE3 to_local = gtu.trajectory[0].inverse();
        const int horizon = std::min<int>(t_count, static_cast<int>(track.trajectory.size()));
        for (int t = 0; t < horizon; ++t) {
            Vec3 expect = gtu.trajectory[static_cast<size_t>(t)].apply(to_local.apply(anchor));
            Vec3 got = track.trajectory[static_cast<size_t>(t)].translation;
            sq[static_cast<size_t>(t)] += (expect - got).squaredNorm();
            ++counts[static_cast<size_t>(t)];
        }
    }
    double total = 0.0;
    int64_t total_count = 0;
    err.per_timestep.resize(static_cast<size_t>(t_count), 0.0);
    for (int t = 0; t < t_count; ++t) {
        if (counts[static_cast<size_t>(t)] > 0) {
            err.per_timestep[static_cast<size_t>(t)] =
                std::sqrt(sq[static_cast<size_t>(t)] /
                          static_cast<double>(counts[static_cast<size_t>(t)]));
        }
        total += sq[static_cast<size_t>(t)];
        total_count += counts[static_cast<size_t>(t)];
    }
    err.rmse = total_count == 0 ? 0.0 : std::sqrt(total / static_cast<double>(total_count));
    return err;
}

std::string fnv1a_hex(const std::string& text) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace inst4d
