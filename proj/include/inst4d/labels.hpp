#pragma once

#include <Eigen/Core>
#include <set>
#include <vector>

#include "inst4d/image.hpp"

namespace inst4d {

// Progressive supervision state: views whose permutation has been verified.
// The reference view is always active and the set only grows.
struct ActiveViewSet {
    std::set<int> active;
    int reference_view = 0;
    double threshold = 0.9;  // strict: a view joins only when score > threshold

    static ActiveViewSet with_reference(int ref, double threshold);
    bool is_active(int view) const { return active.count(view) > 0; }
};

// Adds every view whose score strictly exceeds the threshold and whose
// eligibility flag (e.g. Hungarian verification) is set. Never removes views.
ActiveViewSet update_active_set(const ActiveViewSet& state, const std::vector<double>& scores,
                                const std::vector<bool>& eligible);

// Left-multiplies the K instance channels of canonical logits by S
// (rows = local labels, cols = canonical labels); the background channel
// (index K) passes through unpermuted. logits: (K+1) x P.
Eigen::MatrixXd remap_logits(const Eigen::MatrixXd& s, const Eigen::MatrixXd& canonical_logits);

// Backward of remap_logits. Either output may be skipped by passing nullptr.
void remap_logits_backward(const Eigen::MatrixXd& s, const Eigen::MatrixXd& canonical_logits,
                           const Eigen::MatrixXd& dlocal, Eigen::MatrixXd* dcanonical,
                           Eigen::MatrixXd* ds);

// Column-wise softmax over channels.
Eigen::MatrixXd softmax_channels(const Eigen::MatrixXd& logits);

struct CeResult {
    double loss = 0.0;
    Eigen::MatrixXd dlogits;  // (K+1) x P, already divided by the pixel count
    bool no_supervision = false;
    int supervised_pixels = 0;
};

// Mean negative log-probability of the labeled class over masked pixels.
// Sentinel pixels are skipped unless background_as_class is set, in which
// case they supervise the background channel (index K). The gradient is the
// standard softmax-CE coupling (P - onehot) / N.
CeResult instance_ce_loss(const Eigen::MatrixXd& probs, const LabelMap& local_labels,
                          const std::vector<uint8_t>& mask, bool background_as_class);

// Fraction of jointly labeled pixels where perm(rendered) == local.
// perm maps canonical ids to local ids. Zero jointly labeled pixels -> 0.
double permutation_confidence(const LabelMap& rendered_canonical, const LabelMap& local,
                              const std::vector<int>& perm);

// Per-pixel boolean supervision mask: false iff the permuted rendered label is
// an instance id that never appears in the local map.
std::vector<uint8_t> unseen_mask(const LabelMap& rendered_canonical, const std::vector<int>& perm,
                                 const LabelMap& local);

// Co-occurrence counts over jointly labeled pixels: counts(local, canonical).
Eigen::MatrixXd label_cooccurrence(const LabelMap& rendered_canonical, const LabelMap& local,
                                   int num_instances);

}  // namespace inst4d
