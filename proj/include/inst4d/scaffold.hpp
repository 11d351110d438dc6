#pragma once

#include <set>
#include <vector>

#include "inst4d/gaussians.hpp"
#include "inst4d/quat.hpp"
#include "inst4d/rng.hpp"

namespace inst4d {

// Control point carrying an SE(3) trajectory; nearby same-instance Gaussians
// inherit blended motion from their attached bases.
struct MotionBase {
    int instance_label = -1;
    int source_gaussian = -1;
    std::vector<SE3> trajectory;  // grows sequentially, defined from t = 0

    const Vec3& anchor() const { return trajectory[0].translation; }
};

struct Attachment {
    int gaussian = -1;
    std::vector<int> bases;      // ascending by (distance, base index)
    std::vector<double> weights; // nonnegative, sum to 1
};

struct Scaffold {
    std::vector<MotionBase> bases;
    std::vector<Attachment> attachments;
    std::vector<std::pair<int, int>> edges;  // directed base-graph pairs (j, k)
    int num_warnings = 0;                    // instances skipped during sampling

    int timesteps() const {
        return bases.empty() ? 0 : static_cast<int>(bases[0].trajectory.size());
    }
};

struct ScaffoldConfig {
    int bases_per_instance = 16;
    int knn_gaussian = 4;
    int knn_base_graph = 6;
    bool ignore_labels = false;   // attachment/graph KNN across instance labels
    bool per_gaussian_bases = false;  // every dynamic Gaussian becomes its own base
};

// Seeded sampling of motion bases, per dynamic instance, without replacement.
// Instances with zero Gaussians are skipped and counted in num_warnings.
std::vector<MotionBase> sample_bases(const GaussianSet& g, int per_instance,
                                     const std::set<int>& dynamic_labels, Rng& rng,
                                     int* num_warnings = nullptr);

// k-nearest same-label bases per dynamic Gaussian by t = 0 distance; ties by
// lower base index. Throws if a dynamic Gaussian's label has no bases.
std::vector<Attachment> attach(const GaussianSet& g, const std::vector<MotionBase>& bases,
                               int k_nn, const std::set<int>& dynamic_labels,
                               bool ignore_labels = false);

// Gaussian RBF of distances, normalized to sum 1; falls back to a one-hot on
// the nearest base when every weight underflows.
std::vector<double> blend_weights(const std::vector<double>& distances, double radius);

// Directed KNN graph over base anchors within each instance label.
std::vector<std::pair<int, int>> build_base_graph(const std::vector<MotionBase>& bases, int k,
                                                  bool ignore_labels = false);

// Full scaffold construction: sampling, attachment (with per-instance RBF
// radius set to the mean k-th neighbor distance), and the base graph.
Scaffold build_scaffold(const GaussianSet& g, const ScaffoldConfig& cfg,
                        const std::set<int>& dynamic_labels, Rng& rng);

// Weighted dual-quaternion blend of rigid transforms. Real parts are
// sign-aligned to the first operand's hemisphere. Throws when the blended
// real part collapses (antipodal inputs).
SE3 dqb(const std::vector<SE3>& transforms, const std::vector<double>& weights);

// Per-base pose parameters for one timestep being optimized: raw quaternion
// (normalized on use) and translation.
struct TrajParams {
    std::vector<Vec4> rot;
    std::vector<Vec3> trans;

    static TrajParams from_trajectory(const Scaffold& sc, int t);
    void write_to(Scaffold& sc, int t) const;  // appends or overwrites step t
    SE3 se3(int j) const {
        return SE3(Quat(rot[static_cast<size_t>(j)]), trans[static_cast<size_t>(j)]);
    }
};

// Intermediates retained for the backward pass of one scaffold frame.
struct ScaffoldFrameTape {
    struct BaseWork {
        Quat qn;        // normalized parameter quaternion
        Quat delta_q;   // qn * conj(q0)
        Vec3 delta_t;
        DualQuat dq;    // relative transform as a dual quaternion
    };
    struct BlendWork {
        std::vector<double> signs;
        Quat b_real, b_dual;
        double norm = 1.0;
        Quat r_hat, d_hat;
        Vec3 out_trans = Vec3::Zero();
    };
    std::vector<BaseWork> base;
    std::vector<BlendWork> blend;  // parallel to scaffold.attachments
};

struct TrajGrads {
    std::vector<Vec4> rot;
    std::vector<Vec3> trans;

    void init(int n);
    void accumulate(const TrajGrads& o, double scale);
    bool all_finite() const;
};

// Materializes means[t] and rotations_t[t] from base poses at t (DQB of
// relative transforms against t = 0). Unattached Gaussians copy t = 0.
void scaffold_frame_forward(GaussianSet& g, const Scaffold& sc, const TrajParams& params, int t,
                            ScaffoldFrameTape* tape = nullptr);

// Routes per-Gaussian gradients (dL/dmean(t), dL/drotation(t)) back to the
// base pose parameters through the blend chain.
TrajGrads scaffold_frame_backward(const GaussianSet& g, const Scaffold& sc,
                                  const TrajParams& params, const ScaffoldFrameTape& tape,
                                  const std::vector<Vec3>& d_means,
                                  const std::vector<Vec4>& d_rots);

struct RigidityResult {
    double coord = 0.0, len = 0.0, iso = 0.0;
    TrajGrads d_params;             // direct gradients wrt base poses at t
    std::vector<Vec3> d_means_t;    // dL_iso/dmean(t), to route through the scaffold
};

// Coordinate, length and isometry rigidity terms between timesteps t-1 and t.
// Pairs never span instance labels (the base graph enforces this); single-base
// instances contribute nothing to coord/len.
RigidityResult rigidity_loss(const GaussianSet& g, const Scaffold& sc, const TrajParams& params,
                             int t, double w_coord = 1.0, double w_len = 1.0, double w_iso = 1.0);

}  // namespace inst4d
