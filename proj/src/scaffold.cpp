#include "inst4d/scaffold.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "inst4d/diff_geom.hpp"
#include "inst4d/knn.hpp"

namespace inst4d {

namespace {

constexpr double kRealCollapse = 1e-9;

// Group base indices by instance label; a single group under ignore_labels.
std::map<int, std::vector<int>> group_bases(const std::vector<MotionBase>& bases,
                                            bool ignore_labels) {
    std::map<int, std::vector<int>> groups;
    for (size_t j = 0; j < bases.size(); ++j) {
        int key = ignore_labels ? 0 : bases[j].instance_label;
        groups[key].push_back(static_cast<int>(j));
    }
    return groups;
}

}  // namespace

std::vector<MotionBase> sample_bases(const GaussianSet& g, int per_instance,
                                     const std::set<int>& dynamic_labels, Rng& rng,
                                     int* num_warnings) {
    if (per_instance < 1) throw std::invalid_argument("sample_bases: per_instance must be >= 1");
    std::vector<MotionBase> bases;
    int warnings = 0;
    for (int label : dynamic_labels) {
        std::vector<int> population;
        for (int i = 0; i < g.size(); ++i) {
            if (g.labels[static_cast<size_t>(i)] == label) population.push_back(i);
        }
        if (population.empty()) {
            ++warnings;
            continue;
        }
        Rng local = rng.split(static_cast<uint64_t>(label) + 1);
        std::vector<int> picks = local.sample_without_replacement(
            static_cast<int>(population.size()), per_instance);
        std::sort(picks.begin(), picks.end());
        for (int p : picks) {
            int i = population[static_cast<size_t>(p)];
            MotionBase b;
            b.instance_label = label;
            b.source_gaussian = i;
            b.trajectory.push_back(
                SE3(g.rotations[static_cast<size_t>(i)], g.means[0][static_cast<size_t>(i)]));
            bases.push_back(std::move(b));
        }
    }
    if (num_warnings) *num_warnings = warnings;
    return bases;
}

std::vector<Attachment> attach(const GaussianSet& g, const std::vector<MotionBase>& bases,
                               int k_nn, const std::set<int>& dynamic_labels,
                               bool ignore_labels) {
    auto groups = group_bases(bases, ignore_labels);
    std::map<int, KdTree3> trees;
    for (const auto& [key, ids] : groups) {
        std::vector<Vec3> anchors;
        anchors.reserve(ids.size());
        for (int j : ids) anchors.push_back(bases[static_cast<size_t>(j)].anchor());
        trees.emplace(key, KdTree3(anchors));
    }

    std::vector<Attachment> out;
    for (int i = 0; i < g.size(); ++i) {
        int label = g.labels[static_cast<size_t>(i)];
        if (!dynamic_labels.count(label)) continue;
        int key = ignore_labels ? 0 : label;
        auto git = groups.find(key);
        if (git == groups.end() || git->second.empty()) {
            throw std::runtime_error("attach: no motion bases for instance label " +
                                     std::to_string(label));
        }
        const std::vector<int>& ids = git->second;
        int k = std::min<int>(k_nn, static_cast<int>(ids.size()));
        std::vector<int> local = trees.at(key).nearest(g.means[0][static_cast<size_t>(i)], k);
        Attachment a;
        a.gaussian = i;
        for (int l : local) a.bases.push_back(ids[static_cast<size_t>(l)]);
        // Label purity, checked on every call.
        if (!ignore_labels) {
            for (int j : a.bases) {
                if (bases[static_cast<size_t>(j)].instance_label != label) {
                    throw std::logic_error("attach: attachment crosses instance labels");
                }
            }
        }
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<double> blend_weights(const std::vector<double>& distances, double radius) {
    if (distances.empty()) throw std::invalid_argument("blend_weights: no distances");
    if (radius <= 0.0) throw std::invalid_argument("blend_weights: radius must be positive");
    std::vector<double> w(distances.size());
    double sum = 0.0;
    for (size_t i = 0; i < distances.size(); ++i) {
        w[i] = std::exp(-distances[i] * distances[i] / (2.0 * radius * radius));
        sum += w[i];
    }
    if (sum <= 0.0) {
        // Numerically dead weights: one-hot on the nearest base.
        size_t nearest = static_cast<size_t>(
            std::min_element(distances.begin(), distances.end()) - distances.begin());
        std::fill(w.begin(), w.end(), 0.0);
        w[nearest] = 1.0;
        return w;
    }
    for (double& v : w) v /= sum;
    return w;
}

std::vector<std::pair<int, int>> build_base_graph(const std::vector<MotionBase>& bases, int k,
                                                  bool ignore_labels) {
    std::vector<std::pair<int, int>> edges;
    for (const auto& [key, ids] : group_bases(bases, ignore_labels)) {
        (void)key;
        if (ids.size() < 2) continue;
        std::vector<Vec3> anchors;
        for (int j : ids) anchors.push_back(bases[static_cast<size_t>(j)].anchor());
        KdTree3 tree(anchors);
        for (size_t a = 0; a < ids.size(); ++a) {
            int kk = std::min<int>(k, static_cast<int>(ids.size()) - 1);
            for (int l : tree.nearest(anchors[a], kk, static_cast<int>(a))) {
                edges.emplace_back(ids[a], ids[static_cast<size_t>(l)]);
            }
        }
    }
    return edges;
}

Scaffold build_scaffold(const GaussianSet& g, const ScaffoldConfig& cfg,
                        const std::set<int>& dynamic_labels, Rng& rng) {
    Scaffold sc;
    if (cfg.per_gaussian_bases) {
        // Every dynamic Gaussian is its own base; motion is optimized
        // independently per Gaussian.
        for (int i = 0; i < g.size(); ++i) {
            int label = g.labels[static_cast<size_t>(i)];
            if (!dynamic_labels.count(label)) continue;
            MotionBase b;
            b.instance_label = label;
            b.source_gaussian = i;
            b.trajectory.push_back(
                SE3(g.rotations[static_cast<size_t>(i)], g.means[0][static_cast<size_t>(i)]));
            Attachment a;
            a.gaussian = i;
            a.bases = {static_cast<int>(sc.bases.size())};
            a.weights = {1.0};
            sc.bases.push_back(std::move(b));
            sc.attachments.push_back(std::move(a));
        }
    } else {
        sc.bases = sample_bases(g, cfg.bases_per_instance, dynamic_labels, rng, &sc.num_warnings);
        sc.attachments = attach(g, sc.bases, cfg.knn_gaussian, dynamic_labels, cfg.ignore_labels);

        // Per-instance RBF radius: mean distance to the k-th attached base.
        std::map<int, std::pair<double, int>> radius_acc;
        std::vector<std::vector<double>> dists(sc.attachments.size());
        for (size_t ai = 0; ai < sc.attachments.size(); ++ai) {
            const Attachment& a = sc.attachments[ai];
            for (int j : a.bases) {
                dists[ai].push_back(
                    (g.means[0][static_cast<size_t>(a.gaussian)] - sc.bases[static_cast<size_t>(j)].anchor())
                        .norm());
            }
            int label = g.labels[static_cast<size_t>(a.gaussian)];
            auto& acc = radius_acc[cfg.ignore_labels ? 0 : label];
            acc.first += dists[ai].back();
            acc.second += 1;
        }
        for (size_t ai = 0; ai < sc.attachments.size(); ++ai) {
            Attachment& a = sc.attachments[ai];
            int label = g.labels[static_cast<size_t>(a.gaussian)];
            auto& acc = radius_acc[cfg.ignore_labels ? 0 : label];
            double radius = acc.second > 0 ? acc.first / acc.second : 0.0;
            if (radius <= 1e-12) radius = 1e-6;
            a.weights = blend_weights(dists[ai], radius);
        }
    }
    sc.edges = build_base_graph(sc.bases, cfg.knn_base_graph, cfg.ignore_labels);
    return sc;
}

SE3 dqb(const std::vector<SE3>& transforms, const std::vector<double>& weights) {
    if (transforms.empty() || transforms.size() != weights.size()) {
        throw std::invalid_argument("dqb: operand/weight mismatch");
    }
    DualQuat first = se3_to_dq(transforms[0]);
    DualQuat sum;
    sum.real = {0, 0, 0, 0};
    for (size_t j = 0; j < transforms.size(); ++j) {
        DualQuat d = se3_to_dq(transforms[j]);
        double sign = d.real.dot(first.real) >= 0.0 ? 1.0 : -1.0;
        sum = sum + d * (weights[j] * sign);
    }
    if (sum.real.norm() < kRealCollapse) {
        throw std::runtime_error("dqb: blended real part collapsed (antipodal operands)");
    }
    return dq_to_se3(sum);
}

TrajParams TrajParams::from_trajectory(const Scaffold& sc, int t) {
    TrajParams p;
    p.rot.reserve(sc.bases.size());
    p.trans.reserve(sc.bases.size());
    for (const MotionBase& b : sc.bases) {
        if (t >= static_cast<int>(b.trajectory.size())) {
            throw std::out_of_range("TrajParams: trajectory entry missing at t");
        }
        p.rot.push_back(b.trajectory[static_cast<size_t>(t)].rotation.vec4());
        p.trans.push_back(b.trajectory[static_cast<size_t>(t)].translation);
    }
    return p;
}

void TrajParams::write_to(Scaffold& sc, int t) const {
    for (size_t j = 0; j < sc.bases.size(); ++j) {
        SE3 pose(Quat(rot[j]), trans[j]);
        auto& traj = sc.bases[j].trajectory;
        if (t == static_cast<int>(traj.size())) {
            traj.push_back(pose);
        } else if (t < static_cast<int>(traj.size())) {
            traj[static_cast<size_t>(t)] = pose;
        } else {
            throw std::out_of_range("TrajParams::write_to: trajectory gap");
        }
    }
}

void TrajGrads::init(int n) {
    rot.assign(static_cast<size_t>(n), Vec4::Zero());
    trans.assign(static_cast<size_t>(n), Vec3::Zero());
}

void TrajGrads::accumulate(const TrajGrads& o, double scale) {
    for (size_t j = 0; j < rot.size(); ++j) {
        rot[j] += scale * o.rot[j];
        trans[j] += scale * o.trans[j];
    }
}

bool TrajGrads::all_finite() const {
    for (size_t j = 0; j < rot.size(); ++j) {
        if (!rot[j].allFinite() || !trans[j].allFinite()) return false;
    }
    return true;
}

namespace {

// Relative pose work shared by forward and backward: delta = T_t * T_0^{-1}.
ScaffoldFrameTape::BaseWork base_work(const MotionBase& base, const Vec4& rot_param,
                                      const Vec3& trans_param) {
    ScaffoldFrameTape::BaseWork w;
    const SE3& t0 = base.trajectory[0];
    w.qn = Quat(rot_param).normalized();
    w.delta_q = w.qn * t0.rotation.conjugate();
    w.delta_t = trans_param - w.delta_q.rotate(t0.translation);
    w.dq.real = w.delta_q;
    w.dq.dual = Quat::pure(w.delta_t) * w.delta_q * 0.5;
    return w;
}

}  // namespace

void scaffold_frame_forward(GaussianSet& g, const Scaffold& sc, const TrajParams& params, int t,
                            ScaffoldFrameTape* tape) {
    if (t < 1) throw std::invalid_argument("scaffold_frame_forward: t must be >= 1");
    g.materialize_through(t);
    // Default: copy t = 0 (static and unassigned Gaussians).
    g.means[static_cast<size_t>(t)] = g.means[0];
    g.rotations_t[static_cast<size_t>(t)] = g.rotations_t[0];

    std::vector<ScaffoldFrameTape::BaseWork> base(sc.bases.size());
    for (size_t j = 0; j < sc.bases.size(); ++j) {
        base[j] = base_work(sc.bases[j], params.rot[j], params.trans[j]);
    }

    std::vector<ScaffoldFrameTape::BlendWork> blends(sc.attachments.size());
    for (size_t ai = 0; ai < sc.attachments.size(); ++ai) {
        const Attachment& a = sc.attachments[ai];
        ScaffoldFrameTape::BlendWork& bw = blends[ai];
        const Quat& first_real = base[static_cast<size_t>(a.bases[0])].dq.real;
        bw.b_real = {0, 0, 0, 0};
        bw.b_dual = {0, 0, 0, 0};
        bw.signs.resize(a.bases.size());
        for (size_t bi = 0; bi < a.bases.size(); ++bi) {
            const DualQuat& d = base[static_cast<size_t>(a.bases[bi])].dq;
            double sign = d.real.dot(first_real) >= 0.0 ? 1.0 : -1.0;
            bw.signs[bi] = sign;
            double wgt = a.weights[bi] * sign;
            bw.b_real = bw.b_real + d.real * wgt;
            bw.b_dual = bw.b_dual + d.dual * wgt;
        }
        bw.norm = bw.b_real.norm();
        if (bw.norm < kRealCollapse) {
            throw std::runtime_error("scaffold: blended real part collapsed");
        }
        bw.r_hat = bw.b_real * (1.0 / bw.norm);
        Quat d_prime = bw.b_dual * (1.0 / bw.norm);
        bw.d_hat = d_prime - bw.r_hat * bw.r_hat.dot(d_prime);
        bw.out_trans = (bw.d_hat * bw.r_hat.conjugate() * 2.0).vec();

        const int i = a.gaussian;
        g.means[static_cast<size_t>(t)][static_cast<size_t>(i)] =
            bw.r_hat.rotate(g.means[0][static_cast<size_t>(i)]) + bw.out_trans;
        g.rotations_t[static_cast<size_t>(t)][static_cast<size_t>(i)] =
            bw.r_hat * g.rotations_t[0][static_cast<size_t>(i)];
    }
    if (tape) {
        tape->base = std::move(base);
        tape->blend = std::move(blends);
    }
}

TrajGrads scaffold_frame_backward(const GaussianSet& g, const Scaffold& sc,
                                  const TrajParams& params, const ScaffoldFrameTape& tape,
                                  const std::vector<Vec3>& d_means,
                                  const std::vector<Vec4>& d_rots) {
    TrajGrads grads;
    grads.init(static_cast<int>(sc.bases.size()));
    std::vector<Vec4> d_dq_real(sc.bases.size(), Vec4::Zero());
    std::vector<Vec4> d_dq_dual(sc.bases.size(), Vec4::Zero());

    for (size_t ai = 0; ai < sc.attachments.size(); ++ai) {
        const Attachment& a = sc.attachments[ai];
        const ScaffoldFrameTape::BlendWork& bw = tape.blend[ai];
        const int i = a.gaussian;
        const Vec3 dmu = d_means[static_cast<size_t>(i)];
        const Vec4 drot = d_rots[static_cast<size_t>(i)];
        if (dmu.isZero(0.0) && drot.isZero(0.0)) continue;

        // rot_t = r_hat * r0 ; mean_t = R(r_hat) mu0 + out_trans
        Vec4 d_rhat = quat_rmat(g.rotations_t[0][static_cast<size_t>(i)]).transpose() * drot;
        d_rhat += rotate_jacobian_q(bw.r_hat, g.means[0][static_cast<size_t>(i)]).transpose() * dmu;
        Vec3 d_trans = dmu;

        // out_trans = 2 vec(d_hat * conj(r_hat))
        Vec4 d_e(0.0, 2.0 * d_trans[0], 2.0 * d_trans[1], 2.0 * d_trans[2]);
        Quat cr = bw.r_hat.conjugate();
        Vec4 d_dhat = quat_rmat(cr).transpose() * d_e;
        Vec4 d_cr = quat_lmat(bw.d_hat).transpose() * d_e;
        d_rhat += quat_conj_vjp(d_cr);

        // d_hat = d_prime - r_hat (r_hat . d_prime)
        Quat d_prime = bw.b_dual * (1.0 / bw.norm);
        double rd = bw.r_hat.dot(d_prime);
        Vec4 rhat4 = bw.r_hat.vec4();
        Vec4 dprime4 = d_prime.vec4();
        Vec4 d_dprime = d_dhat - rhat4 * rhat4.dot(d_dhat);
        d_rhat += -rd * d_dhat - dprime4 * rhat4.dot(d_dhat);

        // r_hat = b_real / n ; d_prime = b_dual / n ; n = |b_real|
        Vec4 breal4 = bw.b_real.vec4();
        Vec4 bdual4 = bw.b_dual.vec4();
        Vec4 d_bdual = d_dprime / bw.norm;
        double d_n = -d_dprime.dot(bdual4) / (bw.norm * bw.norm) -
                     d_rhat.dot(breal4) / (bw.norm * bw.norm);
        Vec4 d_breal = d_rhat / bw.norm + d_n * (breal4 / bw.norm);

        for (size_t bi = 0; bi < a.bases.size(); ++bi) {
            double wgt = a.weights[bi] * bw.signs[bi];
            d_dq_real[static_cast<size_t>(a.bases[bi])] += wgt * d_breal;
            d_dq_dual[static_cast<size_t>(a.bases[bi])] += wgt * d_bdual;
        }
    }

    for (size_t j = 0; j < sc.bases.size(); ++j) {
        if (d_dq_real[j].isZero(0.0) && d_dq_dual[j].isZero(0.0)) continue;
        const ScaffoldFrameTape::BaseWork& bwk = tape.base[j];
        const SE3& t0 = sc.bases[j].trajectory[0];

        // dq.dual = 0.5 * pure(delta_t) * delta_q
        Quat t_tilde = Quat::pure(bwk.delta_t);
        Vec4 d_ttilde = 0.5 * (quat_rmat(bwk.delta_q).transpose() * d_dq_dual[j]);
        Vec4 d_delta_q = d_dq_real[j] + 0.5 * (quat_lmat(t_tilde).transpose() * d_dq_dual[j]);
        Vec3 d_delta_t(d_ttilde[1], d_ttilde[2], d_ttilde[3]);

        // delta_t = trans_param - R(delta_q) t0.translation
        grads.trans[j] += d_delta_t;
        d_delta_q += -(rotate_jacobian_q(bwk.delta_q, t0.translation).transpose() * d_delta_t);

        // delta_q = qn * conj(q0)
        Vec4 d_qn = quat_rmat(t0.rotation.conjugate()).transpose() * d_delta_q;
        grads.rot[j] += quat_normalize_vjp(Quat(params.rot[j]), d_qn);
    }
    return grads;
}

RigidityResult rigidity_loss(const GaussianSet& g, const Scaffold& sc, const TrajParams& params,
                             int t, double w_coord, double w_len, double w_iso) {
    if (t < 1 || t > g.timesteps() - 1) {
        throw std::invalid_argument("rigidity_loss: means at t must be materialized");
    }
    RigidityResult res;
    res.d_params.init(static_cast<int>(sc.bases.size()));
    res.d_means_t.assign(static_cast<size_t>(g.size()), Vec3::Zero());

    // Coordinate and length terms over directed base-graph edges.
    const int num_edges = static_cast<int>(sc.edges.size());
    if (num_edges > 0) {
        std::vector<Quat> qn(sc.bases.size()), q_rel(sc.bases.size());
        for (size_t j = 0; j < sc.bases.size(); ++j) {
            qn[j] = Quat(params.rot[j]).normalized();
            q_rel[j] =
                qn[j] * sc.bases[j].trajectory[static_cast<size_t>(t) - 1].rotation.conjugate();
        }
        const double edge_scale = 1.0 / num_edges;
        for (const auto& [j, k] : sc.edges) {
            const SE3& prev_j = sc.bases[static_cast<size_t>(j)].trajectory[static_cast<size_t>(t) - 1];
            const SE3& prev_k = sc.bases[static_cast<size_t>(k)].trajectory[static_cast<size_t>(t) - 1];
            const Vec3 offset_prev = prev_k.translation - prev_j.translation;
            const Vec3 offset_now =
                params.trans[static_cast<size_t>(k)] - params.trans[static_cast<size_t>(j)];

            // Coordinate term: the previous offset carried by j's rotation
            // increment should land on the current offset.
            Vec3 carried = q_rel[static_cast<size_t>(j)].rotate(offset_prev);
            Vec3 err = carried - offset_now;
            res.coord += edge_scale * err.squaredNorm();
            Vec3 d_err = (2.0 * edge_scale * w_coord) * err;
            res.d_params.trans[static_cast<size_t>(k)] += -d_err;
            res.d_params.trans[static_cast<size_t>(j)] += d_err;
            Vec4 d_qrel =
                rotate_jacobian_q(q_rel[static_cast<size_t>(j)], offset_prev).transpose() * d_err;
            Vec4 d_qn = quat_rmat(prev_j.rotation.conjugate()).transpose() * d_qrel;
            res.d_params.rot[static_cast<size_t>(j)] +=
                quat_normalize_vjp(Quat(params.rot[static_cast<size_t>(j)]), d_qn);

            // Length term against the t = 0 edge length.
            const Vec3 offset0 = sc.bases[static_cast<size_t>(k)].anchor() -
                                 sc.bases[static_cast<size_t>(j)].anchor();
            double len_now = offset_now.norm();
            double len0 = offset0.norm();
            double diff = len_now - len0;
            res.len += edge_scale * diff * diff;
            if (len_now > 1e-12) {
                Vec3 d_off = (2.0 * edge_scale * w_len * diff / len_now) * offset_now;
                res.d_params.trans[static_cast<size_t>(k)] += d_off;
                res.d_params.trans[static_cast<size_t>(j)] += -d_off;
            }
        }
    }

    // Isometry term over Gaussian-base attachment pairs.
    int num_pairs = 0;
    for (const Attachment& a : sc.attachments) num_pairs += static_cast<int>(a.bases.size());
    if (num_pairs > 0) {
        const double pair_scale = 1.0 / num_pairs;
        for (const Attachment& a : sc.attachments) {
            const int i = a.gaussian;
            const Vec3& mu_t = g.means[static_cast<size_t>(t)][static_cast<size_t>(i)];
            const Vec3& mu_0 = g.means[0][static_cast<size_t>(i)];
            for (int j : a.bases) {
                Vec3 offset_now = mu_t - params.trans[static_cast<size_t>(j)];
                double len_now = offset_now.norm();
                double len0 = (mu_0 - sc.bases[static_cast<size_t>(j)].anchor()).norm();
                double diff = len_now - len0;
                res.iso += pair_scale * diff * diff;
                if (len_now > 1e-12) {
                    Vec3 d_off = (2.0 * pair_scale * w_iso * diff / len_now) * offset_now;
                    res.d_means_t[static_cast<size_t>(i)] += d_off;
                    res.d_params.trans[static_cast<size_t>(j)] += -d_off;
                }
            }
        }
    }
    return res;
}

}  // namespace inst4d
