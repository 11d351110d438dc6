#include "inst4d/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "inst4d/assignment.hpp"
#include "inst4d/decoder.hpp"
#include "inst4d/labels.hpp"
#include "inst4d/photometric.hpp"
#include "inst4d/rasterizer.hpp"
#include "inst4d/rng.hpp"
#include "inst4d/scaffold.hpp"
#include "inst4d/sinkhorn.hpp"

namespace inst4d {

namespace {

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;

Eigen::VectorXd finite_difference(const ScalarFn& f, const Eigen::VectorXd& x, double h = 1e-5) {
    Eigen::VectorXd g(x.size());
    for (int i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

double max_rel_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd,
                     double floor = 1e-6) {
    double worst = 0.0;
    for (int i = 0; i < analytic.size(); ++i) {
        double denom = std::max({floor, std::abs(analytic[i]), std::abs(fd[i])});
        worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
    }
    return worst;
}

std::vector<int> brute_force_assignment(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (int i = 0; i < n; ++i) c += cost(i, perm[static_cast<size_t>(i)]);
        if (c < best_cost - 1e-12 || (std::abs(c - best_cost) <= 1e-12 && perm < best)) {
            best_cost = c;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

Eigen::MatrixXd random_matrix(int n, Rng& rng) {
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = rng.next_normal();
    return m;
}

SelfTestResult check(const std::string& name, bool ok, const std::string& detail) {
    return {name, ok, detail};
}

SelfTestResult sinkhorn_invariants() {
    Rng rng(811);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        int n = 1 + rng.next_int(16);
        Eigen::MatrixXd s = sinkhorn_normalize(random_matrix(n, rng), 20);
        for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(s.row(i).sum() - 1.0));
        for (int j = 0; j < n; ++j) worst = std::max(worst, std::abs(s.col(j).sum() - 1.0));
    }
    return check("sinkhorn doubly stochastic", worst < 1e-3,
                 "max deviation " + std::to_string(worst));
}

SelfTestResult hungarian_oracle() {
    Rng rng(823);
    for (int trial = 0; trial < 40; ++trial) {
        int n = 2 + rng.next_int(4);
        Eigen::MatrixXd cost = random_matrix(n, rng);
        if (hungarian_assign(cost) != brute_force_assignment(cost)) {
            return check("hungarian vs exhaustive", false, "mismatch at trial " + std::to_string(trial));
        }
    }
    return check("hungarian vs exhaustive", true, "40 seeded instances");
}

SelfTestResult dqb_identities() {
    Rng rng(829);
    for (int trial = 0; trial < 20; ++trial) {
        Quat q{rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal()};
        SE3 t(q, Vec3(rng.next_normal(), rng.next_normal(), rng.next_normal()));
        SE3 one = dqb({t}, {1.0});
        if ((one.matrix() - t.matrix()).norm() > 1e-9) {
            return check("dqb identities", false, "single operand not exact");
        }
        SE3 back = dq_to_se3(se3_to_dq(t));
        if ((back.matrix() - t.matrix()).norm() > 1e-9) {
            return check("dqb identities", false, "dq round trip drift");
        }
        Vec3 t1(rng.next_normal(), rng.next_normal(), rng.next_normal());
        Vec3 t2(rng.next_normal(), rng.next_normal(), rng.next_normal());
        double w = rng.next_double();
        SE3 blended = dqb({SE3(Quat::identity(), t1), SE3(Quat::identity(), t2)}, {w, 1 - w});
        if ((blended.translation - (w * t1 + (1 - w) * t2)).norm() > 1e-9) {
            return check("dqb identities", false, "translation blend not linear");
        }
    }
    return check("dqb identities", true, "20 seeded instances");
}

SelfTestResult sinkhorn_gradients() {
    Rng rng(839);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        int n = 2 + rng.next_int(4);
        Eigen::MatrixXd z = random_matrix(n, rng), w = random_matrix(n, rng);
        Eigen::MatrixXd an = sinkhorn_backward(z, 20, w);
        auto f = [&](const Eigen::VectorXd& flat) {
            Eigen::MatrixXd zz = Eigen::Map<const Eigen::MatrixXd>(flat.data(), n, n);
            return sinkhorn_normalize(zz, 20).cwiseProduct(w).sum();
        };
        Eigen::VectorXd fd =
            finite_difference(f, Eigen::Map<const Eigen::VectorXd>(z.data(), z.size()));
        worst = std::max(worst,
                         max_rel_error(Eigen::Map<const Eigen::VectorXd>(an.data(), an.size()), fd));
    }
    return check("sinkhorn backward vs finite differences", worst < 1e-4,
                 "max rel err " + std::to_string(worst));
}

SelfTestResult decoder_gradients() {
    Rng rng(853);
    double worst = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
        IdentityDecoder d = IdentityDecoder::seeded(4, 6, 3, rng);
        Eigen::MatrixXd feats = random_matrix(4, rng).leftCols(4);
        Eigen::MatrixXd w(3, 4);
        for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.next_normal();
        DecoderTape tape;
        decode_identity(d, feats, &tape);
        DecoderGrads grads;
        grads.init_like(d);
        Eigen::MatrixXd dfeat = decode_identity_backward(d, feats, tape, w, &grads, true);
        auto f = [&](const Eigen::VectorXd& flat) {
            Eigen::MatrixXd ff = Eigen::Map<const Eigen::MatrixXd>(flat.data(), 4, 4);
            return decode_identity(d, ff).cwiseProduct(w).sum();
        };
        Eigen::VectorXd fd =
            finite_difference(f, Eigen::Map<const Eigen::VectorXd>(feats.data(), feats.size()));
        worst = std::max(
            worst, max_rel_error(Eigen::Map<const Eigen::VectorXd>(dfeat.data(), dfeat.size()), fd));
    }
    return check("decoder backward vs finite differences", worst < 1e-4,
                 "max rel err " + std::to_string(worst));
}

SelfTestResult rasterizer_gradients(int threads) {
    Rng rng(857);
    GaussianSet g;
    g.resize(4, 2);
    g.num_instances = 1;
    for (int i = 0; i < 4; ++i) {
        g.means[0][static_cast<size_t>(i)] =
            Vec3(rng.next_uniform(-0.6, 0.6), rng.next_uniform(-0.6, 0.6), rng.next_uniform(-0.4, 0.4));
        g.colors[static_cast<size_t>(i)] = Vec3(rng.next_double(), rng.next_double(), rng.next_double());
        g.opacity_logits[static_cast<size_t>(i)] = rng.next_uniform(-0.5, 1.0);
        g.log_scales[static_cast<size_t>(i)] = Vec3::Constant(rng.next_uniform(-2.2, -1.8));
        Quat q{rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal()};
        g.rotations[static_cast<size_t>(i)] = q.normalized();
        g.features(0, i) = rng.next_normal();
        g.features(1, i) = rng.next_normal();
    }
    g.rotations_t[0] = g.rotations;
    Camera cam = Camera::look_at({0, -3.5, 0.6}, {0, 0, 0}, {0, 0, 1}, 20.0, 12, 12);

    RenderOptions ropts;
    ropts.threads = threads;
    RenderOutput out = rasterize(g, 0, cam, ropts);
    if (out.boundary_margin < 1e-3 || out.min_transmittance < 1e-2) {
        return check("rasterizer backward vs finite differences", false,
                     "scene too close to a cutoff boundary");
    }
    Image dimg(12, 12);
    Rng wr(858);
    for (double& v : dimg.data) v = wr.next_normal();
    Eigen::MatrixXd dfeat(2, 144);
    for (int i = 0; i < dfeat.size(); ++i) dfeat.data()[i] = wr.next_normal();
    RasterGrads grads = rasterize_backward(g, 0, cam, out, dimg, dfeat);

    // Mean positions only; the full per-class check runs in the test suite.
    auto f = [&](const Eigen::VectorXd& flat) {
        GaussianSet gg = g;
        for (int i = 0; i < 4; ++i)
            for (int k = 0; k < 3; ++k) gg.means[0][static_cast<size_t>(i)][k] = flat[3 * i + k];
        RenderOutput o = rasterize(gg, 0, cam);
        double total = 0.0;
        for (size_t i = 0; i < o.image.data.size(); ++i) total += o.image.data[i] * dimg.data[i];
        total += o.features.cwiseProduct(dfeat).sum();
        return total;
    };
    Eigen::VectorXd x(12);
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < 3; ++k) x[3 * i + k] = g.means[0][static_cast<size_t>(i)][k];
    Eigen::VectorXd fd = finite_difference(f, x);
    Eigen::VectorXd an(12);
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < 3; ++k) an[3 * i + k] = grads.means[static_cast<size_t>(i)][k];
    double err = max_rel_error(an, fd, 1e-5);
    return check("rasterizer backward vs finite differences", err < 1e-3,
                 "max rel err " + std::to_string(err));
}

SelfTestResult rigidity_gradients() {
    Rng rng(863);
    GaussianSet g;
    g.resize(8, 2);
    g.num_instances = 1;
    for (int i = 0; i < 8; ++i) {
        g.means[0][static_cast<size_t>(i)] =
            Vec3(rng.next_normal(), rng.next_normal(), rng.next_normal());
        g.labels[static_cast<size_t>(i)] = 0;
    }
    g.rotations_t[0] = g.rotations;
    ScaffoldConfig cfg;
    cfg.bases_per_instance = 4;
    cfg.knn_gaussian = 2;
    cfg.knn_base_graph = 2;
    Rng srng(864);
    Scaffold sc = build_scaffold(g, cfg, {0}, srng);
    const int nb = static_cast<int>(sc.bases.size());

    TrajParams p = TrajParams::from_trajectory(sc, 0);
    for (int j = 0; j < nb; ++j) {
        for (int k = 0; k < 4; ++k) p.rot[static_cast<size_t>(j)][k] += 0.1 * rng.next_normal();
        p.trans[static_cast<size_t>(j)] +=
            0.2 * Vec3(rng.next_normal(), rng.next_normal(), rng.next_normal());
    }
    auto pack = [&](const TrajParams& pp) {
        Eigen::VectorXd v(7 * nb);
        for (int j = 0; j < nb; ++j) {
            for (int k = 0; k < 4; ++k) v[7 * j + k] = pp.rot[static_cast<size_t>(j)][k];
            for (int k = 0; k < 3; ++k) v[7 * j + 4 + k] = pp.trans[static_cast<size_t>(j)][k];
        }
        return v;
    };
    auto loss = [&](const Eigen::VectorXd& v) {
        TrajParams pp = p;
        for (int j = 0; j < nb; ++j) {
            for (int k = 0; k < 4; ++k) pp.rot[static_cast<size_t>(j)][k] = v[7 * j + k];
            for (int k = 0; k < 3; ++k) pp.trans[static_cast<size_t>(j)][k] = v[7 * j + 4 + k];
        }
        GaussianSet gg = g;
        scaffold_frame_forward(gg, sc, pp, 1);
        auto r = rigidity_loss(gg, sc, pp, 1);
        return r.coord + r.len + r.iso;
    };
    GaussianSet gg = g;
    ScaffoldFrameTape tape;
    scaffold_frame_forward(gg, sc, p, 1, &tape);
    auto rig = rigidity_loss(gg, sc, p, 1);
    TrajGrads grads = scaffold_frame_backward(
        gg, sc, p, tape, rig.d_means_t, std::vector<Vec4>(static_cast<size_t>(gg.size()), Vec4::Zero()));
    grads.accumulate(rig.d_params, 1.0);

    Eigen::VectorXd fd = finite_difference(loss, pack(p));
    Eigen::VectorXd an(7 * nb);
    for (int j = 0; j < nb; ++j) {
        for (int k = 0; k < 4; ++k) an[7 * j + k] = grads.rot[static_cast<size_t>(j)][k];
        for (int k = 0; k < 3; ++k) an[7 * j + 4 + k] = grads.trans[static_cast<size_t>(j)][k];
    }
    double err = max_rel_error(an, fd);
    return check("rigidity + dqb chain vs finite differences", err < 1e-4,
                 "max rel err " + std::to_string(err));
}

SelfTestResult ce_and_remap_gradients() {
    Rng rng(877);
    const int k = 3, pixels = 6;
    Eigen::MatrixXd s = random_matrix(k, rng);
    Eigen::MatrixXd logits(k + 1, pixels);
    for (int i = 0; i < logits.size(); ++i) logits.data()[i] = rng.next_normal();
    LabelMap labels(2, 3);
    for (auto& l : labels.labels) l = static_cast<uint8_t>(rng.next_int(k));

    auto f = [&](const Eigen::VectorXd& flat) {
        Eigen::MatrixXd ll = Eigen::Map<const Eigen::MatrixXd>(flat.data(), k + 1, pixels);
        Eigen::MatrixXd local = remap_logits(s, ll);
        return instance_ce_loss(softmax_channels(local), labels, {}, true).loss;
    };
    Eigen::MatrixXd local = remap_logits(s, logits);
    CeResult ce = instance_ce_loss(softmax_channels(local), labels, {}, true);
    Eigen::MatrixXd dcanon;
    remap_logits_backward(s, logits, ce.dlogits, &dcanon, nullptr);
    Eigen::VectorXd fd =
        finite_difference(f, Eigen::Map<const Eigen::VectorXd>(logits.data(), logits.size()));
    double err =
        max_rel_error(Eigen::Map<const Eigen::VectorXd>(dcanon.data(), dcanon.size()), fd);
    return check("cross-entropy through remap vs finite differences", err < 1e-4,
                 "max rel err " + std::to_string(err));
}

}  // namespace

std::vector<SelfTestResult> run_selftest(int threads) {
    std::vector<SelfTestResult> results;
    results.push_back(sinkhorn_invariants());
    results.push_back(hungarian_oracle());
    results.push_back(dqb_identities());
    results.push_back(sinkhorn_gradients());
    results.push_back(decoder_gradients());
    results.push_back(ce_and_remap_gradients());
    results.push_back(rasterizer_gradients(threads));
    results.push_back(rigidity_gradients());
    return results;
}

}  // namespace inst4d
