#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "inst4d/assignment.hpp"
#include "inst4d/decoder.hpp"
#include "inst4d/labels.hpp"
#include "inst4d/rng.hpp"
#include "inst4d/sinkhorn.hpp"
#include "oracles.hpp"

using namespace inst4d;

namespace {

LabelMap map_from(std::initializer_list<std::initializer_list<int>> rows) {
    int h = static_cast<int>(rows.size());
    int w = static_cast<int>(rows.begin()->size());
    LabelMap m(h, w);
    int y = 0;
    for (const auto& row : rows) {
        int x = 0;
        for (int v : row) m.at(y, x++) = static_cast<uint8_t>(v);
        ++y;
    }
    return m;
}

}  // namespace

TEST_CASE("remap identity and swap") {
    Eigen::MatrixXd logits(3, 2);  // K=2 plus background, two pixels
    logits << 1.0, 4.0, 2.0, 5.0, 3.0, 6.0;
    CHECK((remap_logits(Eigen::MatrixXd::Identity(2, 2), logits) - logits).norm() == 0.0);

    Eigen::MatrixXd swap(2, 2);
    swap << 0, 1, 1, 0;
    Eigen::MatrixXd remapped = remap_logits(swap, logits);
    CHECK(remapped(0, 0) == 2.0);
    CHECK(remapped(1, 0) == 1.0);
    CHECK(remapped(2, 0) == 3.0);  // background untouched
}

TEST_CASE("soft remap mixes channels") {
    Eigen::MatrixXd s(2, 2);
    s << 0.9, 0.1, 0.1, 0.9;
    Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(3, 1);
    logits(0, 0) = 1.0;  // one-hot canonical channel 0
    Eigen::MatrixXd out = remap_logits(s, logits);
    CHECK(out(0, 0) == doctest::Approx(0.9));
    CHECK(out(1, 0) == doctest::Approx(0.1));
}

TEST_CASE("remap backward matches finite differences") {
    Rng rng(42);
    const int k = 3, pixels = 4;
    Eigen::MatrixXd s(k, k), logits(k + 1, pixels), weight(k + 1, pixels);
    for (int i = 0; i < s.size(); ++i) s.data()[i] = rng.next_normal();
    for (int i = 0; i < logits.size(); ++i) logits.data()[i] = rng.next_normal();
    for (int i = 0; i < weight.size(); ++i) weight.data()[i] = rng.next_normal();

    Eigen::MatrixXd dcanon, ds;
    remap_logits_backward(s, logits, weight, &dcanon, &ds);

    auto f_logits = [&](const Eigen::VectorXd& flat) {
        Eigen::MatrixXd l = Eigen::Map<const Eigen::MatrixXd>(flat.data(), k + 1, pixels);
        return remap_logits(s, l).cwiseProduct(weight).sum();
    };
    Eigen::VectorXd fd = oracles::finite_difference(
        f_logits, Eigen::Map<const Eigen::VectorXd>(logits.data(), logits.size()));
    CHECK(oracles::max_rel_error(Eigen::Map<const Eigen::VectorXd>(dcanon.data(), dcanon.size()),
                                 fd) < 1e-6);

    auto f_s = [&](const Eigen::VectorXd& flat) {
        Eigen::MatrixXd ss = Eigen::Map<const Eigen::MatrixXd>(flat.data(), k, k);
        return remap_logits(ss, logits).cwiseProduct(weight).sum();
    };
    Eigen::VectorXd fd_s =
        oracles::finite_difference(f_s, Eigen::Map<const Eigen::VectorXd>(s.data(), s.size()));
    CHECK(oracles::max_rel_error(Eigen::Map<const Eigen::VectorXd>(ds.data(), ds.size()), fd_s) <
          1e-6);
}

TEST_CASE("cross entropy hand values") {
    // Uniform over 3 classes, every pixel labeled: loss = ln 3.
    const int pixels = 6;
    Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(3, pixels, 1.0 / 3.0);
    LabelMap labels = map_from({{0, 1, 0}, {1, 0, 1}});
    auto res = instance_ce_loss(probs, labels, {}, false);
    CHECK(res.loss == doctest::Approx(std::log(3.0)));

    // One-hot, always correct: loss 0.
    Eigen::MatrixXd hot = Eigen::MatrixXd::Zero(3, pixels);
    for (int p = 0; p < pixels; ++p) hot(labels.labels[static_cast<size_t>(p)], p) = 1.0;
    CHECK(instance_ce_loss(hot, labels, {}, false).loss == doctest::Approx(0.0));

    // Single pixel, P = (0.7, 0.2, 0.1), label 1 -> -ln 0.2.
    Eigen::MatrixXd single(3, 1);
    single << 0.7, 0.2, 0.1;
    LabelMap one(1, 1);
    one.at(0, 0) = 1;
    CHECK(instance_ce_loss(single, one, {}, false).loss == doctest::Approx(-std::log(0.2)));
}

TEST_CASE("cross entropy with no supervision flags a warning") {
    Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(3, 4, 1.0 / 3.0);
    LabelMap labels(2, 2);  // all sentinel
    auto res = instance_ce_loss(probs, labels, {}, false);
    CHECK(res.no_supervision);
    CHECK(res.loss == 0.0);
    CHECK(res.dlogits.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross entropy gradient matches finite differences through softmax") {
    Rng rng(55);
    const int k = 3, pixels = 5;
    Eigen::MatrixXd logits(k + 1, pixels);
    for (int i = 0; i < logits.size(); ++i) logits.data()[i] = rng.next_normal();
    LabelMap labels(1, pixels);
    for (int p = 0; p < pixels; ++p) labels.labels[static_cast<size_t>(p)] =
        static_cast<uint8_t>(p == 2 ? LabelMap::kUnlabeled : rng.next_int(k));
    std::vector<uint8_t> mask(pixels, 1);
    mask[4] = 0;

    for (bool bg : {false, true}) {
        auto res = instance_ce_loss(softmax_channels(logits), labels, mask, bg);
        auto f = [&](const Eigen::VectorXd& flat) {
            Eigen::MatrixXd l = Eigen::Map<const Eigen::MatrixXd>(flat.data(), k + 1, pixels);
            return instance_ce_loss(softmax_channels(l), labels, mask, bg).loss;
        };
        Eigen::VectorXd fd = oracles::finite_difference(
            f, Eigen::Map<const Eigen::VectorXd>(logits.data(), logits.size()));
        CHECK(oracles::max_rel_error(
                  Eigen::Map<const Eigen::VectorXd>(res.dlogits.data(), res.dlogits.size()), fd) <
              1e-4);
    }
}

TEST_CASE("permutation equivariance of remapped cross entropy") {
    Rng rng(66);
    const int k = 4, pixels = 12;
    Eigen::MatrixXd logits(k + 1, pixels);
    for (int i = 0; i < logits.size(); ++i) logits.data()[i] = rng.next_normal();
    LabelMap labels(3, 4);
    for (auto& l : labels.labels) l = static_cast<uint8_t>(rng.next_int(k));

    std::vector<int> canonical_to_local{2, 0, 3, 1};
    Eigen::MatrixXd p_local_rows = permutation_matrix(invert_permutation(canonical_to_local));

    LabelMap permuted = labels;
    for (auto& l : permuted.labels) l = static_cast<uint8_t>(canonical_to_local[l]);

    double direct = instance_ce_loss(softmax_channels(logits), labels, {}, false).loss;
    double remapped =
        instance_ce_loss(softmax_channels(remap_logits(p_local_rows, logits)), permuted, {}, false)
            .loss;
    CHECK(direct == doctest::Approx(remapped).epsilon(1e-12));
}

TEST_CASE("permutation confidence") {
    LabelMap a = map_from({{0, 0}, {1, 1}});
    CHECK(permutation_confidence(a, a, {0, 1}) == 1.0);

    LabelMap rendered = map_from({{0, 0}, {0, 0}});
    LabelMap local = map_from({{1, 1}, {1, 1}});
    CHECK(permutation_confidence(rendered, local, {1, 0}) == 1.0);

    // 10x10 maps agreeing on 73 of 100 jointly labeled pixels.
    LabelMap pred(10, 10), gt(10, 10);
    for (int p = 0; p < 100; ++p) {
        gt.labels[static_cast<size_t>(p)] = 0;
        pred.labels[static_cast<size_t>(p)] = p < 73 ? 0 : 1;
    }
    CHECK(permutation_confidence(pred, gt, {0, 1}) == doctest::Approx(0.73));

    LabelMap empty(2, 2);
    CHECK(permutation_confidence(empty, empty, {0, 1}) == 0.0);
}

TEST_CASE("active view set update") {
    ActiveViewSet s = ActiveViewSet::with_reference(0, 0.9);
    CHECK(s.is_active(0));

    auto unchanged = update_active_set(s, {0.0, 0.0, 0.0}, {});
    CHECK(unchanged.active == s.active);

    auto added = update_active_set(s, {0.0, 0.95, 0.0}, {});
    CHECK(added.is_active(1));

    auto boundary = update_active_set(s, {0.0, 0.9, 0.0}, {});
    CHECK_FALSE(boundary.is_active(1));  // strict inequality

    auto gated = update_active_set(s, {0.0, 0.95, 0.0}, {true, false, true});
    CHECK_FALSE(gated.is_active(1));

    // Monotone growth over a random trace.
    Rng rng(9);
    ActiveViewSet cur = s;
    size_t last = cur.active.size();
    for (int step = 0; step < 50; ++step) {
        std::vector<double> scores(4);
        for (auto& v : scores) v = rng.next_double();
        cur = update_active_set(cur, scores, {});
        CHECK(cur.active.size() >= last);
        CHECK(cur.is_active(0));
        last = cur.active.size();
    }
}

TEST_CASE("unseen mask definition") {
    // Local map contains every id: mask all true.
    LabelMap rendered = map_from({{0, 1}, {2, 255}});
    LabelMap local = map_from({{1, 2}, {0, 255}});
    auto m = unseen_mask(rendered, {0, 1, 2}, local);
    CHECK(std::count(m.begin(), m.end(), 1) == 4);

    // Rendered shows instance 1 but local never contains perm(1)=2.
    LabelMap local2 = map_from({{0, 0}, {0, 255}});
    auto m2 = unseen_mask(rendered, {0, 2, 1}, local2);
    CHECK(m2[0] == 1);   // rendered 0 -> local 0, present
    CHECK(m2[1] == 0);   // rendered 1 -> local 2, absent
    CHECK(m2[2] == 0);   // rendered 2 -> local 1, absent
    CHECK(m2[3] == 1);   // background stays supervised
}

TEST_CASE("decoder zero weights give uniform probabilities") {
    IdentityDecoder d;
    d.w1 = Eigen::MatrixXd::Zero(4, 3);
    d.b1 = Eigen::VectorXd::Zero(4);
    d.w2 = Eigen::MatrixXd::Zero(5, 4);
    d.b2 = Eigen::VectorXd::Zero(5);
    Eigen::MatrixXd f = Eigen::MatrixXd::Random(3, 7);
    Eigen::MatrixXd logits = decode_identity(d, f);
    CHECK(logits.cwiseAbs().maxCoeff() == 0.0);
    Eigen::MatrixXd probs = softmax_channels(logits);
    CHECK(probs(0, 0) == doctest::Approx(0.2));
}

TEST_CASE("exact identity decoder passes features through") {
    Rng rng(12);
    const int dim = 16;
    IdentityDecoder d = IdentityDecoder::exact_identity(dim, Eigen::VectorXd::Zero(dim));
    Eigen::MatrixXd f(dim, 9);
    for (int i = 0; i < f.size(); ++i) f.data()[i] = rng.next_normal();
    Eigen::MatrixXd logits = decode_identity(d, f);
    CHECK((logits - f).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decoder gradients match finite differences") {
    Rng rng(13);
    const int c = 5, hidden = 6, out = 4, pixels = 3;
    for (int trial = 0; trial < 10; ++trial) {
        IdentityDecoder d = IdentityDecoder::seeded(c, hidden, out, rng);
        Eigen::MatrixXd f(c, pixels), weight(out, pixels);
        for (int i = 0; i < f.size(); ++i) f.data()[i] = rng.next_normal();
        for (int i = 0; i < weight.size(); ++i) weight.data()[i] = rng.next_normal();

        DecoderTape tape;
        decode_identity(d, f, &tape);
        DecoderGrads grads;
        grads.init_like(d);
        Eigen::MatrixXd dfeat = decode_identity_backward(d, f, tape, weight, &grads, true);

        auto pack = [&](const IdentityDecoder& dd, const Eigen::MatrixXd& ff) {
            Eigen::VectorXd v(dd.w1.size() + dd.b1.size() + dd.w2.size() + dd.b2.size() + ff.size());
            int off = 0;
            auto put = [&](const double* p, int n) {
                for (int i = 0; i < n; ++i) v[off++] = p[i];
            };
            put(dd.w1.data(), static_cast<int>(dd.w1.size()));
            put(dd.b1.data(), static_cast<int>(dd.b1.size()));
            put(dd.w2.data(), static_cast<int>(dd.w2.size()));
            put(dd.b2.data(), static_cast<int>(dd.b2.size()));
            put(ff.data(), static_cast<int>(ff.size()));
            return v;
        };
        auto f_all = [&](const Eigen::VectorXd& v) {
            IdentityDecoder dd = d;
            Eigen::MatrixXd ff = f;
            int off = 0;
            auto take = [&](double* p, int n) {
                for (int i = 0; i < n; ++i) p[i] = v[off++];
            };
            take(dd.w1.data(), static_cast<int>(dd.w1.size()));
            take(dd.b1.data(), static_cast<int>(dd.b1.size()));
            take(dd.w2.data(), static_cast<int>(dd.w2.size()));
            take(dd.b2.data(), static_cast<int>(dd.b2.size()));
            take(ff.data(), static_cast<int>(ff.size()));
            return decode_identity(dd, ff).cwiseProduct(weight).sum();
        };
        Eigen::VectorXd fd = oracles::finite_difference(f_all, pack(d, f));

        Eigen::VectorXd an(fd.size());
        int off = 0;
        auto put = [&](const double* p, int n) {
            for (int i = 0; i < n; ++i) an[off++] = p[i];
        };
        put(grads.dw1.data(), static_cast<int>(grads.dw1.size()));
        put(grads.db1.data(), static_cast<int>(grads.db1.size()));
        put(grads.dw2.data(), static_cast<int>(grads.dw2.size()));
        put(grads.db2.data(), static_cast<int>(grads.db2.size()));
        put(dfeat.data(), static_cast<int>(dfeat.size()));
        CHECK(oracles::max_rel_error(an, fd) < 1e-4);
    }
}
