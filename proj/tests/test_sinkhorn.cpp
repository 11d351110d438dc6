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

Eigen::MatrixXd random_matrix(int n, Rng& rng, double scale = 1.0) {
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = scale * rng.next_normal();
    return m;
}

}  // namespace

TEST_CASE("sinkhorn uniform fixed point") {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(2, 2);
    Eigen::MatrixXd s = sinkhorn_normalize(z, 1);
    CHECK(s(0, 0) == doctest::Approx(0.5));
    CHECK(s(1, 1) == doctest::Approx(0.5));
}

TEST_CASE("sinkhorn sharp diagonal approaches identity") {
    Eigen::MatrixXd z(2, 2);
    z << 10, 0, 0, 10;
    Eigen::MatrixXd s = sinkhorn_normalize(z, 20);
    Eigen::MatrixXd ref = oracles::sinkhorn_reference(z);
    CHECK((s - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-3);
    CHECK((s - ref).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("sinkhorn leaves a doubly stochastic matrix unchanged") {
    // exp(Z) doubly stochastic: Z = log of a symmetric bistochastic matrix.
    Eigen::MatrixXd b(2, 2);
    b << 0.3, 0.7, 0.7, 0.3;
    Eigen::MatrixXd z = b.array().log();
    Eigen::MatrixXd s = sinkhorn_normalize(z, 1);
    CHECK((s - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sinkhorn input guards") {
    Eigen::MatrixXd bad(2, 2);
    bad << 1.0, std::numeric_limits<double>::infinity(), 0.0, 1.0;
    CHECK_THROWS(sinkhorn_normalize(bad, 5));
    CHECK_THROWS(sinkhorn_normalize(Eigen::MatrixXd::Zero(2, 2), 0));
    CHECK_THROWS(sinkhorn_normalize(Eigen::MatrixXd::Zero(2, 3), 5));
}

TEST_CASE("sinkhorn doubly stochastic property across sizes and seeds") {
    Rng rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 1 + rng.next_int(16);
        Eigen::MatrixXd z = random_matrix(n, rng)
                                .cwiseMax(-PermutationLatent::kLatentClip)
                                .cwiseMin(PermutationLatent::kLatentClip);
        Eigen::MatrixXd s = sinkhorn_normalize(z, 20);
        for (int i = 0; i < n; ++i) CHECK(std::abs(s.row(i).sum() - 1.0) < 1e-3);
        for (int j = 0; j < n; ++j) CHECK(std::abs(s.col(j).sum() - 1.0) < 1e-3);
    }
}

TEST_CASE("sinkhorn backward zero upstream and K=1") {
    Rng rng(55);
    Eigen::MatrixXd z = random_matrix(3, rng);
    CHECK(sinkhorn_backward(z, 20, Eigen::MatrixXd::Zero(3, 3)).cwiseAbs().maxCoeff() == 0.0);

    Eigen::MatrixXd one(1, 1);
    one << 2.7;
    Eigen::MatrixXd up(1, 1);
    up << 1.0;
    CHECK(std::abs(sinkhorn_backward(one, 20, up)(0, 0)) < 1e-15);
}

TEST_CASE("sinkhorn backward matches finite differences") {
    Rng rng(77);
    for (int trial = 0; trial < 25; ++trial) {
        int n = 2 + rng.next_int(5);
        Eigen::MatrixXd z = random_matrix(n, rng);
        Eigen::MatrixXd weight = random_matrix(n, rng);
        Eigen::MatrixXd analytic = sinkhorn_backward(z, 20, weight);
        auto f = [&](const Eigen::VectorXd& flat) {
            Eigen::MatrixXd zz = Eigen::Map<const Eigen::MatrixXd>(flat.data(), n, n);
            return sinkhorn_normalize(zz, 20).cwiseProduct(weight).sum();
        };
        Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(z.data(), n * n);
        Eigen::VectorXd fd = oracles::finite_difference(f, flat);
        Eigen::VectorXd an = Eigen::Map<const Eigen::VectorXd>(analytic.data(), n * n);
        CHECK(oracles::max_rel_error(an, fd) < 1e-4);
    }
}

TEST_CASE("row softmax backward matches finite differences") {
    Rng rng(78);
    for (int trial = 0; trial < 10; ++trial) {
        int n = 2 + rng.next_int(4);
        Eigen::MatrixXd z = random_matrix(n, rng);
        Eigen::MatrixXd weight = random_matrix(n, rng);
        Eigen::MatrixXd analytic = row_softmax_backward(z, weight);
        auto f = [&](const Eigen::VectorXd& flat) {
            Eigen::MatrixXd zz = Eigen::Map<const Eigen::MatrixXd>(flat.data(), n, n);
            return row_softmax(zz).cwiseProduct(weight).sum();
        };
        Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(z.data(), n * n);
        Eigen::VectorXd fd = oracles::finite_difference(f, flat);
        Eigen::VectorXd an = Eigen::Map<const Eigen::VectorXd>(analytic.data(), n * n);
        CHECK(oracles::max_rel_error(an, fd) < 1e-4);
    }
}

TEST_CASE("hungarian basics") {
    Eigen::MatrixXd one(1, 1);
    one << 0.0;
    CHECK(hungarian_assign(one) == std::vector<int>{0});

    Eigen::MatrixXd two(2, 2);
    two << 1, 2, 2, 1;
    auto perm = hungarian_assign(two);
    CHECK(perm == std::vector<int>{0, 1});
    CHECK(assignment_cost(two, perm) == doctest::Approx(2.0));

    CHECK_THROWS(hungarian_assign(Eigen::MatrixXd::Zero(2, 3)));
    Eigen::MatrixXd nan2 = Eigen::MatrixXd::Constant(2, 2, std::nan(""));
    CHECK_THROWS(hungarian_assign(nan2));
}

TEST_CASE("hungarian matches exhaustive search") {
    Rng rng(303);
    for (int trial = 0; trial < 40; ++trial) {
        int n = 2 + rng.next_int(4);  // up to 5x5
        Eigen::MatrixXd cost = random_matrix(n, rng, 2.0);
        auto fast = hungarian_assign(cost);
        auto brute = oracles::brute_force_assignment(cost);
        CHECK(fast == brute);
    }
}

TEST_CASE("hungarian lexicographic tie break") {
    Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(4, 4, 0.25);
    CHECK(hungarian_assign(uniform) == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("harden extracts the implied match") {
    CHECK(harden(Eigen::MatrixXd::Identity(3, 3)) == std::vector<int>{0, 1, 2});
    CHECK(harden(Eigen::MatrixXd::Constant(3, 3, 1.0 / 3)) == std::vector<int>{0, 1, 2});
    Eigen::MatrixXd z(2, 2);
    z << 10, 0, 0, 10;
    CHECK(harden(sinkhorn_normalize(z, 20)) == std::vector<int>{0, 1});
}

TEST_CASE("sharpened sinkhorn argmax matches hungarian assignment") {
    Rng rng(404);
    int checked = 0;
    for (int trial = 0; trial < 60 && checked < 25; ++trial) {
        int n = 2 + rng.next_int(5);
        Eigen::MatrixXd z = random_matrix(n, rng);
        // Require a clearly distinct optimum (gap in total score > 0.05).
        auto best = oracles::brute_force_assignment(-z);
        double best_score = -assignment_cost(-z, best);
        double second = -std::numeric_limits<double>::infinity();
        std::vector<int> perm(static_cast<size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        do {
            if (perm == best) continue;
            double sc = 0.0;
            for (int i = 0; i < n; ++i) sc += z(i, perm[static_cast<size_t>(i)]);
            second = std::max(second, sc);
        } while (std::next_permutation(perm.begin(), perm.end()));
        if (best_score - second < 0.05) continue;
        ++checked;
        // Sharpening holds in the converged limit; 200 iterations suffice at
        // this scale (the 20-iteration default is a training-loop choice).
        Eigen::MatrixXd s = sinkhorn_normalize(50.0 * z, 200);
        for (int i = 0; i < n; ++i) {
            int arg;
            s.row(i).maxCoeff(&arg);
            CHECK(arg == best[static_cast<size_t>(i)]);
        }
    }
    CHECK(checked >= 20);
}

TEST_CASE("permutation matrix helpers") {
    std::vector<int> p{2, 0, 1};
    CHECK(is_permutation(p));
    CHECK(invert_permutation(p) == std::vector<int>{1, 2, 0});
    CHECK_FALSE(is_permutation({0, 0, 1}));
    Eigen::MatrixXd m = permutation_matrix(p);
    CHECK(m(0, 2) == 1.0);
    CHECK(m.sum() == 3.0);
}
