#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "inst4d/photometric.hpp"
#include "inst4d/rasterizer.hpp"
#include "inst4d/rng.hpp"
#include "oracles.hpp"

using namespace inst4d;

namespace {

constexpr double kBlurFloor = 0.3;

// Small seeded scene in front of a ring camera.
GaussianSet make_scene(int n, int channels, Rng& rng) {
    GaussianSet g;
    g.resize(n, channels);
    g.num_instances = 1;
    for (int i = 0; i < n; ++i) {
        g.means[0][static_cast<size_t>(i)] =
            Vec3(rng.next_uniform(-0.8, 0.8), rng.next_uniform(-0.8, 0.8), rng.next_uniform(-0.5, 0.5));
        g.colors[static_cast<size_t>(i)] =
            Vec3(rng.next_double(), rng.next_double(), rng.next_double());
        g.opacity_logits[static_cast<size_t>(i)] = rng.next_uniform(-0.5, 1.0);
        g.log_scales[static_cast<size_t>(i)] =
            Vec3(rng.next_uniform(-2.3, -1.7), rng.next_uniform(-2.3, -1.7), rng.next_uniform(-2.3, -1.7));
        Quat q{rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal()};
        g.rotations[static_cast<size_t>(i)] = q.normalized().canonicalized();
        for (int c = 0; c < channels; ++c) g.features(c, i) = rng.next_normal();
    }
    g.rotations_t[0] = g.rotations;
    return g;
}

Camera test_camera(int size = 16, double focal = 24.0) {
    return Camera::look_at({0, -4.0, 0.5}, {0, 0, 0}, {0, 0, 1}, focal, size, size);
}

// Flatten every differentiable parameter class of the set.
Eigen::VectorXd pack_params(const GaussianSet& g) {
    const int n = g.size(), c = g.feature_dim();
    Eigen::VectorXd v(n * (3 + 1 + 3 + 4 + 3) + n * c);
    int off = 0;
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) v[off++] = g.colors[static_cast<size_t>(i)][k];
        v[off++] = g.opacity_logits[static_cast<size_t>(i)];
        for (int k = 0; k < 3; ++k) v[off++] = g.log_scales[static_cast<size_t>(i)][k];
        Vec4 q = g.rotations_t[0][static_cast<size_t>(i)].vec4();
        for (int k = 0; k < 4; ++k) v[off++] = q[k];
        for (int k = 0; k < 3; ++k) v[off++] = g.means[0][static_cast<size_t>(i)][k];
        for (int k = 0; k < c; ++k) v[off++] = g.features(k, i);
    }
    return v;
}

GaussianSet unpack_params(const GaussianSet& base, const Eigen::VectorXd& v) {
    GaussianSet g = base;
    const int n = g.size(), c = g.feature_dim();
    int off = 0;
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) g.colors[static_cast<size_t>(i)][k] = v[off++];
        g.opacity_logits[static_cast<size_t>(i)] = v[off++];
        for (int k = 0; k < 3; ++k) g.log_scales[static_cast<size_t>(i)][k] = v[off++];
        Quat q{v[off], v[off + 1], v[off + 2], v[off + 3]};
        off += 4;
        g.rotations[static_cast<size_t>(i)] = q;  // raw; rasterizer normalizes
        for (int k = 0; k < 3; ++k) g.means[0][static_cast<size_t>(i)][k] = v[off++];
        for (int k = 0; k < c; ++k) g.features(k, i) = v[off++];
    }
    g.rotations_t[0] = g.rotations;
    return g;
}

Eigen::VectorXd pack_grads(const RasterGrads& gr, int n, int c) {
    Eigen::VectorXd v(n * (3 + 1 + 3 + 4 + 3) + n * c);
    int off = 0;
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) v[off++] = gr.colors[static_cast<size_t>(i)][k];
        v[off++] = gr.opacity_logits[static_cast<size_t>(i)];
        for (int k = 0; k < 3; ++k) v[off++] = gr.log_scales[static_cast<size_t>(i)][k];
        for (int k = 0; k < 4; ++k) v[off++] = gr.rotations[static_cast<size_t>(i)][k];
        for (int k = 0; k < 3; ++k) v[off++] = gr.means[static_cast<size_t>(i)][k];
        for (int k = 0; k < c; ++k) v[off++] = gr.features(k, i);
    }
    return v;
}

}  // namespace

TEST_CASE("projection basics") {
    GaussianSet g;
    g.resize(1, 1);
    Camera cam;  // identity extrinsic: camera at origin looking +z
    cam.fx = cam.fy = 30.0;
    cam.cx = cam.cy = 8.0;
    cam.width = cam.height = 16;

    const double depth = 5.0, scale = 0.3;
    g.means[0][0] = {0, 0, depth};
    g.log_scales[0] = Vec3::Constant(std::log(scale));

    auto s = project_gaussian(g, 0, 0, cam);
    REQUIRE(s.has_value());
    CHECK(s->mean2d[0] == doctest::Approx(8.0));
    CHECK(s->mean2d[1] == doctest::Approx(8.0));
    CHECK(s->depth == doctest::Approx(depth));
    double expect = std::pow(30.0 * scale / depth, 2);
    CHECK(s->cov2d(0, 0) == doctest::Approx(expect + kBlurFloor));
    CHECK(s->cov2d(1, 1) == doctest::Approx(expect + kBlurFloor));
    CHECK(s->cov2d(0, 1) == doctest::Approx(0.0).epsilon(1e-9));

    g.means[0][0] = {0, 0, -depth};
    CHECK_FALSE(project_gaussian(g, 0, 0, cam).has_value());

    g.means[0][0] = {100.0, 0, depth};  // footprint misses the frame
    CHECK_FALSE(project_gaussian(g, 0, 0, cam).has_value());
}

TEST_CASE("single opaque splat dominates its pixel") {
    GaussianSet g;
    g.resize(1, 4);
    Camera cam;
    cam.fx = cam.fy = 30.0;
    cam.cx = cam.cy = 8.5;
    cam.width = cam.height = 17;
    g.means[0][0] = {0, 0, 4.0};
    g.colors[0] = {1, 0, 0};
    g.opacity_logits[0] = 12.0;  // opacity ~ 1
    g.log_scales[0] = Vec3::Constant(std::log(0.8));
    g.features.col(0) << 1.0, -2.0, 0.5, 3.0;

    RenderOutput out = rasterize(g, 0, cam);
    CHECK(out.image.at(8, 8, 0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(out.image.at(8, 8, 1) == doctest::Approx(0.0));
    CHECK(out.features(0, 8 * 17 + 8) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(out.features(3, 8 * 17 + 8) == doctest::Approx(3.0).epsilon(1e-4));
}

TEST_CASE("two stacked splats composite by the alpha formula") {
    GaussianSet g;
    g.resize(2, 1);
    Camera cam;
    cam.fx = cam.fy = 30.0;
    cam.cx = cam.cy = 8.5;  // pixel (8,8) center lands exactly on the axis
    cam.width = cam.height = 17;
    g.means[0][0] = {0, 0, 3.0};
    g.means[0][1] = {0, 0, 6.0};
    g.colors[0] = {1, 0, 0};
    g.colors[1] = {0, 1, 0};
    g.opacity_logits[0] = g.opacity_logits[1] = 0.0;  // opacity 0.5
    g.log_scales[0] = g.log_scales[1] = Vec3::Constant(std::log(0.5));

    RenderOutput out = rasterize(g, 0, cam);
    // g = 1 at the exact center for both splats.
    double expect_r = 0.5 * 1.0;
    double expect_g = (1.0 - 0.5) * 0.5 * 1.0;
    CHECK(out.image.at(8, 8, 0) == doctest::Approx(expect_r).epsilon(1e-12));
    CHECK(out.image.at(8, 8, 1) == doctest::Approx(expect_g).epsilon(1e-12));
    CHECK(out.alpha[8 * 17 + 8] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("empty scene renders black") {
    GaussianSet g;
    g.resize(0, 2);
    RenderOutput out = rasterize(g, 0, test_camera());
    CHECK(*std::max_element(out.image.data.begin(), out.image.data.end()) == 0.0);
    CHECK(out.features.cwiseAbs().maxCoeff() == 0.0);
    CHECK(*std::max_element(out.alpha.begin(), out.alpha.end()) == 0.0);
}

TEST_CASE("compositing weights sum to accumulated alpha and never exceed one") {
    Rng rng(21);
    GaussianSet g = make_scene(20, 2, rng);
    Camera cam = test_camera();
    RenderOutput out = rasterize(g, 0, cam);
    for (int p = 0; p < cam.width * cam.height; ++p) {
        double sum = 0.0, trans = 1.0;
        for (int j = out.contrib_offsets[static_cast<size_t>(p)];
             j < out.contrib_offsets[static_cast<size_t>(p) + 1]; ++j) {
            double a = out.contrib_alpha[static_cast<size_t>(j)];
            CHECK(a >= 0.0);
            sum += trans * a;
            trans *= 1.0 - a;
        }
        CHECK(sum <= 1.0 + 1e-12);
        CHECK(sum == doctest::Approx(out.alpha[static_cast<size_t>(p)]).epsilon(1e-12));
    }
}

TEST_CASE("rendering is invariant to input order") {
    Rng rng(33);
    GaussianSet g = make_scene(15, 3, rng);
    Camera cam = test_camera();
    RenderOutput a = rasterize(g, 0, cam);

    // Reverse the storage order.
    GaussianSet r = g;
    const int n = g.size();
    for (int i = 0; i < n; ++i) {
        int j = n - 1 - i;
        r.colors[static_cast<size_t>(i)] = g.colors[static_cast<size_t>(j)];
        r.opacity_logits[static_cast<size_t>(i)] = g.opacity_logits[static_cast<size_t>(j)];
        r.log_scales[static_cast<size_t>(i)] = g.log_scales[static_cast<size_t>(j)];
        r.rotations[static_cast<size_t>(i)] = g.rotations[static_cast<size_t>(j)];
        r.means[0][static_cast<size_t>(i)] = g.means[0][static_cast<size_t>(j)];
        r.features.col(i) = g.features.col(j);
    }
    r.rotations_t[0] = r.rotations;
    RenderOutput b = rasterize(r, 0, cam);
    CHECK(a.image.data == b.image.data);  // bit identical
    CHECK((a.features - b.features).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("feature channels mirroring colors render identically to the image") {
    Rng rng(44);
    GaussianSet g = make_scene(12, 3, rng);
    for (int i = 0; i < g.size(); ++i) g.features.col(i) = g.colors[static_cast<size_t>(i)];
    Camera cam = test_camera();
    RenderOutput out = rasterize(g, 0, cam);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            for (int c = 0; c < 3; ++c)
                CHECK(out.features(c, y * cam.width + x) == out.image.at(y, x, c));
}

TEST_CASE("backward with zero upstream is zero") {
    Rng rng(55);
    GaussianSet g = make_scene(8, 2, rng);
    Camera cam = test_camera();
    RenderOutput out = rasterize(g, 0, cam);
    Image dimg(cam.height, cam.width);
    Eigen::MatrixXd dfeat = Eigen::MatrixXd::Zero(2, cam.width * cam.height);
    RasterGrads grads = rasterize_backward(g, 0, cam, out, dimg, dfeat);
    CHECK(pack_grads(grads, g.size(), 2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("color gradient equals blend weight for a single splat") {
    GaussianSet g;
    g.resize(1, 1);
    Camera cam;
    cam.fx = cam.fy = 30.0;
    cam.cx = cam.cy = 8.5;
    cam.width = cam.height = 17;
    g.means[0][0] = {0, 0, 4.0};
    g.opacity_logits[0] = 0.4;
    g.log_scales[0] = Vec3::Constant(std::log(0.5));

    RenderOutput out = rasterize(g, 0, cam);
    Image dimg(cam.height, cam.width);
    dimg.at(8, 8, 0) = 1.0;  // d(pixel red)/d(anything)
    RasterGrads grads = rasterize_backward(g, 0, cam, out, dimg, {});
    double weight = out.alpha[8 * 17 + 8];  // single splat: weight == alpha
    CHECK(grads.colors[0][0] == doctest::Approx(weight).epsilon(1e-12));
    CHECK(grads.colors[0][1] == 0.0);
}

TEST_CASE("rasterizer backward matches finite differences for all parameter classes") {
    Camera cam = test_camera(16, 24.0);
    const int channels = 3;
    int checked = 0;
    for (uint64_t seed = 100; seed < 140 && checked < 3; ++seed) {
        Rng rng(seed);
        GaussianSet g = make_scene(5, channels, rng);
        RenderOutput probe = rasterize(g, 0, cam);
        // Keep finite differences away from the footprint cutoff and the
        // early-termination threshold.
        if (probe.boundary_margin < 2e-3 || probe.min_transmittance < 1e-2) continue;
        ++checked;

        Image dimg(cam.height, cam.width);
        Eigen::MatrixXd dfeat(channels, cam.width * cam.height);
        Rng wrng(seed + 991);
        for (double& v : dimg.data) v = wrng.next_normal();
        for (int i = 0; i < dfeat.size(); ++i) dfeat.data()[i] = wrng.next_normal();

        RasterGrads grads = rasterize_backward(g, 0, cam, probe, dimg, dfeat);
        Eigen::VectorXd analytic = pack_grads(grads, g.size(), channels);

        auto loss = [&](const Eigen::VectorXd& v) {
            GaussianSet gg = unpack_params(g, v);
            RenderOutput out = rasterize(gg, 0, cam);
            double total = 0.0;
            for (size_t i = 0; i < out.image.data.size(); ++i)
                total += out.image.data[i] * dimg.data[i];
            total += out.features.cwiseProduct(dfeat).sum();
            return total;
        };
        Eigen::VectorXd fd = oracles::finite_difference(loss, pack_params(g));
        CHECK(oracles::max_rel_error(analytic, fd, 1e-5) < 1e-3);
    }
    CHECK(checked == 3);
}

TEST_CASE("label map rendering") {
    const int k = 3;  // instances; channels = 4
    IdentityDecoder dec = IdentityDecoder::exact_identity(k + 1, Eigen::VectorXd::Zero(k + 1));
    RenderOutput out;
    out.features = Eigen::MatrixXd::Zero(k + 1, 4);
    out.features(2, 1) = 1.0;  // pixel 1 covered by instance 2
    out.features(0, 2) = 0.7;  // pixel 2 covered by instance 0
    out.features(1, 3) = 0.7;

    LabelMap map = render_label_map(out, 2, 2, dec);
    CHECK(map.labels[0] == LabelMap::kUnlabeled);  // uniform -> background wins ties
    CHECK(map.labels[1] == 2);
    CHECK(map.labels[2] == 0);
    CHECK(map.labels[3] == 1);

    Eigen::MatrixXd swap = Eigen::MatrixXd::Identity(k, k);
    swap.topLeftCorner(2, 2) << 0, 1, 1, 0;
    LabelMap swapped = render_label_map(out, 2, 2, dec, &swap);
    CHECK(swapped.labels[2] == 1);  // 0 and 1 exchanged
    CHECK(swapped.labels[3] == 0);
    CHECK(swapped.labels[1] == 2);
}

TEST_CASE("l1 loss values and gradient") {
    Image a(16, 16), b(16, 16);
    CHECK(l1_loss(a, b).loss == 0.0);
    for (double& v : b.data) v = 1.0;
    CHECK(l1_loss(a, b).loss == doctest::Approx(1.0));

    Rng rng(77);
    for (double& v : a.data) v = rng.next_double();
    for (double& v : b.data) v = rng.next_double();
    auto res = l1_loss(a, b);
    auto f = [&](const Eigen::VectorXd& v) {
        Image img = a;
        for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = v[static_cast<int>(i)];
        return l1_loss(img, b).loss;
    };
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(a.data.data(), static_cast<int>(a.data.size()));
    Eigen::VectorXd fd = oracles::finite_difference(f, x);
    Eigen::VectorXd an = Eigen::Map<const Eigen::VectorXd>(res.grad.data.data(), static_cast<int>(res.grad.data.size()));
    CHECK(oracles::max_rel_error(an, fd) < 1e-4);
}

TEST_CASE("ssim closed-form constants") {
    Image a(16, 16), b(16, 16);
    CHECK(ssim_loss(a, b).loss == doctest::Approx(0.0));
    for (double& v : b.data) v = 0.5;
    const double c1 = 0.01 * 0.01;
    double expect = c1 / (0.25 + c1);
    CHECK(ssim_value(a, b) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(ssim_loss(a, b).loss == doctest::Approx(1.0 - expect).epsilon(1e-12));
}

TEST_CASE("ssim gradient matches finite differences") {
    Rng rng(88);
    Image a(16, 16), b(16, 16);
    for (double& v : a.data) v = rng.next_double();
    for (double& v : b.data) v = rng.next_double();
    auto res = ssim_loss(a, b);
    auto f = [&](const Eigen::VectorXd& v) {
        Image img = a;
        for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = v[static_cast<int>(i)];
        return ssim_loss(img, b).loss;
    };
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(a.data.data(), static_cast<int>(a.data.size()));
    Eigen::VectorXd fd = oracles::finite_difference(f, x);
    Eigen::VectorXd an = Eigen::Map<const Eigen::VectorXd>(res.grad.data.data(), static_cast<int>(res.grad.data.size()));
    CHECK(oracles::max_rel_error(an, fd) < 1e-4);
}

TEST_CASE("photometric dimension mismatch throws") {
    Image a(16, 16), b(16, 17);
    CHECK_THROWS(l1_loss(a, b));
    CHECK_THROWS(ssim_loss(a, b));
}
