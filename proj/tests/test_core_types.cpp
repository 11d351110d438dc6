#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "inst4d/camera.hpp"
#include "inst4d/diff_geom.hpp"
#include "inst4d/image.hpp"
#include "inst4d/quat.hpp"
#include "inst4d/rng.hpp"
#include "oracles.hpp"

using namespace inst4d;

namespace {

SE3 random_se3(Rng& rng) {
    Quat q{rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal()};
    Vec3 t{rng.next_normal(), rng.next_normal(), rng.next_normal()};
    return SE3(q, t);
}

double se3_distance(const SE3& a, const SE3& b) {
    double dq = (a.rotation.canonicalized().vec4() - b.rotation.canonicalized().vec4()).norm();
    return dq + (a.translation - b.translation).norm();
}

}  // namespace

TEST_CASE("se3 compose identity and inverse") {
    Rng rng(7);
    SE3 t = random_se3(rng);
    CHECK(se3_distance(se3_compose(SE3::identity(), t), t) < 1e-9);
    CHECK(se3_distance(se3_compose(t, t.inverse()), SE3::identity()) < 1e-9);
}

TEST_CASE("se3 compose matches rotation-matrix oracle") {
    SE3 rz(Quat::from_axis_angle({0, 0, 1}, M_PI / 2), Vec3::Zero());
    Vec3 p = se3_apply(se3_compose(rz, rz), {1, 0, 0});
    Eigen::Vector3d expect = oracles::rot_z(90) * oracles::rot_z(90) * Eigen::Vector3d(1, 0, 0);
    CHECK((p - expect).norm() < 1e-12);
    CHECK((p - Vec3(-1, 0, 0)).norm() < 1e-12);
}

TEST_CASE("se3 apply basics") {
    CHECK((se3_apply(SE3::identity(), {1, 2, 3}) - Vec3(1, 2, 3)).norm() == 0.0);
    SE3 lift(Quat::identity(), {0, 0, 5});
    CHECK((se3_apply(lift, Vec3::Zero()) - Vec3(0, 0, 5)).norm() == 0.0);
    SE3 rz(Quat::from_axis_angle({0, 0, 1}, M_PI / 2), Vec3::Zero());
    CHECK((se3_apply(rz, {1, 0, 0}) - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("se3 group laws on sampled triples") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        SE3 a = random_se3(rng), b = random_se3(rng), c = random_se3(rng);
        SE3 left = se3_compose(se3_compose(a, b), c);
        SE3 right = se3_compose(a, se3_compose(b, c));
        CHECK(se3_distance(left, right) < 1e-8);
        // Matrix oracle for composition.
        Eigen::Matrix4d m = a.matrix() * b.matrix();
        CHECK((se3_compose(a, b).matrix() - m).norm() < 1e-8);
    }
}

TEST_CASE("dual quaternion conversion identities") {
    DualQuat id = se3_to_dq(SE3::identity());
    CHECK(id.real.w == 1.0);
    CHECK(id.dual.norm() == 0.0);

    SE3 lift(Quat::identity(), {1, -2, 3});
    DualQuat d = se3_to_dq(lift);
    Quat expect = Quat::pure({1, -2, 3}) * lift.rotation * 0.5;
    CHECK((d.dual.vec4() - expect.vec4()).norm() < 1e-15);

    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        SE3 t = random_se3(rng);
        SE3 back = dq_to_se3(se3_to_dq(t));
        CHECK(se3_distance(back, t) < 1e-9);
        CHECK(std::abs(se3_to_dq(t).plucker_error()) < 1e-9);
        CHECK(std::abs(se3_to_dq(t).real.norm() - 1.0) < 1e-9);
    }
}

TEST_CASE("dq rejects degenerate real part") {
    DualQuat zero;
    zero.real = {0, 0, 0, 0};
    CHECK_THROWS(dq_to_se3(zero));
}

TEST_CASE("se3_to_dq is a homomorphism up to real-part sign") {
    Rng rng(19);
    for (int trial = 0; trial < 30; ++trial) {
        SE3 a = random_se3(rng), b = random_se3(rng);
        DualQuat prod = se3_to_dq(a) * se3_to_dq(b);
        DualQuat direct = se3_to_dq(se3_compose(a, b));
        double sign = prod.real.dot(direct.real) >= 0 ? 1.0 : -1.0;
        CHECK((prod.real.vec4() * sign - direct.real.vec4()).norm() < 1e-8);
        CHECK((prod.dual.vec4() * sign - direct.dual.vec4()).norm() < 1e-8);
    }
}

TEST_CASE("normalization is idempotent") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        Quat q{rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal()};
        Quat n1 = q.normalized();
        Quat n2 = n1.normalized();
        CHECK((n1.vec4() - n2.vec4()).norm() < 1e-15);
        DualQuat d{q.normalized(), Quat{rng.next_normal(), rng.next_normal(), rng.next_normal(),
                                        rng.next_normal()}};
        DualQuat m1 = d.normalized();
        DualQuat m2 = m1.normalized();
        CHECK((m1.real.vec4() - m2.real.vec4()).norm() < 1e-12);
        CHECK((m1.dual.vec4() - m2.dual.vec4()).norm() < 1e-12);
    }
}

TEST_CASE("canonicalization fixes the quaternion sign") {
    Quat q{-0.5, 0.5, 0.5, 0.5};
    CHECK(q.canonicalized().w == 0.5);
    Quat tie{0.0, -1.0, 0.0, 0.0};
    CHECK(tie.canonicalized().x == 1.0);
}

TEST_CASE("quaternion multiplication matrices and jacobians match oracles") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        Quat a{rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal()};
        Quat b{rng.next_normal(), rng.next_normal(), rng.next_normal(), rng.next_normal()};
        CHECK(((a * b).vec4() - quat_lmat(a) * b.vec4()).norm() < 1e-12);
        CHECK(((a * b).vec4() - quat_rmat(b) * a.vec4()).norm() < 1e-12);

        Quat u = a.normalized();
        Vec3 v{rng.next_normal(), rng.next_normal(), rng.next_normal()};
        Mat34 jac = rotate_jacobian_q(u, v);
        for (int comp = 0; comp < 3; ++comp) {
            auto f = [&](const Eigen::VectorXd& qv) {
                Quat qq{qv[0], qv[1], qv[2], qv[3]};
                return (qq.matrix() * v)[comp];  // polynomial form, unnormalized
            };
            Eigen::VectorXd fd = oracles::finite_difference(f, u.vec4());
            CHECK((jac.row(comp).transpose() - fd).norm() < 1e-6);
        }

        // rotation_matrix_vjp against elementwise finite differences.
        Eigen::Matrix3d upstream;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) upstream(r, c) = rng.next_normal();
        auto loss = [&](const Eigen::VectorXd& qv) {
            Quat qq{qv[0], qv[1], qv[2], qv[3]};
            return upstream.cwiseProduct(qq.matrix()).sum();
        };
        Eigen::VectorXd fd = oracles::finite_difference(loss, u.vec4());
        CHECK((rotation_matrix_vjp(u, upstream) - Vec4(fd)).norm() < 1e-6);
    }
}

TEST_CASE("ppm round trip and clamping") {
    Rng rng(5);
    Image img(9, 7);
    for (double& v : img.data) v = rng.next_uniform(-0.2, 1.2);
    auto path = std::filesystem::temp_directory_path() / "inst4d_test.ppm";
    save_ppm(img, path);
    Image back = load_ppm(path);
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    Image q = quantized(img);
    for (size_t i = 0; i < q.data.size(); ++i) {
        CHECK(back.data[i] == doctest::Approx(q.data[i]).epsilon(1e-12));
        CHECK(back.data[i] >= 0.0);
        CHECK(back.data[i] <= 1.0);
    }
    std::filesystem::remove(path);
}

TEST_CASE("pgm round trip keeps sentinel") {
    LabelMap map(4, 5);
    map.at(0, 0) = 3;
    map.at(2, 4) = 0;
    auto path = std::filesystem::temp_directory_path() / "inst4d_test.pgm";
    save_pgm(map, path);
    LabelMap back = load_pgm(path);
    CHECK(back.labels == map.labels);
    CHECK(back.at(1, 1) == LabelMap::kUnlabeled);
    std::filesystem::remove(path);
}

TEST_CASE("camera json round trip") {
    Camera cam = Camera::look_at({3, 0, 1.5}, {0, 0, 0}, {0, 0, 1}, 60.0, 64, 48);
    cam.validate();
    auto path = std::filesystem::temp_directory_path() / "inst4d_cams.json";
    save_cameras_json({cam}, path);
    auto cams = load_cameras_json(path);
    REQUIRE(cams.size() == 1);
    CHECK(cams[0].fx == cam.fx);
    CHECK((cams[0].world_to_cam.matrix() - cam.world_to_cam.matrix()).norm() < 1e-9);
    // A world point in front of the camera lands in front (+z).
    CHECK(cams[0].to_camera({0, 0, 0})[2] > 0.0);
    std::filesystem::remove(path);
}

TEST_CASE("camera validation rejects bad intrinsics") {
    Camera cam;
    cam.fx = -1;
    cam.fy = 1;
    cam.width = 10;
    cam.height = 10;
    CHECK_THROWS(cam.validate());
}
