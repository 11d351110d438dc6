#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace inst4d {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;

// Quaternion stored as (w, x, y, z).
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    Quat() = default;
    Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}
    explicit Quat(const Vec4& v) : w(v[0]), x(v[1]), y(v[2]), z(v[3]) {}

    static Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }
    static Quat pure(const Vec3& v) { return {0.0, v[0], v[1], v[2]}; }

    Vec4 vec4() const { return {w, x, y, z}; }
    Vec3 vec() const { return {x, y, z}; }

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }

    Quat conjugate() const { return {w, -x, -y, -z}; }

    Quat operator+(const Quat& o) const { return {w + o.w, x + o.x, y + o.y, z + o.z}; }
    Quat operator-(const Quat& o) const { return {w - o.w, x - o.x, y - o.y, z - o.z}; }
    Quat operator*(double s) const { return {w * s, x * s, y * s, z * s}; }

    // Hamilton product.
    Quat operator*(const Quat& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }

    Quat normalized() const {
        double n = norm();
        if (n < 1e-300) throw std::runtime_error("Quat::normalized: zero norm");
        return {w / n, x / n, y / n, z / n};
    }

    // Resolve the double-sign ambiguity: w >= 0; if w == 0 the first nonzero
    // component is made positive.
    Quat canonicalized() const {
        double s = 1.0;
        if (w < 0.0) {
            s = -1.0;
        } else if (w == 0.0) {
            if (x != 0.0) s = x > 0.0 ? 1.0 : -1.0;
            else if (y != 0.0) s = y > 0.0 ? 1.0 : -1.0;
            else s = z >= 0.0 ? 1.0 : -1.0;
        }
        return {w * s, x * s, y * s, z * s};
    }

    // Rotate a vector; valid for unit quaternions.
    Vec3 rotate(const Vec3& v) const {
        Quat r = (*this) * Quat::pure(v) * conjugate();
        return r.vec();
    }

    // Rotation matrix; valid for unit quaternions.
    Eigen::Matrix3d matrix() const {
        Eigen::Matrix3d m;
        m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
             2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
        return m;
    }

    // Shepperd-style extraction; input need not be exactly orthonormal.
    static Quat from_matrix(const Eigen::Matrix3d& m) {
        double tr = m(0, 0) + m(1, 1) + m(2, 2);
        Quat q;
        if (tr > 0.0) {
            double s = std::sqrt(tr + 1.0) * 2.0;
            q = {0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s,
                 (m(1, 0) - m(0, 1)) / s};
        } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
            double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
            q = {(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s,
                 (m(0, 2) + m(2, 0)) / s};
        } else if (m(1, 1) > m(2, 2)) {
            double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
            q = {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s,
                 (m(1, 2) + m(2, 1)) / s};
        } else {
            double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
            q = {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s,
                 (m(1, 2) + m(2, 1)) / s, 0.25 * s};
        }
        return q.normalized().canonicalized();
    }

    // Rotation of `angle` radians about a (not necessarily unit) axis.
    static Quat from_axis_angle(const Vec3& axis, double angle) {
        Vec3 a = axis.normalized();
        double h = 0.5 * angle;
        double s = std::sin(h);
        return Quat{std::cos(h), a[0] * s, a[1] * s, a[2] * s}.canonicalized();
    }
};

// Rigid transform: rotation (unit quaternion, canonical sign) + translation.
struct SE3 {
    Quat rotation;
    Vec3 translation = Vec3::Zero();

    SE3() = default;
    SE3(const Quat& q, const Vec3& t) : rotation(q.normalized().canonicalized()), translation(t) {}

    static SE3 identity() { return {}; }

    Vec3 apply(const Vec3& p) const { return rotation.rotate(p) + translation; }

    SE3 inverse() const {
        Quat qi = rotation.conjugate();
        return SE3(qi, -qi.rotate(translation));
    }

    // Applies `other` first, then this.
    SE3 compose(const SE3& other) const {
        return SE3(rotation * other.rotation, rotation.rotate(other.translation) + translation);
    }

    Eigen::Matrix4d matrix() const {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = rotation.matrix();
        m.topRightCorner<3, 1>() = translation;
        return m;
    }

    static SE3 from_matrix(const Eigen::Matrix4d& m) {
        return SE3(Quat::from_matrix(m.topLeftCorner<3, 3>()), m.topRightCorner<3, 1>());
    }
};

inline SE3 se3_compose(const SE3& a, const SE3& b) { return a.compose(b); }
inline Vec3 se3_apply(const SE3& t, const Vec3& p) { return t.apply(p); }

// Dual quaternion; represents a rigid transform when the real part is unit
// and dot(real, dual) == 0.
struct DualQuat {
    Quat real;
    Quat dual{0.0, 0.0, 0.0, 0.0};

    static DualQuat identity() { return {Quat::identity(), {0.0, 0.0, 0.0, 0.0}}; }

    DualQuat operator+(const DualQuat& o) const { return {real + o.real, dual + o.dual}; }
    DualQuat operator*(double s) const { return {real * s, dual * s}; }

    // Dual-quaternion product (real parts multiply, duals cross-distribute).
    DualQuat operator*(const DualQuat& o) const {
        return {real * o.real, real * o.dual + dual * o.real};
    }

    double plucker_error() const { return real.dot(dual); }

    // Unit-real, Pluecker-orthogonal representative of the same transform.
    DualQuat normalized() const {
        double n = real.norm();
        if (n < 1e-9) throw std::runtime_error("DualQuat::normalized: real part near zero");
        Quat r = real * (1.0 / n);
        Quat d = dual * (1.0 / n);
        d = d - r * r.dot(d);
        return {r, d};
    }
};

inline DualQuat se3_to_dq(const SE3& t) {
    DualQuat d;
    d.real = t.rotation;
    d.dual = Quat::pure(t.translation) * t.rotation * 0.5;
    return d;
}

inline SE3 dq_to_se3(const DualQuat& d) {
    double n = d.real.norm();
    if (n < 1e-9) throw std::runtime_error("dq_to_se3: real part near zero");
    DualQuat u = d.normalized();
    Quat t = u.dual * u.real.conjugate() * 2.0;
    return SE3(u.real, t.vec());
}

}  // namespace inst4d
