#pragma once

#include <Eigen/Core>

#include "inst4d/quat.hpp"

namespace inst4d {

using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat44 = Eigen::Matrix4d;

// Left multiplication matrix: a * b == lmat(a) * b.vec4().
inline Mat44 quat_lmat(const Quat& a) {
    Mat44 m;
    m << a.w, -a.x, -a.y, -a.z,
         a.x,  a.w, -a.z,  a.y,
         a.y,  a.z,  a.w, -a.x,
         a.z, -a.y,  a.x,  a.w;
    return m;
}

// Right multiplication matrix: a * b == rmat(b) * a.vec4().
inline Mat44 quat_rmat(const Quat& b) {
    Mat44 m;
    m << b.w, -b.x, -b.y, -b.z,
         b.x,  b.w,  b.z, -b.y,
         b.y, -b.z,  b.w,  b.x,
         b.z,  b.y, -b.x,  b.w;
    return m;
}

inline Vec4 quat_conj_vjp(const Vec4& d) { return {d[0], -d[1], -d[2], -d[3]}; }

// d(q / |q|) / dq applied to an upstream gradient.
inline Vec4 quat_normalize_vjp(const Quat& q_raw, const Vec4& d_unit) {
    Vec4 v = q_raw.vec4();
    double n = v.norm();
    Vec4 u = v / n;
    return (d_unit - u * u.dot(d_unit)) / n;
}

// Jacobian of R(q) * v with respect to q (columns: w, x, y, z). Uses the
// polynomial rotation formula, valid when q is unit in the forward pass.
inline Mat34 rotate_jacobian_q(const Quat& q, const Vec3& v) {
    double w = q.w, x = q.x, y = q.y, z = q.z;
    double vx = v[0], vy = v[1], vz = v[2];
    Mat34 j;
    // dR/dw * v
    j.col(0) = 2.0 * Vec3(-z * vy + y * vz,
                           z * vx - x * vz,
                          -y * vx + x * vy);
    // dR/dx * v
    j.col(1) = 2.0 * Vec3(y * vy + z * vz,
                          y * vx - 2 * x * vy - w * vz,
                          z * vx + w * vy - 2 * x * vz);
    // dR/dy * v
    j.col(2) = 2.0 * Vec3(-2 * y * vx + x * vy + w * vz,
                          x * vx + z * vz,
                          -w * vx + z * vy - 2 * y * vz);
    // dR/dz * v
    j.col(3) = 2.0 * Vec3(-2 * z * vx - w * vy + x * vz,
                          w * vx - 2 * z * vy + y * vz,
                          x * vx + y * vy);
    return j;
}

// Partial derivatives of the rotation matrix entries wrt quaternion
// components; returns dL/dq given dL/dR. Same polynomial convention as above.
inline Vec4 rotation_matrix_vjp(const Quat& q, const Eigen::Matrix3d& d_r) {
    double w = q.w, x = q.x, y = q.y, z = q.z;
    Eigen::Matrix3d dw, dx, dy, dz;
    dw << 0, -z,  y,
          z,  0, -x,
         -y,  x,  0;
    dx << 0,  y,  z,
          y, -2 * x, -w,
          z,  w, -2 * x;
    dy << -2 * y, x, w,
          x, 0, z,
          -w, z, -2 * y;
    dz << -2 * z, -w, x,
          w, -2 * z, y,
          x, y, 0;
    return 2.0 * Vec4(d_r.cwiseProduct(dw).sum(), d_r.cwiseProduct(dx).sum(),
                      d_r.cwiseProduct(dy).sum(), d_r.cwiseProduct(dz).sum());
}

}  // namespace inst4d
