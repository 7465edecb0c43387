// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "gaussforge/common.hpp"

namespace gf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline double Sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Inverse of Sigmoid; the argument is nudged into the open interval so
// inverting saturated activations stays finite.
inline double Logit(double p, double eps = 1e-12) {
    const double q = std::clamp(p, eps, 1.0 - eps);
    return std::log(q / (1.0 - q));
}

inline Mat3 Skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

// Quaternions are stored (w, x, y, z).
inline Vec4 NormalizeQuaternion(const Vec4& q, double degenerate_eps = 1e-8) {
    const double n = q.norm();
    if (n < degenerate_eps) return Vec4(1, 0, 0, 0);
    return q / n;
}

// Rotation matrix of a unit quaternion (w, x, y, z).
inline Mat3 QuaternionToMatrix(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// dR/dq_k for a unit quaternion, k indexing (w, x, y, z).
inline Mat3 QuaternionToMatrixJacobian(const Vec4& q, int k) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 d;
    switch (k) {
        case 0: d << 0, -z, y, z, 0, -x, -y, x, 0; break;
        case 1: d << 0, y, z, y, -2 * x, -w, z, w, -2 * x; break;
        case 2: d << -2 * y, x, w, x, 0, z, -w, z, -2 * y; break;
        default: d << -2 * z, -w, x, w, -2 * z, y, x, y, 0; break;
    }
    return 2.0 * d;
}

// Axis-angle (Rodrigues) rotation.
inline Mat3 Rodrigues(const Vec3& axis_angle) {
    const double theta = axis_angle.norm();
    if (theta < 1e-12) return Mat3::Identity() + Skew(axis_angle);
    const Vec3 axis = axis_angle / theta;
    const Mat3 k = Skew(axis);
    return Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * k * k;
}

// dR/dtheta_a for R = Rodrigues(theta). Uses the closed form
// dR = (theta_a [theta]x + [theta x (I - R) e_a]x) / |theta|^2 * R
// with a series fallback near zero.
inline Mat3 RodriguesJacobian(const Vec3& axis_angle, int a) {
    const double theta2 = axis_angle.squaredNorm();
    Vec3 e = Vec3::Zero();
    e[a] = 1.0;
    if (theta2 < 1e-12) {
        const Mat3 k = Skew(axis_angle);
        const Mat3 ka = Skew(e);
        return ka + 0.5 * (ka * k + k * ka);
    }
    const Mat3 r = Rodrigues(axis_angle);
    const Vec3 v = axis_angle.cross((Mat3::Identity() - r) * e);
    return ((axis_angle[a] * Skew(axis_angle) + Skew(v)) / theta2) * r;
}

// Orthonormal camera frame with +z along `forward`. Rows are the camera
// axes in world coordinates: x image-right, y image-down, z forward, so a
// camera with world +y as "up" maps +y to negative image rows.
inline Mat3 FrameFromForwardUp(const Vec3& forward, const Vec3& up) {
    const Vec3 z = forward.normalized();
    Vec3 x = z.cross(up);
    Require(x.norm() > 1e-10, "forward and up are parallel");
    x.normalize();
    const Vec3 y = z.cross(x);
    Mat3 m;
    m.row(0) = x;
    m.row(1) = y;
    m.row(2) = z;
    return m;
}

}  // namespace gf
