#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>

// Conventions used throughout: right-handed frames, vertical axis = +Z,
// quaternions stored scalar-first (w,x,y,z) in files and APIs that take
// raw arrays. Eigen::Quaterniond handles the internal layout.

namespace mocap {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;
using Mat3 = Eigen::Matrix3d;
using Isometry = Eigen::Isometry3d;

inline constexpr double kGravity = 9.81;

// Shortest-arc spherical interpolation with hemisphere flip. Falls back to
// normalized lerp when the inputs are nearly aligned (|dot| > 1 - 1e-8).
inline Quat slerp(const Quat& q0, Quat q1, double alpha) {
    double d = q0.dot(q1);
    if (d < 0.0) {
        q1.coeffs() = -q1.coeffs();
        d = -d;
    }
    if (d > 1.0 - 1e-8) {
        Quat out;
        out.coeffs() = (1.0 - alpha) * q0.coeffs() + alpha * q1.coeffs();
        out.normalize();
        return out;
    }
    const double theta = std::acos(std::min(d, 1.0));
    const double s = std::sin(theta);
    const double w0 = std::sin((1.0 - alpha) * theta) / s;
    const double w1 = std::sin(alpha * theta) / s;
    Quat out;
    out.coeffs() = w0 * q0.coeffs() + w1 * q1.coeffs();
    out.normalize();
    return out;
}

// Rotation-vector (axis * angle) log map, shortest representation.
inline Vec3 quat_log(const Quat& q_in) {
    Quat q = q_in;
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    const double vn = q.vec().norm();
    if (vn < 1e-12) return 2.0 * q.vec();  // small-angle limit
    const double angle = 2.0 * std::atan2(vn, q.w());
    return (angle / vn) * q.vec();
}

inline Quat quat_exp(const Vec3& v) {
    const double angle = v.norm();
    if (angle < 1e-12) {
        Quat q(1.0, 0.5 * v.x(), 0.5 * v.y(), 0.5 * v.z());
        q.normalize();
        return q;
    }
    const double half = 0.5 * angle;
    const Vec3 axis = v / angle;
    const double s = std::sin(half);
    return Quat(std::cos(half), s * axis.x(), s * axis.y(), s * axis.z());
}

// Geodesic angle between two rotations, in [0, pi].
inline double quat_angle(const Quat& a, const Quat& b) {
    double d = std::abs(a.dot(b));
    d = std::min(d, 1.0);
    return 2.0 * std::acos(d);
}

// Heading = rotation of the root's local +X axis projected onto the ground
// plane. Returns the yaw angle about +Z.
inline double heading_angle(const Quat& root_rot) {
    const Vec3 fwd = root_rot * Vec3::UnitX();
    if (fwd.head<2>().norm() < 1e-9) {
        // Facing straight up/down; fall back to the local +Z axis projection.
        const Vec3 up = root_rot * Vec3::UnitZ();
        return std::atan2(up.y(), up.x());
    }
    return std::atan2(fwd.y(), fwd.x());
}

inline Quat yaw_rotation(double angle) {
    return Quat(Eigen::AngleAxisd(angle, Vec3::UnitZ()));
}

inline bool is_unit(const Quat& q, double tol = 1e-6) {
    return std::abs(q.norm() - 1.0) < tol;
}

inline bool finite(const Vec3& v) { return v.allFinite(); }
inline bool finite(const Quat& q) { return q.coeffs().allFinite(); }

}  // namespace mocap
