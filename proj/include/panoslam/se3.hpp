#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "panoslam/camera.hpp"

namespace panoslam {

/// Rigid transform. Used both as world-to-camera (T_cw, the SLAM-internal
/// convention: x_c = R * x_w + t) and as camera-in-world in trajectory files;
/// call sites say which.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static Pose Identity() { return {}; }

  Vec3 act(const Vec3& x) const { return R * x + t; }

  Pose inverse() const { return {R.transpose(), -(R.transpose() * t)}; }

  /// Composition: (a * b).act(x) == a.act(b.act(x)).
  friend Pose operator*(const Pose& a, const Pose& b) {
    return {a.R * b.R, a.R * b.t + a.t};
  }

  /// Camera center in the source frame (for T_cw: the camera center in world).
  Vec3 center() const { return -(R.transpose() * t); }

  bool is_finite() const { return R.allFinite() && t.allFinite(); }

  Eigen::Quaterniond quat() const { return Eigen::Quaterniond(R); }

  static Pose from_quat(const Eigen::Quaterniond& q, const Vec3& t) {
    return {q.normalized().toRotationMatrix(), t};
  }
};

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

/// Rodrigues' formula.
inline Mat3 rotation_exp(const Vec3& w) {
  const double th = w.norm();
  if (th < 1e-12) {
    return Mat3::Identity() + skew(w);
  }
  const Vec3 a = w / th;
  const Mat3 k = skew(a);
  return Mat3::Identity() + std::sin(th) * k + (1 - std::cos(th)) * (k * k);
}

inline Vec3 rotation_log(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double th = std::acos(c);
  if (th < 1e-10) return Vec3::Zero();
  Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (th > kPi - 1e-6) {
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part instead.
    Mat3 s = (r + Mat3::Identity()) * 0.5;
    int i;
    s.diagonal().maxCoeff(&i);
    Vec3 a = s.col(i) / std::sqrt(std::max(s(i, i), 1e-300));
    a.normalize();
    return th * a;
  }
  return (th / (2.0 * std::sin(th))) * axis;
}

/// Angle of the relative rotation between a and b, radians.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  return rotation_log(a.transpose() * b).norm();
}

}  // namespace panoslam
