#pragma once

// Spherical two-view geometry: essential matrix from relative pose, epipolar
// plane constraints, parallax and epipole gates, DLT triangulation via SVD,
// and the angular reprojection check used to accept map points.

#include <algorithm>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "panoslam/camera.hpp"
#include "panoslam/se3.hpp"

namespace panoslam {

/// For bearings p1 (frame 1) and p2 (frame 2) of a common point,
/// p2^T * e * p1 == 0. Normalized to unit-translation scale.
struct EssentialMatrix {
  Mat3 e = Mat3::Zero();
};

/// Plane through the camera-1 center spanned by the baseline and an observed
/// direction in frame 2; corresponding frame-1 bearings lie in it.
struct EpipolarPlane {
  Vec3 n = Vec3::Zero();  // unit normal (a, b, c)
  bool degenerate = false;
};

struct TwoViewGeometryConfig {
  double epipole_angle_deg = 1.0;   // min angle between a bearing and the epipole
  double epiplane_angle_deg = 0.5;  // max bearing-to-epipolar-plane angle
  double reproj_angle_deg = 1.0;    // max angular reprojection error per view
  double parallax_deg = 0.5;        // min median parallax to triangulate a pair
  double min_range_m = 0.1;         // min range in each camera frame
};

enum class TriangulationStatus {
  kAccepted,
  kDegenerate,      // rank-deficient system (zero baseline, epipole rays)
  kAtInfinity,      // homogeneous w ~ 0
  kTooClose,        // range below min_range in some view
  kAngularError,    // reprojection deviates beyond the angular threshold
};

struct TriangulationResult {
  Vec3 point = Vec3::Zero();  // world coordinates; valid iff accepted
  double angular_error_1 = 0;  // radians
  double angular_error_2 = 0;
  TriangulationStatus status = TriangulationStatus::kDegenerate;

  bool accepted() const { return status == TriangulationStatus::kAccepted; }
};

/// Relative transform taking frame-1 camera coordinates to frame-2:
/// T12 = T2 * T1^-1 for world-to-camera poses T1, T2.
inline Pose relative_pose(const Pose& t1, const Pose& t2) {
  return t2 * t1.inverse();
}

inline EssentialMatrix essential_from_poses(const Pose& t1, const Pose& t2) {
  const Pose t12 = relative_pose(t1, t2);
  const double b = t12.t.norm();
  if (b < 1e-12)
    throw std::invalid_argument("essential_from_poses: zero baseline");
  return {skew(t12.t / b) * t12.R};
}

inline EpipolarPlane epipolar_plane(const EssentialMatrix& e12,
                                    const Bearing& p2) {
  EpipolarPlane pl;
  const Vec3 coeffs = e12.e.transpose() * p2;  // row vector p2^T * E12
  const double n = coeffs.norm();
  if (n < 1e-12) {
    pl.degenerate = true;
    return pl;
  }
  pl.n = coeffs / n;
  return pl;
}

/// Squared point-to-plane distance for a plane through the origin, evaluated
/// as (a*X + b*Y + c*Z)^2 / (a^2 + b^2 + c^2). For a unit bearing this equals
/// sin^2 of the angle between the bearing and the plane.
inline double sq_plane_distance(const EpipolarPlane& plane, const Vec3& p) {
  const double num = plane.n.dot(p);
  return num * num / plane.n.squaredNorm();
}

/// True iff p is at least mu_deg away from the epipole direction and its
/// antipode (boundary inclusive).
inline bool epipole_angle_ok(const Bearing& p, const Bearing& epipole,
                             double mu_deg) {
  return std::abs(p.dot(epipole)) <= std::cos(deg2rad(mu_deg)) + 1e-15;
}

inline double angular_error(const Bearing& p_est, const Bearing& p_obs) {
  return std::acos(std::clamp(p_est.dot(p_obs), -1.0, 1.0));
}

/// Median over matches of the angle between the rotation-compensated frame-1
/// bearing and the frame-2 bearing. Zero for pure rotation.
inline double check_parallax(const std::vector<Bearing>& bearings_1,
                             const std::vector<Bearing>& bearings_2,
                             const Mat3& r12) {
  if (bearings_1.empty() || bearings_1.size() != bearings_2.size())
    throw std::invalid_argument("check_parallax: empty or mismatched matches");
  std::vector<double> angles(bearings_1.size());
  for (size_t i = 0; i < bearings_1.size(); ++i)
    angles[i] = angular_error((r12 * bearings_1[i]).normalized(), bearings_2[i]);
  auto mid = angles.begin() + static_cast<std::ptrdiff_t>(angles.size() / 2);
  std::nth_element(angles.begin(), mid, angles.end());
  if (angles.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(angles.begin(), mid);
  return 0.5 * (lo + hi);
}

/// DLT triangulation of a bearing correspondence. Builds the 6x4 system
/// [p1]x * [R1|t1] ; [p2]x * [R2|t2], solves by SVD, then verifies range and
/// angular reprojection in both views.
inline TriangulationResult triangulate_dlt(
    const Bearing& p1, const Bearing& p2, const Pose& t1, const Pose& t2,
    const TwoViewGeometryConfig& cfg = {}) {
  Eigen::Matrix<double, 3, 4> m1, m2;
  m1 << t1.R, t1.t;
  m2 << t2.R, t2.t;

  Eigen::Matrix<double, 6, 4> a;
  a.topRows<3>() = skew(p1) * m1;
  a.bottomRows<3>() = skew(p2) * m2;

  Eigen::JacobiSVD<Eigen::Matrix<double, 6, 4>> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();

  TriangulationResult res;
  // A nullspace of dimension >= 2 (zero baseline, rays through the epipole)
  // leaves the point undetermined.
  if (sv(2) <= 1e-9 * sv(0)) {
    res.status = TriangulationStatus::kDegenerate;
    return res;
  }

  Eigen::Vector4d x = svd.matrixV().col(3);
  x.normalize();
  if (x(3) < 0) x = -x;
  if (std::abs(x(3)) < 1e-8) {
    res.status = TriangulationStatus::kAtInfinity;
    return res;
  }
  const Vec3 pw = x.head<3>() / x(3);
  res.point = pw;

  const Vec3 pc1 = t1.act(pw);
  const Vec3 pc2 = t2.act(pw);
  if (pc1.norm() < cfg.min_range_m || pc2.norm() < cfg.min_range_m) {
    res.status = TriangulationStatus::kTooClose;
    return res;
  }

  res.angular_error_1 = angular_error(pc1.normalized(), p1);
  res.angular_error_2 = angular_error(pc2.normalized(), p2);
  const double thresh = deg2rad(cfg.reproj_angle_deg);
  if (res.angular_error_1 > thresh || res.angular_error_2 > thresh) {
    res.status = TriangulationStatus::kAngularError;
    return res;
  }

  res.status = TriangulationStatus::kAccepted;
  return res;
}

}  // namespace panoslam
