#pragma once

// Spherical reprojection residuals and the Levenberg-Marquardt pose solver.
//
// Residuals live in the 2-dim tangent plane at the *observed* bearing (pixel
// residuals blow up near the poles of an equirectangular image; tangent
// residuals are isotropic on the sphere). The residual is scaled so that its
// norm equals the angular error in radians, which makes the Huber threshold
// an angle.

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "panoslam/camera.hpp"
#include "panoslam/se3.hpp"

namespace panoslam {

using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat26 = Eigen::Matrix<double, 2, 6>;
using Mat36 = Eigen::Matrix<double, 3, 6>;

/// Orthonormal basis (t1, t2) of the tangent plane at unit vector b, built
/// deterministically by Gram-Schmidt against the axis of least |component|.
struct TangentFrame {
  Vec3 t1, t2;
};

inline TangentFrame tangent_basis(const Vec3& b) {
  int k = 0;
  double best = std::abs(b.x());
  if (std::abs(b.y()) < best) { best = std::abs(b.y()); k = 1; }
  if (std::abs(b.z()) < best) { k = 2; }
  Vec3 e = Vec3::Zero();
  e(k) = 1.0;
  TangentFrame f;
  f.t1 = (e - e.dot(b) * b).normalized();
  f.t2 = b.cross(f.t1);
  return f;
}

/// Log-map tangent residual: r = (theta / sin theta) * (t1.p, t2.p), with
/// ||r|| equal to the angle between p and b. Zero iff p == b (for angles
/// below pi).
inline Vec2 tangent_residual(const Vec3& b_obs, const TangentFrame& frame,
                             const Vec3& p_unit) {
  const double c = std::clamp(b_obs.dot(p_unit), -1.0, 1.0);
  const double th = std::acos(c);
  double g;
  if (th < 1e-4)
    g = 1.0 + th * th / 6.0;
  else
    g = th / std::sin(th);
  return g * Vec2(frame.t1.dot(p_unit), frame.t2.dot(p_unit));
}

/// d(residual)/d(p_unit), 2x3. Valid away from the antipode of b_obs.
inline Mat23 tangent_residual_jacobian(const Vec3& b_obs,
                                       const TangentFrame& frame,
                                       const Vec3& p_unit) {
  const double c = std::clamp(b_obs.dot(p_unit), -1.0, 1.0);
  double th = std::acos(c);
  if (th > kPi - 1e-6) th = kPi - 1e-6;
  double g, h;  // h = (sin th - th cos th) / sin^3 th
  if (th < 1e-4) {
    g = 1.0 + th * th / 6.0;
    h = 1.0 / 3.0 + th * th / 15.0;
  } else {
    const double s = std::sin(th);
    g = th / s;
    h = (s - th * std::cos(th)) / (s * s * s);
  }
  Mat23 j;
  j.row(0) = g * frame.t1.transpose();
  j.row(1) = g * frame.t2.transpose();
  const Vec2 tp(frame.t1.dot(p_unit), frame.t2.dot(p_unit));
  j.row(0) -= h * tp(0) * b_obs.transpose();
  j.row(1) -= h * tp(1) * b_obs.transpose();
  return j;
}

/// d(q/||q||)/dq.
inline Mat3 normalize_jacobian(const Vec3& q) {
  const double n = q.norm();
  const Vec3 p = q / n;
  return (Mat3::Identity() - p * p.transpose()) / n;
}

/// Pose tangent update used everywhere: R <- exp(w) R, t <- exp(w) t + v
/// for delta = (w, v). dq/d(delta) for q = R P + t is [-[q]x | I].
inline Pose apply_pose_delta(const Pose& pose,
                             const Eigen::Matrix<double, 6, 1>& delta) {
  const Mat3 dr = rotation_exp(delta.head<3>());
  return {dr * pose.R, dr * pose.t + delta.tail<3>()};
}

inline double huber_cost(double s, double delta) {
  if (s <= delta) return 0.5 * s * s;
  return delta * (s - 0.5 * delta);
}

inline double huber_weight(double s, double delta) {
  if (s <= delta) return 1.0;
  return delta / s;
}

/// A 3D map point position paired with the unit bearing observing it.
struct PoseCorrespondence {
  Vec3 point_w;
  Bearing bearing;
};

struct PoseLmConfig {
  double huber_rad = deg2rad(1.5);
  double lambda_init = 1e-4;
  double lambda_factor = 10.0;
  int max_iterations = 20;
  double min_cost_decrease = 1e-10;
  double min_step_norm = 1e-10;
};

struct PoseLmResult {
  Pose pose;
  double final_cost = 0;
  std::vector<double> cost_history;  // accepted costs, starting at initial
  bool converged = false;
};

/// Residual 2-vector and 2x6 pose Jacobian of one correspondence.
inline void pose_residual(const Pose& pose, const PoseCorrespondence& c,
                          Vec2* r, Mat26* j) {
  const Vec3 q = pose.act(c.point_w);
  const Vec3 p = q.normalized();
  const TangentFrame frame = tangent_basis(c.bearing);
  *r = tangent_residual(c.bearing, frame, p);
  if (j) {
    const Mat23 dr_dp = tangent_residual_jacobian(c.bearing, frame, p);
    const Mat3 dp_dq = normalize_jacobian(q);
    Mat36 dq_dd;
    dq_dd.leftCols<3>() = -skew(q);
    dq_dd.rightCols<3>() = Mat3::Identity();
    *j = dr_dp * dp_dq * dq_dd;
  }
}

inline double pose_cost(const Pose& pose,
                        const std::vector<PoseCorrespondence>& corrs,
                        double huber_rad) {
  double cost = 0;
  for (const auto& c : corrs) {
    Vec2 r;
    pose_residual(pose, c, &r, nullptr);
    cost += huber_cost(r.norm(), huber_rad);
  }
  return cost;
}

/// Huber-robust LM over the 6-dim pose tangent. Accepted costs are strictly
/// non-increasing.
inline PoseLmResult lm_optimize_pose(
    const std::vector<PoseCorrespondence>& corrs, const Pose& initial,
    const PoseLmConfig& cfg = {}) {
  PoseLmResult res;
  res.pose = initial;
  double cost = pose_cost(initial, corrs, cfg.huber_rad);
  res.cost_history.push_back(cost);

  double lambda = cfg.lambda_init;
  bool any_step = false;
  bool hit_stop_criterion = false;
  for (int iter = 0; iter < cfg.max_iterations && !hit_stop_criterion; ++iter) {
    Eigen::Matrix<double, 6, 6> hess = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> grad = Eigen::Matrix<double, 6, 1>::Zero();
    for (const auto& c : corrs) {
      Vec2 r;
      Mat26 j;
      pose_residual(res.pose, c, &r, &j);
      const double w = huber_weight(r.norm(), cfg.huber_rad);
      hess.noalias() += w * j.transpose() * j;
      grad.noalias() += w * j.transpose() * r;
    }

    bool stepped = false;
    while (lambda < 1e10) {
      Eigen::Matrix<double, 6, 6> damped = hess;
      damped.diagonal().array() += lambda;
      const Eigen::Matrix<double, 6, 1> delta = damped.ldlt().solve(-grad);
      if (!delta.allFinite()) {
        lambda *= cfg.lambda_factor;
        continue;
      }
      const Pose candidate = apply_pose_delta(res.pose, delta);
      const double new_cost = pose_cost(candidate, corrs, cfg.huber_rad);
      if (new_cost < cost) {
        const double decrease = cost - new_cost;
        res.pose = candidate;
        cost = new_cost;
        res.cost_history.push_back(cost);
        lambda = std::max(lambda / cfg.lambda_factor, 1e-12);
        stepped = true;
        any_step = true;
        if (decrease < cfg.min_cost_decrease ||
            delta.norm() < cfg.min_step_norm)
          hit_stop_criterion = true;
        break;
      }
      lambda *= cfg.lambda_factor;
    }
    if (!stepped) break;  // max damping reached without a cost reduction
  }
  res.final_cost = cost;
  // Divergence means: never reduced the cost even at max damping while the
  // cost is clearly nonzero. Sitting at an (near-)exact minimum is fine.
  res.converged = any_step || hit_stop_criterion || cost < 1e-16;
  return res;
}

}  // namespace panoslam
