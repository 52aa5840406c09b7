#pragma once

// Trajectory evaluation: timestamp association, closed-form SE(3)/Sim(3)
// alignment (centroid/covariance SVD with the determinant-sign correction),
// ATE RMSE, and the scale factor (the similarity-alignment scale mapping the
// estimate onto ground truth; 1 is ideal).

#include <algorithm>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "panoslam/camera.hpp"
#include "panoslam/io.hpp"

namespace panoslam {

struct PairedPositions {
  std::vector<Vec3> est;
  std::vector<Vec3> gt;
};

enum class AlignMode { kSe3, kSim3 };

/// gt_i ~ scale * rotation * est_i + translation.
struct Alignment {
  double scale = 1;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

/// Greedy nearest-timestamp pairing within max_dt; each pose used at most
/// once. Throws when no pair associates.
inline PairedPositions associate(const io::Trajectory& est,
                                 const io::Trajectory& gt, double max_dt) {
  if (est.empty() || gt.empty())
    throw std::invalid_argument("associate: empty trajectory");

  struct Cand {
    double dt;
    size_t i, j;
  };
  std::vector<Cand> cands;
  for (size_t i = 0; i < est.size(); ++i)
    for (size_t j = 0; j < gt.size(); ++j) {
      const double dt = std::abs(est[i].timestamp - gt[j].timestamp);
      if (dt <= max_dt) cands.push_back({dt, i, j});
    }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.dt != b.dt) return a.dt < b.dt;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });

  std::vector<char> used_i(est.size(), 0), used_j(gt.size(), 0);
  std::vector<std::pair<size_t, size_t>> picked;
  for (const auto& c : cands) {
    if (used_i[c.i] || used_j[c.j]) continue;
    used_i[c.i] = used_j[c.j] = 1;
    picked.emplace_back(c.i, c.j);
  }
  if (picked.empty()) throw std::runtime_error("associate: zero pairs");
  std::sort(picked.begin(), picked.end());

  PairedPositions pairs;
  for (auto [i, j] : picked) {
    pairs.est.push_back(est[i].pose.t);
    pairs.gt.push_back(gt[j].pose.t);
  }
  return pairs;
}

/// Closed-form least-squares alignment minimizing
/// sum ||gt_i - (s R est_i + t)||^2, with s fixed to 1 in SE(3) mode.
inline Alignment align(const PairedPositions& pairs, AlignMode mode) {
  const size_t n = pairs.est.size();
  if (n < 3 || pairs.gt.size() != n)
    throw std::invalid_argument("align: need >= 3 pairs");

  Vec3 mean_est = Vec3::Zero(), mean_gt = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    mean_est += pairs.est[i];
    mean_gt += pairs.gt[i];
  }
  mean_est /= static_cast<double>(n);
  mean_gt /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  double var_est = 0;
  for (size_t i = 0; i < n; ++i) {
    const Vec3 de = pairs.est[i] - mean_est;
    const Vec3 dg = pairs.gt[i] - mean_gt;
    cov += dg * de.transpose();
    var_est += de.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_est /= static_cast<double>(n);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // Rank < 2 leaves the rotation (and with rank 0 the scale) unconstrained.
  if (sv(1) <= 1e-12 * std::max(sv(0), 1e-300) || sv(0) == 0)
    throw std::runtime_error("align: degenerate (collinear or coincident) configuration");

  Vec3 d = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d(2) = -1;

  Alignment a;
  a.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  if (mode == AlignMode::kSim3) {
    if (var_est <= 0) throw std::runtime_error("align: degenerate spread");
    a.scale = sv.dot(d) / var_est;
    if (!(a.scale > 0)) throw std::runtime_error("align: non-positive scale");
  }
  a.translation = mean_gt - a.scale * (a.rotation * mean_est);
  return a;
}

inline double ate_rmse(const PairedPositions& pairs, const Alignment& a) {
  double sum = 0;
  for (size_t i = 0; i < pairs.est.size(); ++i) {
    const Vec3 e =
        pairs.gt[i] - (a.scale * (a.rotation * pairs.est[i]) + a.translation);
    sum += e.squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(pairs.est.size()));
}

/// The Sim(3) alignment scale. Ideal value 1; k times too small a map gives
/// k. Unlike align() this tolerates collinear trajectories (the optimal scale
/// is still well defined when the rotation is not).
inline double scale_factor(const PairedPositions& pairs) {
  const size_t n = pairs.est.size();
  if (n < 2 || pairs.gt.size() != n)
    throw std::invalid_argument("scale_factor: need >= 2 pairs");

  Vec3 mean_est = Vec3::Zero(), mean_gt = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    mean_est += pairs.est[i];
    mean_gt += pairs.gt[i];
  }
  mean_est /= static_cast<double>(n);
  mean_gt /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  double var_est = 0;
  for (size_t i = 0; i < n; ++i) {
    cov += (pairs.gt[i] - mean_gt) * (pairs.est[i] - mean_est).transpose();
    var_est += (pairs.est[i] - mean_est).squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_est /= static_cast<double>(n);
  if (var_est <= 0)
    throw std::runtime_error("scale_factor: degenerate spread");

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  Vec3 d = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d(2) = -1;
  const double s = sv.dot(d) / var_est;
  if (!(s > 0)) throw std::runtime_error("scale_factor: degenerate spread");
  return s;
}

/// Total ground-truth path length, the denominator of relative ATE numbers.
inline double trajectory_length(const io::Trajectory& traj) {
  double len = 0;
  for (size_t i = 1; i < traj.size(); ++i)
    len += (traj[i].pose.t - traj[i - 1].pose.t).norm();
  return len;
}

}  // namespace panoslam
