#pragma once

// Frame-to-map tracking: constant-velocity prediction, descriptor matching
// against a local-map snapshot under an angular gate, Huber-robust LM pose
// estimation with outlier flagging, keyframe selection, and the seeded
// two-frame relative-pose solver used to bootstrap a monocular run.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "panoslam/camera.hpp"
#include "panoslam/config.hpp"
#include "panoslam/features.hpp"
#include "panoslam/image.hpp"
#include "panoslam/optim.hpp"
#include "panoslam/se3.hpp"
#include "panoslam/two_view.hpp"

namespace panoslam {

struct Frame {
  int index = -1;
  double timestamp = 0;
  ImageU8 gray;
  ImageRgb rgb;
  std::vector<KeyPoint> keypoints;
  std::vector<Descriptor> descriptors;
  std::vector<Bearing> bearings;
  std::vector<Color3u8> kp_colors;
  Pose pose;  // T_cw, valid once tracked
  std::vector<int64_t> matched_point;  // keypoint slot -> map point id or -1
};

enum class TrackStatus { kInitializing, kOk, kLost };

struct TrackState {
  TrackStatus status = TrackStatus::kInitializing;
  Pose current;             // T_cw of the last tracked frame
  Pose velocity;            // T_curr * T_prev^-1; identity until 2 frames tracked
  int64_t reference_kf = -1;
  int tracked_points = 0;
  int frames_since_kf = 0;
  int frames_tracked = 0;
};

struct TrackingConfig {
  double huber_deg = 1.5;
  double inlier_deg = 2.0;
  int min_inliers = 15;
  double kf_ratio = 0.9;
  int kf_min_interval = 3;
  int kf_max_interval = 30;
  double match_ratio = 0.8;
  int max_hamming = 64;
  double search_angle_deg = 5.0;  // match gate around the predicted bearing
  PoseLmConfig lm;

  static TrackingConfig from(const Config& c) {
    TrackingConfig t;
    t.huber_deg = c.get_double("track.huber_deg");
    t.inlier_deg = c.get_double("track.inlier_deg");
    t.min_inliers = c.get_int("track.min_inliers");
    t.kf_ratio = c.get_double("track.kf_ratio");
    t.kf_min_interval = c.get_int("track.kf_min_interval");
    t.kf_max_interval = c.get_int("track.kf_max_interval");
    t.match_ratio = c.get_double("features.match_ratio");
    t.max_hamming = c.get_int("features.max_hamming");
    t.lm.huber_rad = deg2rad(t.huber_deg);
    return t;
  }
};

struct PoseEstimate {
  Pose pose;
  std::vector<uint8_t> inliers;  // per correspondence
  int inlier_count = 0;
  double final_cost = 0;
  std::vector<double> cost_history;  // accepted costs of the last LM run
  bool converged = false;
};

/// Robust pose estimation: an initial Huber-LM pass over everything, outlier
/// classification at the angular inlier threshold, then a refinement pass on
/// the surviving set.
inline PoseEstimate estimate_pose(const std::vector<PoseCorrespondence>& corrs,
                                  const Pose& initial,
                                  const TrackingConfig& cfg) {
  if (corrs.size() < 6)
    throw std::invalid_argument("estimate_pose: need >= 6 correspondences");
  if (!initial.is_finite())
    throw std::invalid_argument("estimate_pose: non-finite initial pose");

  PoseLmConfig lm = cfg.lm;
  lm.huber_rad = deg2rad(cfg.huber_deg);

  PoseLmResult run = lm_optimize_pose(corrs, initial, lm);

  const double inlier_rad = deg2rad(cfg.inlier_deg);
  auto classify = [&](const Pose& pose, std::vector<uint8_t>* flags) {
    flags->assign(corrs.size(), 0);
    int count = 0;
    for (size_t i = 0; i < corrs.size(); ++i) {
      const Vec3 p = pose.act(corrs[i].point_w).normalized();
      if (angular_error(p, corrs[i].bearing) <= inlier_rad) {
        (*flags)[i] = 1;
        ++count;
      }
    }
    return count;
  };

  PoseEstimate est;
  est.pose = run.pose;
  est.inlier_count = classify(run.pose, &est.inliers);
  est.cost_history = run.cost_history;
  est.final_cost = run.final_cost;
  est.converged = run.converged;

  if (est.inlier_count >= 6 &&
      est.inlier_count < static_cast<int>(corrs.size())) {
    // Refine on the survivors, then once more with a tight Huber so that
    // outliers that slipped inside the inlier cone lose their leverage.
    Pose pose = run.pose;
    for (int round = 0; round < 2; ++round) {
      std::vector<PoseCorrespondence> inlier_corrs;
      inlier_corrs.reserve(static_cast<size_t>(est.inlier_count));
      for (size_t i = 0; i < corrs.size(); ++i)
        if (est.inliers[i]) inlier_corrs.push_back(corrs[i]);
      if (inlier_corrs.size() < 6) break;
      PoseLmConfig round_cfg = lm;
      if (round == 1) round_cfg.huber_rad = lm.huber_rad / 8.0;
      const PoseLmResult refined =
          lm_optimize_pose(inlier_corrs, pose, round_cfg);
      if (!refined.converged) break;
      pose = refined.pose;
      est.pose = refined.pose;
      est.cost_history = refined.cost_history;
      est.final_cost = refined.final_cost;
      est.converged = refined.converged;
      est.inlier_count = classify(refined.pose, &est.inliers);
    }
  }
  return est;
}

/// Constant-velocity prediction: the last pose composed with the velocity.
inline Pose predict_pose(const TrackState& state) {
  if (state.status != TrackStatus::kOk)
    throw std::logic_error("predict_pose: tracker not in ok state");
  return state.velocity * state.current;
}

/// Keyframe policy: need a keyframe when tracking decayed below the reference
/// ratio or the interval cap is hit, but never before the minimum interval.
inline bool decide_keyframe(const TrackState& state, int ref_tracked,
                            const TrackingConfig& cfg) {
  if (state.status != TrackStatus::kOk) return false;
  if (state.frames_since_kf < cfg.kf_min_interval) return false;
  return state.tracked_points < cfg.kf_ratio * ref_tracked ||
         state.frames_since_kf >= cfg.kf_max_interval;
}

// ---------------------------------------------------------------------------
// Frame-to-local-map matching
// ---------------------------------------------------------------------------

struct LocalMapPoint {
  int64_t id = -1;
  Vec3 position;
  Descriptor descriptor;
};

/// Consistent read snapshot of the local map (copy-on-read; mapping-side
/// mutation never invalidates it).
struct MapSnapshot {
  std::vector<LocalMapPoint> points;
  int ref_tracked = 0;
  int64_t ref_kf = -1;
};

struct FrameMatch {
  int64_t point_id;
  int keypoint;  // slot in the frame
  int distance;
};

struct FrameMatchResult {
  std::vector<FrameMatch> matches;
  // Points with at least one keypoint inside the angular gate; these had a
  // chance to match, so they are the ones whose visible counter advances.
  std::vector<int64_t> offered_ids;
};

/// Matches snapshot points to frame keypoints: project with the predicted
/// pose, gate by angle, pick the closest descriptor, and resolve keypoint
/// conflicts by distance (ties by smaller point id).
inline FrameMatchResult match_frame_to_map(const Frame& frame,
                                           const MapSnapshot& snapshot,
                                           const Pose& predicted,
                                           const Intrinsics& intr,
                                           const TrackingConfig& cfg) {
  const double gate_rad = deg2rad(cfg.search_angle_deg);
  const double cos_gate = std::cos(gate_rad);

  // v-band prefilter: sort keypoints by v once, then gate candidates by the
  // latitude extent of the search cone.
  std::vector<int> order(frame.keypoints.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return frame.keypoints[static_cast<size_t>(a)].v <
           frame.keypoints[static_cast<size_t>(b)].v;
  });
  std::vector<double> vs(order.size());
  for (size_t i = 0; i < order.size(); ++i)
    vs[i] = frame.keypoints[static_cast<size_t>(order[i])].v;
  const double v_slack = gate_rad * std::abs(intr.fy) + 2.0;

  FrameMatchResult res;
  std::vector<FrameMatch> best_for_point;
  for (const auto& lp : snapshot.points) {
    const Vec3 pc = predicted.act(lp.position);
    const double n = pc.norm();
    if (n < 1e-9) continue;
    const Bearing proj = pc / n;
    const double v_proj = intr.cy + intr.fy * std::asin(std::clamp(proj.z(), -1.0, 1.0));

    auto lo = std::lower_bound(vs.begin(), vs.end(), v_proj - v_slack);
    auto hi = std::upper_bound(vs.begin(), vs.end(), v_proj + v_slack);
    int best_kp = -1, best_d = cfg.max_hamming + 1;
    bool in_gate = false;
    for (auto it = lo; it != hi; ++it) {
      const int kp = order[static_cast<size_t>(it - vs.begin())];
      if (proj.dot(frame.bearings[static_cast<size_t>(kp)]) < cos_gate) continue;
      in_gate = true;
      const int d =
          lp.descriptor.distance(frame.descriptors[static_cast<size_t>(kp)]);
      if (d < best_d) {
        best_d = d;
        best_kp = kp;
      }
    }
    if (in_gate) res.offered_ids.push_back(lp.id);
    if (best_kp >= 0) best_for_point.push_back({lp.id, best_kp, best_d});
  }

  // One point per keypoint: smaller distance wins, ties to the smaller id.
  std::vector<int> claim(frame.keypoints.size(), -1);
  for (size_t i = 0; i < best_for_point.size(); ++i) {
    const auto& m = best_for_point[i];
    const int prev = claim[static_cast<size_t>(m.keypoint)];
    if (prev < 0) {
      claim[static_cast<size_t>(m.keypoint)] = static_cast<int>(i);
      continue;
    }
    const auto& pm = best_for_point[static_cast<size_t>(prev)];
    if (m.distance < pm.distance ||
        (m.distance == pm.distance && m.point_id < pm.point_id))
      claim[static_cast<size_t>(m.keypoint)] = static_cast<int>(i);
  }
  for (size_t kp = 0; kp < claim.size(); ++kp)
    if (claim[kp] >= 0)
      res.matches.push_back(best_for_point[static_cast<size_t>(claim[kp])]);
  return res;
}

struct TrackFrameResult {
  bool ok = false;
  std::vector<int64_t> offered_ids;  // snapshot points offered to matching
  std::vector<int64_t> inlier_ids;   // points confirmed by pose estimation
  int matches = 0;
  int inliers = 0;
};

/// Tracks one frame against a map snapshot: match, estimate, classify,
/// update the motion model. On failure the state transitions to lost.
inline TrackFrameResult track_frame(Frame& frame, const MapSnapshot& snapshot,
                                    TrackState& state, const Intrinsics& intr,
                                    const TrackingConfig& cfg) {
  TrackFrameResult res;
  frame.matched_point.assign(frame.keypoints.size(), -1);

  const Pose predicted = predict_pose(state);
  FrameMatchResult fm =
      match_frame_to_map(frame, snapshot, predicted, intr, cfg);
  const auto& matches = fm.matches;
  res.offered_ids = std::move(fm.offered_ids);
  res.matches = static_cast<int>(matches.size());
  if (res.matches < std::max(6, cfg.min_inliers)) {
    state.status = TrackStatus::kLost;
    return res;
  }

  // Snapshot points are sorted by id (map iteration order).
  auto find_point = [&](int64_t id) -> const LocalMapPoint* {
    auto it = std::lower_bound(
        snapshot.points.begin(), snapshot.points.end(), id,
        [](const LocalMapPoint& p, int64_t v) { return p.id < v; });
    return (it != snapshot.points.end() && it->id == id) ? &*it : nullptr;
  };

  std::vector<PoseCorrespondence> corrs;
  corrs.reserve(matches.size());
  std::vector<const FrameMatch*> match_ptr;
  for (const auto& m : matches) {
    const LocalMapPoint* lp = find_point(m.point_id);
    if (!lp) continue;
    corrs.push_back(
        {lp->position, frame.bearings[static_cast<size_t>(m.keypoint)]});
    match_ptr.push_back(&m);
  }

  const PoseEstimate est = estimate_pose(corrs, predicted, cfg);
  res.inliers = est.inlier_count;
  if (!est.converged || est.inlier_count < cfg.min_inliers) {
    state.status = TrackStatus::kLost;
    return res;
  }

  frame.pose = est.pose;
  for (size_t i = 0; i < corrs.size(); ++i) {
    if (!est.inliers[i]) continue;
    frame.matched_point[static_cast<size_t>(match_ptr[i]->keypoint)] =
        match_ptr[i]->point_id;
    res.inlier_ids.push_back(match_ptr[i]->point_id);
  }

  if (state.frames_tracked >= 1)
    state.velocity = est.pose * state.current.inverse();
  state.current = est.pose;
  state.tracked_points = est.inlier_count;
  state.frames_since_kf += 1;
  state.frames_tracked += 1;
  state.status = TrackStatus::kOk;
  res.ok = true;
  return res;
}

// ---------------------------------------------------------------------------
// Two-frame bootstrap (monocular tri mode)
// ---------------------------------------------------------------------------

struct RelativePoseEstimate {
  Mat3 r12;           // frame-1 to frame-2 rotation
  Vec3 t12;           // unit baseline direction
  std::vector<int> inlier_matches;  // indices into the input match list
  double median_parallax_rad = 0;
};

namespace detail {

/// Linear 8-point fit of E from bearing pairs (indices into matches).
inline Mat3 linear_essential(const std::vector<Bearing>& p1,
                             const std::vector<Bearing>& p2,
                             const std::vector<int>& idx) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(idx.size()), 9);
  for (size_t k = 0; k < idx.size(); ++k) {
    const Bearing& x = p1[static_cast<size_t>(idx[k])];
    const Bearing& y = p2[static_cast<size_t>(idx[k])];
    a.row(static_cast<Eigen::Index>(k)) << y.x() * x.x(), y.x() * x.y(),
        y.x() * x.z(), y.y() * x.x(), y.y() * x.y(), y.y() * x.z(),
        y.z() * x.x(), y.z() * x.y(), y.z() * x.z();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> e = svd.matrixV().col(8);
  Mat3 em;
  em << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  // Project onto the essential manifold: two equal singular values, rank 2.
  Eigen::JacobiSVD<Mat3> esvd(em, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return esvd.matrixU() * Vec3(1, 1, 0).asDiagonal() *
         esvd.matrixV().transpose();
}

/// Sine of the angle between p1 and the epipolar plane induced by p2.
inline double epipolar_sin(const Mat3& e, const Bearing& p1, const Bearing& p2) {
  const Vec3 plane = e.transpose() * p2;
  const double n = plane.norm();
  if (n < 1e-12) return 0;
  return std::abs(plane.dot(p1)) / n;
}

}  // namespace detail

/// Seeded RANSAC over bearing correspondences: linear essential-matrix model,
/// epipolar-plane-angle inliers, cheirality-style disambiguation of the four
/// (R, t) decompositions by triangulation acceptance.
inline std::optional<RelativePoseEstimate> estimate_relative_pose_ransac(
    const std::vector<Bearing>& p1, const std::vector<Bearing>& p2,
    uint64_t seed, const TwoViewGeometryConfig& geom, int iterations = 200) {
  const int n = static_cast<int>(p1.size());
  if (n < 8 || p2.size() != p1.size()) return std::nullopt;

  const double sin_thresh = std::sin(deg2rad(geom.epiplane_angle_deg));
  std::mt19937_64 rng(seed);

  Mat3 best_e = Mat3::Zero();
  std::vector<int> best_inliers;
  std::vector<int> sample(8);
  for (int it = 0; it < iterations; ++it) {
    // Distinct indices by partial rejection.
    for (int k = 0; k < 8; ++k) {
      for (;;) {
        const int cand = static_cast<int>(rng() % static_cast<uint64_t>(n));
        bool dup = false;
        for (int j = 0; j < k; ++j) dup |= sample[static_cast<size_t>(j)] == cand;
        if (!dup) {
          sample[static_cast<size_t>(k)] = cand;
          break;
        }
      }
    }
    const Mat3 e = detail::linear_essential(p1, p2, sample);
    std::vector<int> inliers;
    for (int i = 0; i < n; ++i)
      if (detail::epipolar_sin(e, p1[static_cast<size_t>(i)],
                               p2[static_cast<size_t>(i)]) < sin_thresh)
        inliers.push_back(i);
    if (inliers.size() > best_inliers.size()) {
      best_inliers = std::move(inliers);
      best_e = e;
    }
  }
  if (best_inliers.size() < 16) return std::nullopt;

  // Re-fit on the consensus set.
  best_e = detail::linear_essential(p1, p2, best_inliers);
  {
    std::vector<int> refined;
    for (int i = 0; i < n; ++i)
      if (detail::epipolar_sin(best_e, p1[static_cast<size_t>(i)],
                               p2[static_cast<size_t>(i)]) < sin_thresh)
        refined.push_back(i);
    if (refined.size() >= best_inliers.size()) best_inliers = std::move(refined);
  }

  // Decompose into the four (R, t) candidates and pick by triangulation.
  Eigen::JacobiSVD<Mat3> svd(best_e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU(), v = svd.matrixV();
  if (u.determinant() < 0) u = -u;
  if (v.determinant() < 0) v = -v;
  Mat3 w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;

  TwoViewGeometryConfig tri_cfg = geom;
  tri_cfg.min_range_m = 1e-3;  // unit-baseline scale here, not meters
  const Pose t1 = Pose::Identity();

  RelativePoseEstimate best_candidate;
  int best_votes = -1;
  for (int ri = 0; ri < 2; ++ri) {
    const Mat3 r = ri == 0 ? Mat3(u * w * v.transpose())
                           : Mat3(u * w.transpose() * v.transpose());
    for (int ti = 0; ti < 2; ++ti) {
      const Vec3 t = (ti == 0 ? 1.0 : -1.0) * u.col(2);
      const Pose t2{r, t};
      int votes = 0;
      for (int i : best_inliers) {
        const auto tri = triangulate_dlt(p1[static_cast<size_t>(i)],
                                         p2[static_cast<size_t>(i)], t1, t2,
                                         tri_cfg);
        votes += tri.accepted();
      }
      if (votes > best_votes) {
        best_votes = votes;
        best_candidate.r12 = r;
        best_candidate.t12 = t;
      }
    }
  }
  if (best_votes < static_cast<int>(best_inliers.size()) / 2) return std::nullopt;

  best_candidate.inlier_matches = best_inliers;
  std::vector<Bearing> in1, in2;
  for (int i : best_inliers) {
    in1.push_back(p1[static_cast<size_t>(i)]);
    in2.push_back(p2[static_cast<size_t>(i)]);
  }
  best_candidate.median_parallax_rad =
      check_parallax(in1, in2, best_candidate.r12);
  return best_candidate;
}

}  // namespace panoslam
