#pragma once

// Map bookkeeping: keyframes, map points, the covisibility graph, new-point
// creation by epipolar-gated triangulation, duplicate fusion, culling, and a
// Schur-complement local bundle adjustment over tangent-plane residuals.
//
// One mapping thread owns mutation; tracking reads through snapshots (see
// system.hpp). All containers are ordered so iteration is deterministic.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "panoslam/camera.hpp"
#include "panoslam/features.hpp"
#include "panoslam/image.hpp"
#include "panoslam/io.hpp"
#include "panoslam/optim.hpp"
#include "panoslam/se3.hpp"
#include "panoslam/two_view.hpp"

namespace panoslam {

enum class TrackMode { kTri, kDc };

struct MapPoint {
  int64_t id = -1;
  Vec3 position = Vec3::Zero();           // P_w
  Descriptor descriptor;                   // representative
  std::map<int64_t, int> observations;     // keyframe id -> keypoint index
  Color3u8 color;
  int64_t created_kf = -1;
  int visible = 1;  // times offered to tracking
  int found = 1;    // times confirmed as a tracking inlier
};

struct KeyFrame {
  int64_t id = -1;
  int frame_index = -1;
  double timestamp = 0;
  Pose pose;  // T_cw
  std::vector<KeyPoint> keypoints;
  std::vector<Descriptor> descriptors;
  std::vector<Bearing> bearings;     // unit bearing per keypoint
  std::vector<Color3u8> kp_colors;   // for point-cloud export
  std::vector<int64_t> point_ids;    // keypoint slot -> map point id or -1
  std::map<int64_t, int> covisible;  // keyframe id -> shared-point count
  int tracked_points = 0;            // inliers when this keyframe was made

  DepthMap sparse_depth;  // dc-mode byproducts, may be empty
  DepthMap dense_depth;
  ConfidenceMap dense_conf;
};

struct MappingConfig {
  double fuse_angle_deg = 1.0;
  int fuse_hamming = 50;
  int covis_threshold = 15;
  int top_n_neighbors = 10;
  int ba_window = 8;
  double match_ratio = 0.8;
  int max_hamming = 64;
  TwoViewGeometryConfig geom;
};

struct BaResult {
  bool applied = false;   // an accepted step updated the map
  bool diverged = false;  // no step reduced a clearly nonzero cost; map unchanged
  double initial_cost = 0;
  double final_cost = 0;
  std::vector<double> cost_history;  // accepted costs, starting at initial
};

struct CullResult {
  int weak = 0;     // found/visible below the ratio after the grace period
  int orphans = 0;  // < 2 observations, older than 2 keyframes
};

class Map {
 public:
  const std::map<int64_t, KeyFrame>& keyframes() const { return keyframes_; }
  const std::map<int64_t, MapPoint>& points() const { return points_; }

  KeyFrame& keyframe(int64_t id) { return keyframes_.at(id); }
  const KeyFrame& keyframe(int64_t id) const { return keyframes_.at(id); }
  MapPoint* find_point(int64_t id) {
    auto it = points_.find(id);
    return it == points_.end() ? nullptr : &it->second;
  }
  const MapPoint* find_point(int64_t id) const {
    auto it = points_.find(id);
    return it == points_.end() ? nullptr : &it->second;
  }

  int64_t next_point_id() { return next_point_id_++; }

  /// Registers a keyframe. Slots already carrying point ids (tracked matches)
  /// become observations. Covisibility is rebuilt for affected nodes.
  void insert_keyframe(KeyFrame kf, int covis_threshold) {
    if (!kf.pose.is_finite())
      throw std::invalid_argument("insert_keyframe: non-finite pose");
    if (keyframes_.count(kf.id))
      throw std::invalid_argument("insert_keyframe: duplicate id");
    if (kf.point_ids.size() != kf.keypoints.size())
      kf.point_ids.assign(kf.keypoints.size(), -1);
    const int64_t id = kf.id;
    keyframes_.emplace(id, std::move(kf));
    KeyFrame& stored = keyframes_.at(id);
    for (size_t slot = 0; slot < stored.point_ids.size(); ++slot) {
      const int64_t pid = stored.point_ids[slot];
      if (pid < 0) continue;
      MapPoint* p = find_point(pid);
      if (!p || p->observations.count(id)) {
        stored.point_ids[slot] = -1;
        continue;
      }
      p->observations[id] = static_cast<int>(slot);
    }
    rebuild_covisibility(covis_threshold);
  }

  /// Creates a map point with observations in the given keyframe slots.
  int64_t add_point(const Vec3& position, const Descriptor& desc,
                    const Color3u8& color, int64_t created_kf,
                    std::initializer_list<std::pair<int64_t, int>> obs) {
    MapPoint p;
    p.id = next_point_id();
    p.position = position;
    p.descriptor = desc;
    p.color = color;
    p.created_kf = created_kf;
    for (const auto& [kf_id, slot] : obs) {
      p.observations[kf_id] = slot;
      keyframes_.at(kf_id).point_ids[static_cast<size_t>(slot)] = p.id;
    }
    const int64_t id = p.id;
    points_.emplace(id, std::move(p));
    return id;
  }

  void remove_point(int64_t pid) {
    auto it = points_.find(pid);
    if (it == points_.end()) return;
    for (const auto& [kf_id, slot] : it->second.observations) {
      auto kf = keyframes_.find(kf_id);
      if (kf != keyframes_.end() &&
          kf->second.point_ids[static_cast<size_t>(slot)] == pid)
        kf->second.point_ids[static_cast<size_t>(slot)] = -1;
    }
    points_.erase(it);
  }

  /// Covisible neighbors of a keyframe, highest weight first (ties: lower id).
  std::vector<int64_t> neighbors_by_weight(int64_t kf_id, int max_n) const {
    const auto& kf = keyframes_.at(kf_id);
    std::vector<std::pair<int, int64_t>> order;
    order.reserve(kf.covisible.size());
    for (const auto& [nid, w] : kf.covisible) order.emplace_back(-w, nid);
    std::sort(order.begin(), order.end());
    std::vector<int64_t> out;
    for (const auto& [neg_w, nid] : order) {
      out.push_back(nid);
      if (static_cast<int>(out.size()) >= max_n) break;
    }
    return out;
  }

  /// Triangulates new points between a keyframe and its best covisible
  /// neighbors: parallax gate from already-shared points, epipolar gates on
  /// candidate matches of still-unmatched features, DLT + angular check.
  int create_map_points(int64_t kf2_id, const MappingConfig& cfg) {
    KeyFrame& kf2 = keyframes_.at(kf2_id);
    const auto neighbors = neighbors_by_weight(kf2_id, cfg.top_n_neighbors);
    int created = 0;

    for (const int64_t kf1_id : neighbors) {
      KeyFrame& kf1 = keyframes_.at(kf1_id);
      const Pose t12 = relative_pose(kf1.pose, kf2.pose);
      if (t12.t.norm() < 1e-9) continue;  // zero baseline

      // Parallax from correspondences we already trust: the shared points.
      std::vector<Bearing> shared1, shared2;
      for (const auto& [pid, slot2] : point_slots(kf2)) {
        const MapPoint* p = find_point(pid);
        if (!p) continue;
        auto it = p->observations.find(kf1_id);
        if (it == p->observations.end()) continue;
        shared1.push_back(kf1.bearings[static_cast<size_t>(it->second)]);
        shared2.push_back(kf2.bearings[static_cast<size_t>(slot2)]);
      }
      if (shared1.empty()) continue;
      if (check_parallax(shared1, shared2, t12.R) < deg2rad(cfg.geom.parallax_deg))
        continue;

      const EssentialMatrix e12 = essential_from_poses(kf1.pose, kf2.pose);
      const Bearing epipole2 = t12.t.normalized();           // O1 seen from 2
      const Bearing epipole1 = (-(t12.R.transpose() * t12.t)).normalized();

      // Descriptor matching restricted to features not yet in the map.
      std::vector<int> free1, free2;
      std::vector<Descriptor> d1, d2;
      for (size_t i = 0; i < kf1.point_ids.size(); ++i)
        if (kf1.point_ids[i] < 0) {
          free1.push_back(static_cast<int>(i));
          d1.push_back(kf1.descriptors[i]);
        }
      for (size_t i = 0; i < kf2.point_ids.size(); ++i)
        if (kf2.point_ids[i] < 0) {
          free2.push_back(static_cast<int>(i));
          d2.push_back(kf2.descriptors[i]);
        }
      const auto matches =
          match_descriptors(d1, d2, cfg.match_ratio, cfg.max_hamming);

      const double max_sq_plane =
          std::pow(std::sin(deg2rad(cfg.geom.epiplane_angle_deg)), 2);
      for (const auto& m : matches) {
        const int slot1 = free1[static_cast<size_t>(m.index_a)];
        const int slot2 = free2[static_cast<size_t>(m.index_b)];
        if (kf1.point_ids[static_cast<size_t>(slot1)] >= 0 ||
            kf2.point_ids[static_cast<size_t>(slot2)] >= 0)
          continue;  // claimed while processing an earlier neighbor
        const Bearing& p1 = kf1.bearings[static_cast<size_t>(slot1)];
        const Bearing& p2 = kf2.bearings[static_cast<size_t>(slot2)];
        if (!epipole_angle_ok(p2, epipole2, cfg.geom.epipole_angle_deg)) continue;
        if (!epipole_angle_ok(p1, epipole1, cfg.geom.epipole_angle_deg)) continue;
        const EpipolarPlane plane = epipolar_plane(e12, p2);
        if (plane.degenerate || sq_plane_distance(plane, p1) > max_sq_plane)
          continue;
        const TriangulationResult tri =
            triangulate_dlt(p1, p2, kf1.pose, kf2.pose, cfg.geom);
        if (!tri.accepted()) continue;
        add_point(tri.point, kf2.descriptors[static_cast<size_t>(slot2)],
                  kf2.kp_colors.empty()
                      ? Color3u8{}
                      : kf2.kp_colors[static_cast<size_t>(slot2)],
                  kf2_id, {{kf1_id, slot1}, {kf2_id, slot2}});
        ++created;
      }
    }
    if (created > 0) rebuild_covisibility(cfg.covis_threshold);
    return created;
  }

  /// Projects the keyframe's points into covisible neighbors; a projection
  /// landing within the fuse angle of another point's observation with a
  /// close descriptor merges the two (the point with more observations
  /// survives). Projections onto free keypoint slots become new observations.
  int fuse_duplicates(int64_t kf_id, const MappingConfig& cfg) {
    KeyFrame& kf = keyframes_.at(kf_id);
    const auto neighbors =
        neighbors_by_weight(kf_id, cfg.top_n_neighbors);
    const double cos_fuse = std::cos(deg2rad(cfg.fuse_angle_deg));

    std::vector<int64_t> pids;
    for (int64_t pid : kf.point_ids)
      if (pid >= 0) pids.push_back(pid);

    int fused = 0;
    bool changed = false;
    for (const int64_t nid : neighbors) {
      KeyFrame& nkf = keyframes_.at(nid);
      for (const int64_t pid : pids) {
        MapPoint* p = find_point(pid);
        if (!p) continue;  // already merged away
        if (p->observations.count(nid)) continue;
        const Vec3 pc = nkf.pose.act(p->position);
        if (pc.norm() < 1e-9) continue;
        const Bearing proj = pc.normalized();

        int best_slot = -1;
        int best_dist = cfg.fuse_hamming + 1;
        for (size_t i = 0; i < nkf.bearings.size(); ++i) {
          if (proj.dot(nkf.bearings[i]) < cos_fuse) continue;
          const int d = p->descriptor.distance(nkf.descriptors[i]);
          if (d < best_dist) {
            best_dist = d;
            best_slot = static_cast<int>(i);
          }
        }
        if (best_slot < 0) continue;

        const int64_t qid = nkf.point_ids[static_cast<size_t>(best_slot)];
        if (qid < 0) {
          nkf.point_ids[static_cast<size_t>(best_slot)] = pid;
          p->observations[nid] = best_slot;
          changed = true;
        } else if (qid != pid) {
          merge_points(pid, qid);
          ++fused;
          changed = true;
        }
      }
    }
    if (changed) rebuild_covisibility(cfg.covis_threshold);
    return fused;
  }

  /// Removes weak points: found/visible below 0.25 once past a 2-keyframe
  /// grace period, and points stuck at < 2 observations after 2 keyframes.
  CullResult cull(int64_t current_kf_id, int covis_threshold) {
    CullResult res;
    std::vector<int64_t> to_remove;
    for (const auto& [pid, p] : points_) {
      const bool past_grace = current_kf_id - p.created_kf >= 2;
      if (!past_grace) continue;
      if (p.visible > 0 &&
          static_cast<double>(p.found) / p.visible < 0.25) {
        to_remove.push_back(pid);
        ++res.weak;
      } else if (p.observations.size() < 2) {
        to_remove.push_back(pid);
        ++res.orphans;
      }
    }
    for (int64_t pid : to_remove) remove_point(pid);
    if (!to_remove.empty()) rebuild_covisibility(covis_threshold);
    return res;
  }

  /// Local bundle adjustment: window = center keyframe + covisible neighbors
  /// (capped), jointly refining window poses and their points. Keyframes
  /// outside the window contribute fixed residuals. The oldest window
  /// keyframe holds the gauge; in tri mode the second-oldest keyframe's
  /// translation norm pins the scale.
  BaResult local_bundle_adjust(int64_t center_id, TrackMode mode,
                               const MappingConfig& cfg,
                               double huber_rad = deg2rad(1.5));

  /// Full-map consistency audit: bidirectional observation indices and
  /// brute-force covisibility recount. Throws on the first violation.
  void audit(int covis_threshold) const {
    for (const auto& [pid, p] : points_) {
      if (p.observations.empty())
        throw std::logic_error("audit: point without observations");
      if (!p.position.allFinite())
        throw std::logic_error("audit: non-finite point");
      for (const auto& [kf_id, slot] : p.observations) {
        auto it = keyframes_.find(kf_id);
        if (it == keyframes_.end())
          throw std::logic_error("audit: observation in unknown keyframe");
        if (it->second.point_ids.at(static_cast<size_t>(slot)) != pid)
          throw std::logic_error("audit: keyframe slot does not point back");
      }
    }
    for (const auto& [kf_id, kf] : keyframes_) {
      for (size_t slot = 0; slot < kf.point_ids.size(); ++slot) {
        const int64_t pid = kf.point_ids[slot];
        if (pid < 0) continue;
        const MapPoint* p = find_point(pid);
        if (!p) throw std::logic_error("audit: slot references dead point");
        auto it = p->observations.find(kf_id);
        if (it == p->observations.end() ||
            it->second != static_cast<int>(slot))
          throw std::logic_error("audit: point does not observe back");
      }
    }
    // Covisibility weights must equal a brute-force recount.
    std::map<std::pair<int64_t, int64_t>, int> counts;
    for (const auto& [pid, p] : points_) {
      for (auto a = p.observations.begin(); a != p.observations.end(); ++a)
        for (auto b = std::next(a); b != p.observations.end(); ++b)
          counts[{a->first, b->first}]++;
    }
    for (const auto& [kf_id, kf] : keyframes_) {
      for (const auto& [nid, w] : kf.covisible) {
        const auto key = kf_id < nid ? std::make_pair(kf_id, nid)
                                     : std::make_pair(nid, kf_id);
        auto it = counts.find(key);
        if (it == counts.end() || it->second != w)
          throw std::logic_error("audit: covisibility weight mismatch");
        if (w < covis_threshold)
          throw std::logic_error("audit: covisibility edge below threshold");
        const auto& other = keyframes_.at(nid);
        auto back = other.covisible.find(kf_id);
        if (back == other.covisible.end() || back->second != w)
          throw std::logic_error("audit: covisibility not symmetric");
      }
    }
    for (const auto& [key, w] : counts) {
      if (w < covis_threshold) continue;
      const auto& kf = keyframes_.at(key.first);
      if (!kf.covisible.count(key.second))
        throw std::logic_error("audit: missing covisibility edge");
    }
  }

  void export_ply(const std::string& path) const {
    std::vector<io::PlyVertex> verts;
    verts.reserve(points_.size());
    for (const auto& [pid, p] : points_)
      verts.push_back({p.position, p.color});
    io::write_ply(path, verts);
  }

  void rebuild_covisibility(int covis_threshold) {
    for (auto& [id, kf] : keyframes_) kf.covisible.clear();
    std::map<std::pair<int64_t, int64_t>, int> counts;
    for (const auto& [pid, p] : points_)
      for (auto a = p.observations.begin(); a != p.observations.end(); ++a)
        for (auto b = std::next(a); b != p.observations.end(); ++b)
          counts[{a->first, b->first}]++;
    for (const auto& [key, w] : counts) {
      if (w < covis_threshold) continue;
      keyframes_.at(key.first).covisible[key.second] = w;
      keyframes_.at(key.second).covisible[key.first] = w;
    }
  }

 private:
  /// (point id, slot) pairs of a keyframe, slot order.
  static std::vector<std::pair<int64_t, int>> point_slots(const KeyFrame& kf) {
    std::vector<std::pair<int64_t, int>> out;
    for (size_t i = 0; i < kf.point_ids.size(); ++i)
      if (kf.point_ids[i] >= 0)
        out.emplace_back(kf.point_ids[i], static_cast<int>(i));
    return out;
  }

  /// Merges two points; the one with more observations (tie: smaller id)
  /// survives. Non-conflicting observations transfer; conflicting slots of
  /// the dropped point are cleared.
  void merge_points(int64_t a_id, int64_t b_id) {
    MapPoint* a = find_point(a_id);
    MapPoint* b = find_point(b_id);
    if (!a || !b || a_id == b_id) return;
    MapPoint* keep = a;
    MapPoint* drop = b;
    if (b->observations.size() > a->observations.size() ||
        (b->observations.size() == a->observations.size() && b_id < a_id)) {
      keep = b;
      drop = a;
    }
    for (const auto& [kf_id, slot] : drop->observations) {
      KeyFrame& kf = keyframes_.at(kf_id);
      if (keep->observations.count(kf_id)) {
        if (kf.point_ids[static_cast<size_t>(slot)] == drop->id)
          kf.point_ids[static_cast<size_t>(slot)] = -1;
      } else {
        kf.point_ids[static_cast<size_t>(slot)] = keep->id;
        keep->observations[kf_id] = slot;
      }
    }
    keep->visible += drop->visible;
    keep->found += drop->found;
    points_.erase(drop->id);
  }

  std::map<int64_t, KeyFrame> keyframes_;
  std::map<int64_t, MapPoint> points_;
  int64_t next_point_id_ = 0;
};

// ---------------------------------------------------------------------------
// Local bundle adjustment
// ---------------------------------------------------------------------------

inline BaResult Map::local_bundle_adjust(int64_t center_id, TrackMode mode,
                                         const MappingConfig& cfg,
                                         double huber_rad) {
  std::vector<int64_t> window = {center_id};
  for (int64_t nid : neighbors_by_weight(center_id, cfg.ba_window - 1))
    window.push_back(nid);
  std::sort(window.begin(), window.end());  // oldest first
  if (window.size() < 2)
    throw std::invalid_argument("local_bundle_adjust: window needs >= 2 keyframes");

  std::set<int64_t> window_set(window.begin(), window.end());

  // Points touched by the window, with enough observations to be constrained.
  std::vector<int64_t> point_ids;
  {
    std::set<int64_t> seen;
    for (int64_t kf_id : window)
      for (int64_t pid : keyframes_.at(kf_id).point_ids)
        if (pid >= 0 && !seen.count(pid)) {
          const MapPoint* p = find_point(pid);
          if (p && p->observations.size() >= 2) {
            seen.insert(pid);
            point_ids.push_back(pid);
          }
        }
    std::sort(point_ids.begin(), point_ids.end());
  }

  // Camera parameter blocks. window[0] is the gauge (0 params); in tri mode
  // window[1] keeps its translation norm (5 params via a basis orthogonal to
  // the translation direction).
  struct CamBlock {
    int64_t kf_id;
    int offset;  // -1 when fixed
    int size;
    bool norm_locked;
    double locked_norm;
  };
  std::vector<CamBlock> cams;
  std::map<int64_t, int> cam_index;
  int n_params = 0;
  for (size_t i = 0; i < window.size(); ++i) {
    CamBlock c;
    c.kf_id = window[i];
    c.norm_locked = mode == TrackMode::kTri && i == 1;
    c.locked_norm = keyframes_.at(window[i]).pose.t.norm();
    if (i == 0) {
      c.offset = -1;
      c.size = 0;
    } else {
      c.size = c.norm_locked ? 5 : 6;
      c.offset = n_params;
      n_params += c.size;
    }
    cam_index[window[i]] = static_cast<int>(i);
    cams.push_back(c);
  }

  struct Obs {
    int cam;    // index into cams, or -1 for a fixed out-of-window keyframe
    int point;  // index into point_ids
    Bearing bearing;
    const Pose* fixed_pose;  // for cam == -1
  };
  std::vector<Obs> observations;
  std::map<int64_t, int> point_index;
  for (size_t i = 0; i < point_ids.size(); ++i)
    point_index[point_ids[i]] = static_cast<int>(i);
  for (size_t i = 0; i < point_ids.size(); ++i) {
    const MapPoint& p = points_.at(point_ids[i]);
    for (const auto& [kf_id, slot] : p.observations) {
      const KeyFrame& kf = keyframes_.at(kf_id);
      Obs o;
      o.point = static_cast<int>(i);
      o.bearing = kf.bearings[static_cast<size_t>(slot)];
      if (window_set.count(kf_id)) {
        o.cam = cam_index.at(kf_id);
        o.fixed_pose = nullptr;
      } else {
        o.cam = -1;
        o.fixed_pose = &kf.pose;
      }
      observations.push_back(o);
    }
  }

  BaResult res;
  if (observations.empty()) return res;  // nothing to adjust

  std::vector<Pose> poses;
  for (int64_t kf_id : window) poses.push_back(keyframes_.at(kf_id).pose);
  std::vector<Vec3> pts;
  for (int64_t pid : point_ids) pts.push_back(points_.at(pid).position);

  auto eval_cost = [&](const std::vector<Pose>& ps,
                       const std::vector<Vec3>& xs) {
    double cost = 0;
    for (const auto& o : observations) {
      const Pose& pose = o.cam >= 0 ? ps[static_cast<size_t>(o.cam)]
                                    : *o.fixed_pose;
      const Vec3 q = pose.act(xs[static_cast<size_t>(o.point)]);
      const TangentFrame frame = tangent_basis(o.bearing);
      const Vec2 r = tangent_residual(o.bearing, frame, q.normalized());
      cost += huber_cost(r.norm(), huber_rad);
    }
    return cost;
  };

  double cost = eval_cost(poses, pts);
  res.initial_cost = cost;
  res.cost_history.push_back(cost);

  const int n_points = static_cast<int>(point_ids.size());
  double lambda = 1e-4;
  bool any_step = false;
  constexpr int kMaxIterations = 20;

  for (int iter = 0; iter < kMaxIterations; ++iter) {
    Eigen::MatrixXd h_cc = Eigen::MatrixXd::Zero(n_params, n_params);
    Eigen::VectorXd g_c = Eigen::VectorXd::Zero(n_params);
    std::vector<Mat3> h_pp(static_cast<size_t>(n_points), Mat3::Zero());
    std::vector<Vec3> g_p(static_cast<size_t>(n_points), Vec3::Zero());
    // Per point: list of (cam block, W = sum w Jc^T Jp).
    std::vector<std::vector<std::pair<int, Eigen::Matrix<double, 6, 3>>>>
        w_cp(static_cast<size_t>(n_points));

    // Translation bases for norm-locked blocks, refreshed per iteration.
    std::vector<Eigen::Matrix<double, 3, 2>> t_bases(cams.size());
    for (size_t c = 0; c < cams.size(); ++c) {
      if (!cams[c].norm_locked) continue;
      const Vec3 t = poses[c].t;
      const TangentFrame f = tangent_basis(t.normalized());
      t_bases[c].col(0) = f.t1;
      t_bases[c].col(1) = f.t2;
    }

    for (const auto& o : observations) {
      const Pose& pose = o.cam >= 0 ? poses[static_cast<size_t>(o.cam)]
                                    : *o.fixed_pose;
      const Vec3& x = pts[static_cast<size_t>(o.point)];
      const Vec3 q = pose.act(x);
      const Vec3 pu = q.normalized();
      const TangentFrame frame = tangent_basis(o.bearing);
      const Vec2 r = tangent_residual(o.bearing, frame, pu);
      const Mat23 dr_dq =
          tangent_residual_jacobian(o.bearing, frame, pu) * normalize_jacobian(q);
      const double w = huber_weight(r.norm(), huber_rad);

      const Mat23 j_p = dr_dq * pose.R;  // d r / d point
      const size_t pi = static_cast<size_t>(o.point);
      h_pp[pi].noalias() += w * j_p.transpose() * j_p;
      g_p[pi].noalias() += w * j_p.transpose() * r;

      if (o.cam >= 0 && cams[static_cast<size_t>(o.cam)].size > 0) {
        const CamBlock& cb = cams[static_cast<size_t>(o.cam)];
        Mat26 j_c6;
        j_c6.leftCols<3>() = -dr_dq * skew(q);
        j_c6.rightCols<3>() = dr_dq;
        Eigen::Matrix<double, 2, 6> j_c = j_c6;
        int sz = 6;
        Eigen::Matrix<double, 2, 6> j_reduced = Eigen::Matrix<double, 2, 6>::Zero();
        if (cb.norm_locked) {
          j_reduced.leftCols<3>() = j_c6.leftCols<3>();
          j_reduced.block<2, 2>(0, 3) =
              j_c6.rightCols<3>() * t_bases[static_cast<size_t>(o.cam)];
          j_c = j_reduced;
          sz = 5;
        }
        const auto jc = j_c.leftCols(sz);
        h_cc.block(cb.offset, cb.offset, sz, sz).noalias() +=
            w * jc.transpose() * jc;
        g_c.segment(cb.offset, sz).noalias() += w * jc.transpose() * r;

        Eigen::Matrix<double, 6, 3> wcp = Eigen::Matrix<double, 6, 3>::Zero();
        wcp.topRows(sz) = w * jc.transpose() * j_p;
        auto& lst = w_cp[pi];
        bool found = false;
        for (auto& [ci, m] : lst)
          if (ci == o.cam) {
            m += wcp;
            found = true;
            break;
          }
        if (!found) lst.emplace_back(o.cam, wcp);
      }
    }

    bool stepped = false;
    while (lambda < 1e10) {
      Eigen::MatrixXd s = h_cc;
      s.diagonal().array() += lambda;
      Eigen::VectorXd rhs = -g_c;
      std::vector<Mat3> h_pp_inv(static_cast<size_t>(n_points));
      for (int pi = 0; pi < n_points; ++pi) {
        Mat3 hp = h_pp[static_cast<size_t>(pi)];
        hp.diagonal().array() += lambda;
        h_pp_inv[static_cast<size_t>(pi)] = hp.inverse();
        const auto& lst = w_cp[static_cast<size_t>(pi)];
        for (const auto& [ci, wi] : lst) {
          const CamBlock& cbi = cams[static_cast<size_t>(ci)];
          const auto wi_act = wi.topRows(cbi.size);
          rhs.segment(cbi.offset, cbi.size).noalias() +=
              wi_act * h_pp_inv[static_cast<size_t>(pi)] *
              g_p[static_cast<size_t>(pi)];
          for (const auto& [cj, wj] : lst) {
            const CamBlock& cbj = cams[static_cast<size_t>(cj)];
            s.block(cbi.offset, cbj.offset, cbi.size, cbj.size).noalias() -=
                wi_act * h_pp_inv[static_cast<size_t>(pi)] *
                wj.topRows(cbj.size).transpose();
          }
        }
      }

      Eigen::VectorXd delta_c(n_params);
      if (n_params > 0) {
        delta_c = s.ldlt().solve(rhs);
        if (!delta_c.allFinite()) {
          lambda *= 10;
          continue;
        }
      }

      std::vector<Pose> new_poses = poses;
      for (size_t c = 0; c < cams.size(); ++c) {
        const CamBlock& cb = cams[c];
        if (cb.size == 0) continue;
        Eigen::Matrix<double, 6, 1> d6;
        if (cb.norm_locked) {
          d6.head<3>() = delta_c.segment(cb.offset, 3);
          d6.tail<3>() = t_bases[c] * delta_c.segment(cb.offset + 3, 2);
        } else {
          d6 = delta_c.segment(cb.offset, 6);
        }
        new_poses[c] = apply_pose_delta(poses[c], d6);
        if (cb.norm_locked) {
          const double n = new_poses[c].t.norm();
          if (n > 1e-12) new_poses[c].t *= cb.locked_norm / n;
        }
      }

      std::vector<Vec3> new_pts = pts;
      for (int pi = 0; pi < n_points; ++pi) {
        Vec3 acc = -g_p[static_cast<size_t>(pi)];
        for (const auto& [ci, wi] : w_cp[static_cast<size_t>(pi)]) {
          const CamBlock& cb = cams[static_cast<size_t>(ci)];
          acc.noalias() -= wi.topRows(cb.size).transpose() *
                           delta_c.segment(cb.offset, cb.size);
        }
        new_pts[static_cast<size_t>(pi)] +=
            h_pp_inv[static_cast<size_t>(pi)] * acc;
      }

      const double new_cost = eval_cost(new_poses, new_pts);
      if (new_cost < cost) {
        poses = std::move(new_poses);
        pts = std::move(new_pts);
        const double decrease = cost - new_cost;
        cost = new_cost;
        res.cost_history.push_back(cost);
        lambda = std::max(lambda / 10, 1e-12);
        stepped = true;
        any_step = true;
        if (decrease < 1e-12) iter = kMaxIterations;  // converged
        break;
      }
      lambda *= 10;
    }
    if (!stepped) break;
  }

  res.final_cost = cost;
  res.applied = any_step;
  res.diverged = !any_step && res.initial_cost > 1e-12;
  if (res.applied) {
    for (size_t i = 0; i < window.size(); ++i)
      keyframes_.at(window[i]).pose = poses[i];
    for (size_t i = 0; i < point_ids.size(); ++i)
      points_.at(point_ids[i]).position = pts[i];
  }
  return res;
}

}  // namespace panoslam
