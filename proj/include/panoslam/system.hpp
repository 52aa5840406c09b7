#pragma once

// The full pipeline: dataset loading, monocular (tri) or depth-completed (dc)
// initialization, per-frame tracking, keyframe mapping cycles (triangulation,
// fusion, local BA, culling), and run outputs. Tracking runs on the caller's
// thread; mapping runs on its own thread unless single_thread is set, in
// which case every keyframe is processed synchronously and the whole run is
// bit-deterministic for a fixed seed.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "panoslam/camera.hpp"
#include "panoslam/config.hpp"
#include "panoslam/dataset.hpp"
#include "panoslam/densify.hpp"
#include "panoslam/eval.hpp"
#include "panoslam/features.hpp"
#include "panoslam/image.hpp"
#include "panoslam/io.hpp"
#include "panoslam/mapping.hpp"
#include "panoslam/sparse_depth.hpp"
#include "panoslam/tracking.hpp"
#include "panoslam/two_view.hpp"

namespace panoslam {

struct SystemConfig {
  TrackMode mode = TrackMode::kTri;
  FeatureConfig features;
  TrackingConfig tracking;
  MappingConfig mapping;
  DensifyConfig densify;
  TwoViewGeometryConfig geom;
  int depth_prior = 0;  // ground-truth range anchors per keyframe (dc mode)
  uint64_t seed = 0;
  bool single_thread = false;
  bool run_audit = false;       // full-map audit after every mapping cycle
  double spawn_confidence = 0.05;  // min dense confidence to spawn a point
  int bootstrap_min_matches = 100;
  int bootstrap_min_points = 50;

  static SystemConfig from(const Config& c) {
    SystemConfig s;
    s.features = FeatureConfig::from(c);
    s.tracking = TrackingConfig::from(c);
    s.densify = DensifyConfig::from(c);
    s.geom.epipole_angle_deg = c.get_double("geom.epipole_angle_deg");
    s.geom.epiplane_angle_deg = c.get_double("geom.epiplane_angle_deg");
    s.geom.reproj_angle_deg = c.get_double("geom.reproj_angle_deg");
    s.geom.parallax_deg = c.get_double("geom.parallax_deg");
    s.geom.min_range_m = c.get_double("geom.min_range_m");
    s.mapping.fuse_angle_deg = c.get_double("map.fuse_angle_deg");
    s.mapping.fuse_hamming = c.get_int("map.fuse_hamming");
    s.mapping.covis_threshold = c.get_int("map.covis_threshold");
    s.mapping.top_n_neighbors = c.get_int("map.top_n_neighbors");
    s.mapping.ba_window = c.get_int("map.ba_window");
    s.mapping.match_ratio = c.get_double("features.match_ratio");
    s.mapping.max_hamming = c.get_int("features.max_hamming");
    s.mapping.geom = s.geom;
    return s;
  }
};

/// A dataset directory as written by generate_dataset.
struct Dataset {
  std::string dir;
  Intrinsics intr;
  std::vector<std::string> rgb_files;
  std::vector<std::string> depth_files;  // may be empty
  io::Trajectory ground_truth;           // may be empty

  static Dataset load(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset d;
    d.dir = dir;

    std::ifstream calib(fs::path(dir) / "calib.txt");
    int w = 0, h = 0;
    if (!(calib >> w >> h))
      throw std::runtime_error("dataset: cannot read calib.txt in " + dir);
    d.intr = make_intrinsics(w, h);

    auto list_sorted = [](const fs::path& p) {
      std::vector<std::string> files;
      if (fs::is_directory(p))
        for (const auto& e : fs::directory_iterator(p))
          if (e.is_regular_file()) files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
      return files;
    };
    d.rgb_files = list_sorted(fs::path(dir) / "rgb");
    if (d.rgb_files.empty())
      throw std::runtime_error("dataset: no rgb frames in " + dir);
    d.depth_files = list_sorted(fs::path(dir) / "depth");

    const auto gt_path = fs::path(dir) / "gt_traj.txt";
    if (fs::exists(gt_path)) d.ground_truth = io::read_trajectory(gt_path.string());
    return d;
  }

  double timestamp(size_t frame) const {
    if (frame < ground_truth.size()) return ground_truth[frame].timestamp;
    return 0.1 * static_cast<double>(frame);
  }
};

struct FrameResult {
  int index = -1;
  double timestamp = 0;
  TrackStatus status = TrackStatus::kInitializing;
  Pose pose;  // T_cw, valid when status == kOk
  bool is_keyframe = false;
  int inliers = 0;
};

struct RunReport {
  std::vector<FrameResult> frames;
  bool lost = false;
  int keyframe_count = 0;
  size_t map_point_count = 0;
  io::Trajectory keyframe_trajectory;  // camera-in-world, final poses
};

class System {
 public:
  System(Dataset dataset, SystemConfig config)
      : dataset_(std::move(dataset)), cfg_(std::move(config)) {
    if (cfg_.mode == TrackMode::kDc && cfg_.depth_prior > 0 &&
        dataset_.depth_files.size() < dataset_.rgb_files.size())
      throw std::runtime_error(
          "dc mode with depth priors needs ground-truth depth for every frame");
  }

  RunReport run() {
    RunReport report;
    if (!cfg_.single_thread) start_mapping_thread();

    for (size_t i = 0; i < dataset_.rgb_files.size(); ++i) {
      Frame frame = load_frame(static_cast<int>(i));
      FrameResult fr;
      fr.index = frame.index;
      fr.timestamp = frame.timestamp;

      if (state_.status == TrackStatus::kInitializing) {
        const bool made_kf = initialize(std::move(frame));
        fr.status = state_.status;
        fr.is_keyframe = made_kf;
        if (state_.status == TrackStatus::kOk) {
          fr.pose = state_.current;
          fr.inliers = state_.tracked_points;
        }
        report.frames.push_back(fr);
        continue;
      }

      const MapSnapshot snapshot = make_snapshot();
      const TrackFrameResult tr =
          track_frame(frame, snapshot, state_, dataset_.intr, cfg_.tracking);
      update_point_counters(tr);
      fr.status = state_.status;
      fr.inliers = tr.inliers;
      if (state_.status == TrackStatus::kLost) {
        report.frames.push_back(fr);
        report.lost = true;
        break;  // no relocalization; the run ends
      }
      fr.pose = frame.pose;

      if (decide_keyframe(state_, snapshot.ref_tracked, cfg_.tracking)) {
        fr.is_keyframe = true;
        submit_keyframe(make_keyframe(frame));
        state_.frames_since_kf = 0;
      }
      report.frames.push_back(fr);
    }

    stop_mapping_thread();

    std::lock_guard lock(map_mutex_);
    report.keyframe_count = static_cast<int>(map_.keyframes().size());
    report.map_point_count = map_.points().size();
    for (const auto& [id, kf] : map_.keyframes())
      report.keyframe_trajectory.push_back({kf.timestamp, kf.pose.inverse()});
    return report;
  }

  /// Final-map sparse depth of one keyframe (by keyframe id).
  DepthMap keyframe_sparse_depth(int64_t kf_id) const {
    std::lock_guard lock(map_mutex_);
    return render_keyframe_sparse_depth(kf_id);
  }

  std::vector<int64_t> keyframe_ids() const {
    std::lock_guard lock(map_mutex_);
    std::vector<int64_t> ids;
    for (const auto& [id, kf] : map_.keyframes()) ids.push_back(id);
    return ids;
  }

  const Map& map() const { return map_; }
  Map& map() { return map_; }
  const Dataset& dataset() const { return dataset_; }

  void export_ply(const std::string& path) const {
    std::lock_guard lock(map_mutex_);
    map_.export_ply(path);
  }

 private:
  Frame load_frame(int index) {
    Frame f;
    f.index = index;
    f.timestamp = dataset_.timestamp(static_cast<size_t>(index));
    f.rgb = io::read_ppm(dataset_.rgb_files[static_cast<size_t>(index)]);
    if (f.rgb.width() != dataset_.intr.width ||
        f.rgb.height() != dataset_.intr.height)
      throw std::runtime_error("dataset: frame size does not match calib.txt");
    f.gray = to_grayscale(f.rgb);
    auto [kps, descs] = detect_and_describe(f.gray, cfg_.features);
    f.keypoints = std::move(kps);
    f.descriptors = std::move(descs);
    f.bearings.reserve(f.keypoints.size());
    f.kp_colors.reserve(f.keypoints.size());
    for (const auto& kp : f.keypoints) {
      f.bearings.push_back(bearing_from_pixel(dataset_.intr, {kp.u, kp.v}));
      const int x = std::clamp(static_cast<int>(std::lround(kp.u)), 0,
                               f.rgb.width() - 1);
      const int y = std::clamp(static_cast<int>(std::lround(kp.v)), 0,
                               f.rgb.height() - 1);
      f.kp_colors.push_back(f.rgb.at(x, y));
    }
    f.matched_point.assign(f.keypoints.size(), -1);
    return f;
  }

  // ------------------------------------------------------------------
  // Initialization
  // ------------------------------------------------------------------

  /// Returns true when this frame became a keyframe.
  bool initialize(Frame frame) {
    if (cfg_.mode == TrackMode::kDc) {
      initialize_dc(std::move(frame));
      return true;
    }
    return initialize_tri(std::move(frame));
  }

  /// Depth-completed initialization: densify the anchor samples of the first
  /// frame and spawn map points at feature pixels, RGB-D style.
  void initialize_dc(Frame frame) {
    KeyFrame kf = build_keyframe_struct(frame, Pose::Identity(),
                                        static_cast<int>(frame.keypoints.size()));
    const int64_t kf_id = kf.id;
    {
      std::lock_guard lock(map_mutex_);
      map_.insert_keyframe(std::move(kf), cfg_.mapping.covis_threshold);
    }
    const int spawned = densify_and_spawn(kf_id, frame);
    if (spawned < cfg_.tracking.min_inliers)
      throw std::runtime_error(
          "dc initialization spawned too few map points; check --depth-prior");
    {
      std::lock_guard lock(map_mutex_);
      map_.keyframe(kf_id).tracked_points = spawned;
    }
    state_.status = TrackStatus::kOk;
    state_.current = Pose::Identity();
    state_.velocity = Pose::Identity();
    state_.reference_kf = kf_id;
    state_.tracked_points = spawned;
    state_.frames_since_kf = 0;
    state_.frames_tracked = 1;
  }

  /// Monocular two-frame bootstrap: seeded RANSAC on the essential matrix,
  /// parallax gate, triangulation, then a global scale fixing the median
  /// map-point range to 1.
  bool initialize_tri(Frame frame) {
    if (!boot_frame_) {
      frame.pose = Pose::Identity();
      boot_frame_ = std::move(frame);
      return false;
    }
    // Give up on a stale anchor frame and restart from the current one.
    if (frame.index - boot_frame_->index > cfg_.tracking.kf_max_interval) {
      frame.pose = Pose::Identity();
      boot_frame_ = std::move(frame);
      return false;
    }

    const auto matches =
        match_descriptors(boot_frame_->descriptors, frame.descriptors,
                          cfg_.tracking.match_ratio, cfg_.tracking.max_hamming);
    if (static_cast<int>(matches.size()) < cfg_.bootstrap_min_matches)
      return false;

    std::vector<Bearing> p1, p2;
    p1.reserve(matches.size());
    p2.reserve(matches.size());
    for (const auto& m : matches) {
      p1.push_back(boot_frame_->bearings[static_cast<size_t>(m.index_a)]);
      p2.push_back(frame.bearings[static_cast<size_t>(m.index_b)]);
    }
    const auto rel =
        estimate_relative_pose_ransac(p1, p2, cfg_.seed, cfg_.geom);
    if (!rel) return false;
    if (rel->median_parallax_rad < deg2rad(cfg_.geom.parallax_deg))
      return false;

    const Pose t1 = Pose::Identity();
    Pose t2{rel->r12, rel->t12};
    struct Tri {
      int match;
      Vec3 point;
    };
    std::vector<Tri> tris;
    for (int mi : rel->inlier_matches) {
      TwoViewGeometryConfig tri_cfg = cfg_.geom;
      tri_cfg.min_range_m = 1e-3;  // pre-scale units
      const auto tri = triangulate_dlt(p1[static_cast<size_t>(mi)],
                                       p2[static_cast<size_t>(mi)], t1, t2,
                                       tri_cfg);
      if (tri.accepted()) tris.push_back({mi, tri.point});
    }
    if (static_cast<int>(tris.size()) < cfg_.bootstrap_min_points) return false;

    std::vector<double> ranges;
    ranges.reserve(tris.size());
    for (const auto& t : tris) ranges.push_back(t.point.norm());
    std::nth_element(ranges.begin(), ranges.begin() + ranges.size() / 2,
                     ranges.end());
    const double median = ranges[ranges.size() / 2];
    if (!(median > 1e-9)) return false;
    const double scale = 1.0 / median;
    t2.t *= scale;
    for (auto& t : tris) t.point *= scale;

    KeyFrame kf1 = build_keyframe_struct(*boot_frame_, t1,
                                         static_cast<int>(tris.size()));
    KeyFrame kf2 =
        build_keyframe_struct(frame, t2, static_cast<int>(tris.size()));
    const int64_t id1 = kf1.id, id2 = kf2.id;
    {
      std::lock_guard lock(map_mutex_);
      map_.insert_keyframe(std::move(kf1), cfg_.mapping.covis_threshold);
      map_.insert_keyframe(std::move(kf2), cfg_.mapping.covis_threshold);
      for (const auto& t : tris) {
        const auto& m = matches[static_cast<size_t>(t.match)];
        map_.add_point(
            t.point, frame.descriptors[static_cast<size_t>(m.index_b)],
            frame.kp_colors[static_cast<size_t>(m.index_b)], id2,
            {{id1, m.index_a}, {id2, m.index_b}});
      }
      map_.rebuild_covisibility(cfg_.mapping.covis_threshold);
      // Joint refinement of the bootstrap pair (the scale gauge holds the
      // second keyframe's baseline norm in tri mode).
      map_.local_bundle_adjust(id2, cfg_.mode, cfg_.mapping,
                               deg2rad(cfg_.tracking.huber_deg));
      if (cfg_.run_audit) map_.audit(cfg_.mapping.covis_threshold);
      state_.current = map_.keyframe(id2).pose;
    }

    boot_frame_.reset();
    state_.status = TrackStatus::kOk;
    state_.velocity = Pose::Identity();
    state_.reference_kf = id2;
    state_.tracked_points = static_cast<int>(tris.size());
    state_.frames_since_kf = 0;
    state_.frames_tracked = 1;
    return true;
  }

  // ------------------------------------------------------------------
  // Keyframes and the mapping cycle
  // ------------------------------------------------------------------

  KeyFrame build_keyframe_struct(const Frame& frame, const Pose& pose,
                                 int tracked) {
    KeyFrame kf;
    kf.id = next_kf_id_++;
    kf.frame_index = frame.index;
    kf.timestamp = frame.timestamp;
    kf.pose = pose;
    kf.keypoints = frame.keypoints;
    kf.descriptors = frame.descriptors;
    kf.bearings = frame.bearings;
    kf.kp_colors = frame.kp_colors;
    kf.point_ids = frame.matched_point;
    kf.tracked_points = tracked;
    return kf;
  }

  struct MappingJob {
    KeyFrame kf;
    ImageRgb rgb;        // dc refinement guide
    int frame_index = -1;
  };

  KeyFrame make_keyframe(const Frame& frame) {
    KeyFrame kf =
        build_keyframe_struct(frame, frame.pose, state_.tracked_points);
    state_.reference_kf = kf.id;
    if (cfg_.mode == TrackMode::kDc) pending_rgb_ = frame.rgb;
    return kf;
  }

  void submit_keyframe(KeyFrame kf) {
    MappingJob job;
    job.frame_index = kf.frame_index;
    if (cfg_.mode == TrackMode::kDc) job.rgb = std::move(pending_rgb_);
    job.kf = std::move(kf);
    if (cfg_.single_thread) {
      mapping_cycle(std::move(job));
      return;
    }
    {
      std::lock_guard lock(queue_mutex_);
      queue_.push_back(std::move(job));
    }
    queue_cv_.notify_one();
  }

  void mapping_cycle(MappingJob job) {
    const int64_t kf_id = job.kf.id;
    {
      std::lock_guard lock(map_mutex_);
      map_.insert_keyframe(std::move(job.kf), cfg_.mapping.covis_threshold);
    }
    if (cfg_.mode == TrackMode::kDc) {
      Frame shim;  // only the fields densify_and_spawn touches
      shim.index = job.frame_index;
      shim.rgb = std::move(job.rgb);
      std::lock_guard lock(map_mutex_);
      const KeyFrame& kf = map_.keyframe(kf_id);
      shim.keypoints = kf.keypoints;
      shim.descriptors = kf.descriptors;
      shim.bearings = kf.bearings;
      shim.kp_colors = kf.kp_colors;
      shim.pose = kf.pose;
      shim.matched_point = kf.point_ids;
      densify_and_spawn_locked(kf_id, shim);
    }
    std::lock_guard lock(map_mutex_);
    map_.create_map_points(kf_id, cfg_.mapping);
    map_.fuse_duplicates(kf_id, cfg_.mapping);
    if (!map_.keyframe(kf_id).covisible.empty())
      map_.local_bundle_adjust(kf_id, cfg_.mode, cfg_.mapping,
                               deg2rad(cfg_.tracking.huber_deg));
    map_.cull(kf_id, cfg_.mapping.covis_threshold);
    if (cfg_.run_audit) map_.audit(cfg_.mapping.covis_threshold);
  }

  /// dc mode: sparse depth from the current map plus ground-truth anchors,
  /// densified and refined, then new points spawned at unmatched features
  /// with confident depth. Returns the number of points spawned.
  int densify_and_spawn(int64_t kf_id, const Frame& frame) {
    std::lock_guard lock(map_mutex_);
    return densify_and_spawn_locked(kf_id, frame);
  }

  int densify_and_spawn_locked(int64_t kf_id, const Frame& frame) {
    const Intrinsics& intr = dataset_.intr;
    DepthMap sparse = render_keyframe_sparse_depth(kf_id);

    if (cfg_.depth_prior > 0) {
      const DepthMap gt = io::depth_from_pfm(io::read_pfm(
          dataset_.depth_files[static_cast<size_t>(frame.index)]));
      inject_anchors(gt, frame.index, &sparse);
    }
    if (sparse.valid_count() == 0) return 0;

    const DenseResult dense = densify_multiscale(sparse, cfg_.densify);
    const DepthMap refined =
        guided_refine(dense.depth, dense.confidence, frame.rgb, cfg_.densify);

    KeyFrame& kf = map_.keyframe(kf_id);
    const Pose t_wc = kf.pose.inverse();
    int spawned = 0;
    for (size_t slot = 0; slot < kf.keypoints.size(); ++slot) {
      if (kf.point_ids[slot] >= 0) continue;
      const auto& kp = kf.keypoints[slot];
      int x = static_cast<int>(std::lround(kp.u)) % intr.width;
      if (x < 0) x += intr.width;
      const int y = std::clamp(static_cast<int>(std::lround(kp.v)), 0,
                               intr.height - 1);
      if (!refined.valid.at(x, y)) continue;
      if (dense.confidence.at(x, y) < cfg_.spawn_confidence) continue;
      const double range = refined.values.at(x, y);
      if (!(range > cfg_.geom.min_range_m)) continue;
      const Vec3 position = t_wc.act(range * kf.bearings[slot]);
      map_.add_point(position, kf.descriptors[slot], kf.kp_colors[slot], kf_id,
                     {{kf_id, static_cast<int>(slot)}});
      ++spawned;
    }
    if (spawned > 0) map_.rebuild_covisibility(cfg_.mapping.covis_threshold);
    return spawned;
  }

  /// Deterministically samples depth_prior anchors from the ground-truth
  /// depth map into the sparse map (anchors win over map-point samples).
  void inject_anchors(const DepthMap& gt, int frame_index, DepthMap* sparse) {
    std::vector<std::pair<int, int>> valid_px;
    for (int y = 0; y < gt.height(); ++y)
      for (int x = 0; x < gt.width(); ++x)
        if (gt.valid.at(x, y)) valid_px.emplace_back(x, y);
    if (valid_px.empty()) return;

    std::mt19937_64 rng(cfg_.seed ^
                        detail::splitmix64(static_cast<uint64_t>(frame_index)));
    const int n = std::min<int>(cfg_.depth_prior,
                                static_cast<int>(valid_px.size()));
    std::vector<char> taken(valid_px.size(), 0);
    for (int k = 0; k < n; ++k) {
      size_t idx;
      do {
        idx = static_cast<size_t>(rng() % valid_px.size());
      } while (taken[idx]);
      taken[idx] = 1;
      const auto [x, y] = valid_px[idx];
      sparse->set(x, y, gt.values.at(x, y));
    }
  }

  DepthMap render_keyframe_sparse_depth(int64_t kf_id) const {
    std::vector<DepthSample> samples;
    samples.reserve(map_.points().size());
    for (const auto& [pid, p] : map_.points())
      samples.push_back({pid, p.position});
    return render_sparse_depth(samples, map_.keyframe(kf_id).pose,
                               dataset_.intr);
  }

  // ------------------------------------------------------------------
  // Tracking-side map access
  // ------------------------------------------------------------------

  MapSnapshot make_snapshot() const {
    std::lock_guard lock(map_mutex_);
    MapSnapshot snap;
    snap.points.reserve(map_.points().size());
    for (const auto& [pid, p] : map_.points())
      snap.points.push_back({pid, p.position, p.descriptor});
    snap.ref_kf = state_.reference_kf;
    const auto& kfs = map_.keyframes();
    auto it = kfs.find(state_.reference_kf);
    if (it == kfs.end() && !kfs.empty()) it = std::prev(kfs.end());
    snap.ref_tracked =
        it != kfs.end() ? it->second.tracked_points : 0;
    return snap;
  }

  void update_point_counters(const TrackFrameResult& tr) {
    std::lock_guard lock(map_mutex_);
    for (int64_t pid : tr.offered_ids)
      if (MapPoint* p = map_.find_point(pid)) p->visible += 1;
    for (int64_t pid : tr.inlier_ids)
      if (MapPoint* p = map_.find_point(pid)) p->found += 1;
  }

  // ------------------------------------------------------------------
  // Mapping thread
  // ------------------------------------------------------------------

  void start_mapping_thread() {
    stop_requested_ = false;
    mapping_thread_ = std::thread([this] {
      for (;;) {
        MappingJob job;
        {
          std::unique_lock lock(queue_mutex_);
          queue_cv_.wait(lock,
                         [this] { return stop_requested_ || !queue_.empty(); });
          if (queue_.empty() && stop_requested_) return;
          job = std::move(queue_.front());
          queue_.pop_front();
        }
        mapping_cycle(std::move(job));
      }
    });
  }

  void stop_mapping_thread() {
    if (!mapping_thread_.joinable()) return;
    {
      std::lock_guard lock(queue_mutex_);
      stop_requested_ = true;
    }
    queue_cv_.notify_all();
    mapping_thread_.join();
  }

  Dataset dataset_;
  SystemConfig cfg_;
  Map map_;
  mutable std::mutex map_mutex_;
  TrackState state_;
  std::optional<Frame> boot_frame_;
  ImageRgb pending_rgb_;
  int64_t next_kf_id_ = 0;

  std::thread mapping_thread_;
  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<MappingJob> queue_;
  bool stop_requested_ = false;
};

}  // namespace panoslam
