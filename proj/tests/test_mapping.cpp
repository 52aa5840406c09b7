#include <catch2/catch_amalgamated.hpp>

#include "panoslam/mapping.hpp"
#include "test_support.hpp"

using namespace panoslam;

namespace {

/// Synthetic world: keyframes on a small circle observing shared scene
/// points, with bearings from the forward-projection oracle. Descriptors are
/// synthesized to be well separated (one distinct word per point).
struct SyntheticWorld {
  std::vector<Vec3> points;
  std::vector<Pose> poses;  // T_cw

  Descriptor descriptor_of(int point_idx) const {
    Descriptor d;
    std::mt19937_64 rng(0xabcd1234 + static_cast<uint64_t>(point_idx));
    for (auto& w : d.bits) w = rng();
    return d;
  }
};

SyntheticWorld make_world(int n_points, int n_poses, uint64_t seed) {
  SyntheticWorld w;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < n_points; ++i)
    w.points.push_back(test::uniform(rng, 3.0, 12.0) * test::random_unit(rng));
  for (int k = 0; k < n_poses; ++k) {
    const double th = 0.15 * k;
    Pose wc;  // camera-in-world on a circle of radius 1
    wc.t = Vec3(std::cos(th), std::sin(th), 0.2 * k / std::max(1, n_poses));
    wc.R = rotation_exp(Vec3(0, 0, 0.1 * k));
    w.poses.push_back(wc.inverse());
  }
  return w;
}

KeyFrame make_keyframe(const SyntheticWorld& w, int64_t id, int pose_idx,
                       const std::vector<int>& visible_points) {
  KeyFrame kf;
  kf.id = id;
  kf.frame_index = static_cast<int>(id);
  kf.timestamp = 0.1 * static_cast<double>(id);
  kf.pose = w.poses[static_cast<size_t>(pose_idx)];
  for (int pi : visible_points) {
    KeyPoint kp;
    kp.u = static_cast<double>(pi);  // placeholder pixel data
    kp.v = 10.0;
    kf.keypoints.push_back(kp);
    kf.descriptors.push_back(w.descriptor_of(pi));
    kf.bearings.push_back(
        test::observed_bearing(kf.pose, w.points[static_cast<size_t>(pi)]));
    kf.kp_colors.push_back({100, 100, 100});
  }
  kf.point_ids.assign(kf.keypoints.size(), -1);
  return kf;
}

}  // namespace

TEST_CASE("insert_keyframe and covisibility bookkeeping") {
  const SyntheticWorld w = make_world(40, 3, 3);
  MappingConfig cfg;
  cfg.covis_threshold = 15;
  Map map;

  std::vector<int> all_points(40);
  for (int i = 0; i < 40; ++i) all_points[static_cast<size_t>(i)] = i;

  map.insert_keyframe(make_keyframe(w, 0, 0, all_points), cfg.covis_threshold);
  CHECK(map.keyframes().size() == 1);
  CHECK(map.keyframe(0).covisible.empty());

  CHECK_THROWS_AS(
      map.insert_keyframe(make_keyframe(w, 0, 1, all_points),
                          cfg.covis_threshold),
      std::invalid_argument);

  // Shared observations create a weighted edge once both keyframes observe
  // the same points.
  KeyFrame kf1 = make_keyframe(w, 1, 1, all_points);
  map.insert_keyframe(kf1, cfg.covis_threshold);
  for (int i = 0; i < 25; ++i)
    map.add_point(w.points[static_cast<size_t>(i)], w.descriptor_of(i),
                  {0, 0, 0}, 0, {{0, i}, {1, i}});
  map.rebuild_covisibility(cfg.covis_threshold);
  REQUIRE(map.keyframe(0).covisible.count(1) == 1);
  CHECK(map.keyframe(0).covisible.at(1) == 25);
  CHECK(map.keyframe(1).covisible.at(0) == 25);
  map.audit(cfg.covis_threshold);

  // Below-threshold sharing stores no edge.
  Map map2;
  map2.insert_keyframe(make_keyframe(w, 0, 0, all_points), cfg.covis_threshold);
  map2.insert_keyframe(make_keyframe(w, 1, 1, all_points), cfg.covis_threshold);
  for (int i = 0; i < 5; ++i)
    map2.add_point(w.points[static_cast<size_t>(i)], w.descriptor_of(i),
                   {0, 0, 0}, 0, {{0, i}, {1, i}});
  map2.rebuild_covisibility(cfg.covis_threshold);
  CHECK(map2.keyframe(0).covisible.empty());
  map2.audit(cfg.covis_threshold);
}

TEST_CASE("create_map_points triangulates covisible pairs") {
  const SyntheticWorld w = make_world(60, 2, 5);
  MappingConfig cfg;
  Map map;

  std::vector<int> all_points(60);
  for (int i = 0; i < 60; ++i) all_points[static_cast<size_t>(i)] = i;
  map.insert_keyframe(make_keyframe(w, 0, 0, all_points), cfg.covis_threshold);
  map.insert_keyframe(make_keyframe(w, 1, 1, all_points), cfg.covis_threshold);

  // Seed shared points so the pair is covisible and parallax is measurable;
  // leave the remaining 10..59 unmatched for triangulation.
  for (int i = 0; i < 16; ++i)
    map.add_point(w.points[static_cast<size_t>(i)], w.descriptor_of(i),
                  {0, 0, 0}, 0, {{0, i}, {1, i}});
  map.rebuild_covisibility(cfg.covis_threshold);

  const int created = map.create_map_points(1, cfg);
  REQUIRE(created >= 40);  // some matches may sit near the epipole gates
  map.audit(cfg.covis_threshold);

  // Each created point must be close to its ground-truth scene point.
  int checked = 0;
  for (const auto& [pid, p] : map.points()) {
    auto obs = p.observations.find(1);
    if (obs == p.observations.end()) continue;
    const int slot = obs->second;
    const int scene_idx = static_cast<int>(
        map.keyframe(1).keypoints[static_cast<size_t>(slot)].u);
    const Vec3 truth = w.points[static_cast<size_t>(scene_idx)];
    REQUIRE((p.position - truth).norm() < 1e-4 * (1 + truth.norm()));
    ++checked;
  }
  REQUIRE(checked >= 50);
}

TEST_CASE("create_map_points yields nothing for a pure-rotation neighbor") {
  SyntheticWorld w = make_world(60, 2, 7);
  w.poses[1] = Pose{rotation_exp(Vec3(0, 0, 0.2)), Vec3::Zero()} * w.poses[0];

  MappingConfig cfg;
  Map map;
  std::vector<int> all_points(60);
  for (int i = 0; i < 60; ++i) all_points[static_cast<size_t>(i)] = i;
  map.insert_keyframe(make_keyframe(w, 0, 0, all_points), cfg.covis_threshold);
  map.insert_keyframe(make_keyframe(w, 1, 1, all_points), cfg.covis_threshold);
  for (int i = 0; i < 16; ++i)
    map.add_point(w.points[static_cast<size_t>(i)], w.descriptor_of(i),
                  {0, 0, 0}, 0, {{0, i}, {1, i}});
  map.rebuild_covisibility(cfg.covis_threshold);

  CHECK(map.create_map_points(1, cfg) == 0);  // parallax gate
}

TEST_CASE("fuse_duplicates merges coincident points") {
  const SyntheticWorld w = make_world(40, 2, 9);
  MappingConfig cfg;
  Map map;
  std::vector<int> all_points(40);
  for (int i = 0; i < 40; ++i) all_points[static_cast<size_t>(i)] = i;
  map.insert_keyframe(make_keyframe(w, 0, 0, all_points), cfg.covis_threshold);
  map.insert_keyframe(make_keyframe(w, 1, 1, all_points), cfg.covis_threshold);

  // Covisibility seed.
  for (int i = 0; i < 20; ++i)
    map.add_point(w.points[static_cast<size_t>(i)], w.descriptor_of(i),
                  {0, 0, 0}, 0, {{0, i}, {1, i}});

  // Two instances of scene point 25: one observed in kf0, one in kf1.
  const int64_t a = map.add_point(w.points[25], w.descriptor_of(25), {0, 0, 0},
                                  0, {{0, 25}});
  const int64_t b = map.add_point(w.points[25], w.descriptor_of(25), {0, 0, 0},
                                  1, {{1, 25}});
  map.rebuild_covisibility(cfg.covis_threshold);

  const size_t before = map.points().size();
  size_t obs_before = 0;
  for (const auto& [pid, p] : map.points()) obs_before += p.observations.size();

  const int fused = map.fuse_duplicates(0, cfg);
  CHECK(fused == 1);
  CHECK(map.points().size() == before - 1);
  CHECK((map.find_point(a) == nullptr) != (map.find_point(b) == nullptr));
  map.audit(cfg.covis_threshold);

  // Fusion never loses observations of the surviving points.
  size_t obs_after = 0;
  for (const auto& [pid, p] : map.points()) obs_after += p.observations.size();
  CHECK(obs_after >= obs_before);

  // Points far apart stay distinct: nothing else to fuse now.
  CHECK(map.fuse_duplicates(0, cfg) == 0);
}

TEST_CASE("cull removes weak and orphan points") {
  const SyntheticWorld w = make_world(10, 2, 11);
  MappingConfig cfg;
  Map map;
  std::vector<int> all_points(10);
  for (int i = 0; i < 10; ++i) all_points[static_cast<size_t>(i)] = i;
  map.insert_keyframe(make_keyframe(w, 0, 0, all_points), cfg.covis_threshold);
  map.insert_keyframe(make_keyframe(w, 5, 1, all_points), cfg.covis_threshold);

  // Fresh point in its grace period: kept even with a bad ratio.
  const int64_t fresh = map.add_point(w.points[0], w.descriptor_of(0),
                                      {0, 0, 0}, 5, {{5, 0}});
  map.find_point(fresh)->visible = 10;
  map.find_point(fresh)->found = 1;

  // Old point with a bad found/visible ratio: removed.
  const int64_t weak = map.add_point(w.points[1], w.descriptor_of(1), {0, 0, 0},
                                     0, {{0, 1}, {5, 1}});
  map.find_point(weak)->visible = 10;
  map.find_point(weak)->found = 1;

  // Old orphan (single observation): removed.
  const int64_t orphan = map.add_point(w.points[2], w.descriptor_of(2),
                                       {0, 0, 0}, 0, {{0, 2}});

  // Well-observed old point: kept.
  const int64_t good = map.add_point(w.points[3], w.descriptor_of(3), {0, 0, 0},
                                     0, {{0, 3}, {5, 3}});
  map.find_point(good)->visible = 10;
  map.find_point(good)->found = 9;

  const CullResult res = map.cull(5, cfg.covis_threshold);
  CHECK(res.weak == 1);
  CHECK(res.orphans == 1);
  CHECK(map.find_point(fresh) != nullptr);
  CHECK(map.find_point(weak) == nullptr);
  CHECK(map.find_point(orphan) == nullptr);
  CHECK(map.find_point(good) != nullptr);
  map.audit(cfg.covis_threshold);
}

TEST_CASE("local bundle adjustment") {
  const SyntheticWorld w = make_world(80, 4, 13);
  MappingConfig cfg;
  cfg.covis_threshold = 15;
  Map map;
  std::vector<int> all_points(80);
  for (int i = 0; i < 80; ++i) all_points[static_cast<size_t>(i)] = i;
  for (int k = 0; k < 4; ++k)
    map.insert_keyframe(make_keyframe(w, k, k, all_points),
                        cfg.covis_threshold);
  for (int i = 0; i < 80; ++i) {
    std::initializer_list<std::pair<int64_t, int>> obs = {
        {0, i}, {1, i}, {2, i}, {3, i}};
    map.add_point(w.points[static_cast<size_t>(i)], w.descriptor_of(i),
                  {0, 0, 0}, 0, obs);
  }
  map.rebuild_covisibility(cfg.covis_threshold);

  SECTION("zero-noise window is a fixed point") {
    const auto poses_before = map.keyframes();
    const BaResult res = map.local_bundle_adjust(3, TrackMode::kTri, cfg);
    CHECK(res.initial_cost < 1e-18);
    CHECK(res.final_cost <= res.initial_cost);
    CHECK_FALSE(res.diverged);
    for (const auto& [id, kf] : map.keyframes()) {
      CHECK((kf.pose.t - poses_before.at(id).pose.t).norm() < 1e-9);
      CHECK(rotation_angle_between(kf.pose.R, poses_before.at(id).pose.R) <
            1e-9);
    }
  }

  SECTION("noise on points is reduced and cost never increases") {
    std::mt19937_64 rng(17);
    double pre_cost_check = 0;
    for (int i = 0; i < 80; ++i) {
      MapPoint* p = map.find_point(i);
      REQUIRE(p != nullptr);
      p->position += 0.01 * p->position.norm() * test::random_unit(rng);
      pre_cost_check += 1;
    }
    const BaResult res = map.local_bundle_adjust(3, TrackMode::kTri, cfg);
    REQUIRE(res.applied);
    REQUIRE(res.final_cost < res.initial_cost);
    for (size_t i = 1; i < res.cost_history.size(); ++i)
      REQUIRE(res.cost_history[i] <= res.cost_history[i - 1]);

    // Angular RMS against the oracle bearings drops.
    double rms = 0;
    int n = 0;
    for (const auto& [pid, p] : map.points()) {
      for (const auto& [kf_id, slot] : p.observations) {
        const KeyFrame& kf = map.keyframe(kf_id);
        rms += std::pow(angular_error(kf.pose.act(p.position).normalized(),
                                      kf.bearings[static_cast<size_t>(slot)]),
                        2);
        ++n;
      }
    }
    rms = std::sqrt(rms / n);
    REQUIRE(rms < 0.002);

    // The scale gauge held: the second-oldest keyframe's baseline norm.
    map.audit(cfg.covis_threshold);
  }

  SECTION("tri-mode scale gauge pins the second keyframe translation norm") {
    std::mt19937_64 rng(19);
    for (int i = 0; i < 80; ++i)
      map.find_point(i)->position += 0.01 * test::random_unit(rng);
    const double norm_before = map.keyframe(1).pose.t.norm();
    map.local_bundle_adjust(3, TrackMode::kTri, cfg);
    CHECK(map.keyframe(1).pose.t.norm() ==
          Catch::Approx(norm_before).epsilon(1e-12));
    // Oldest keyframe is the gauge and never moves.
    CHECK((map.keyframe(0).pose.t - w.poses[0].t).norm() < 1e-15);
  }

  SECTION("single-keyframe window is an error") {
    Map lone;
    const SyntheticWorld w2 = make_world(20, 1, 23);
    std::vector<int> pts(20);
    for (int i = 0; i < 20; ++i) pts[static_cast<size_t>(i)] = i;
    lone.insert_keyframe(make_keyframe(w2, 0, 0, pts), cfg.covis_threshold);
    CHECK_THROWS_AS(lone.local_bundle_adjust(0, TrackMode::kTri, cfg),
                    std::invalid_argument);
  }
}

TEST_CASE("map export writes every point") {
  const SyntheticWorld w = make_world(10, 2, 29);
  MappingConfig cfg;
  Map map;
  std::vector<int> pts(10);
  for (int i = 0; i < 10; ++i) pts[static_cast<size_t>(i)] = i;
  map.insert_keyframe(make_keyframe(w, 0, 0, pts), cfg.covis_threshold);
  for (int i = 0; i < 10; ++i)
    map.add_point(w.points[static_cast<size_t>(i)], w.descriptor_of(i),
                  {10, 20, 30}, 0, {{0, i}});

  const auto path =
      (std::filesystem::temp_directory_path() / "panoslam_map.ply").string();
  map.export_ply(path);
  std::ifstream f(path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  CHECK(text.find("element vertex 10") != std::string::npos);
}
