#include <catch2/catch_amalgamated.hpp>

#include "panoslam/tracking.hpp"
#include "test_support.hpp"

using namespace panoslam;

namespace {

struct TrackingFixture {
  Intrinsics intr = make_intrinsics(1024, 512);
  std::vector<Vec3> scene;
  MapSnapshot snapshot;

  Descriptor descriptor_of(int i) const {
    Descriptor d;
    std::mt19937_64 rng(0x5eed + static_cast<uint64_t>(i));
    for (auto& w : d.bits) w = rng();
    return d;
  }

  TrackingFixture(int n_points, uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (int i = 0; i < n_points; ++i) {
      scene.push_back(test::uniform(rng, 3.0, 15.0) * test::random_unit(rng));
      snapshot.points.push_back({i, scene.back(), descriptor_of(i)});
    }
    snapshot.ref_tracked = n_points;
    snapshot.ref_kf = 0;
  }

  Frame frame_at(const Pose& t_cw) const {
    Frame f;
    f.index = 1;
    for (size_t i = 0; i < scene.size(); ++i) {
      const Vec3 pc = t_cw.act(scene[i]);
      const Bearing b = pc.normalized();
      const PixelCoord px = project(intr, pc);
      KeyPoint kp;
      kp.u = px.u;
      kp.v = px.v;
      f.keypoints.push_back(kp);
      f.bearings.push_back(b);
      f.descriptors.push_back(descriptor_of(static_cast<int>(i)));
      f.kp_colors.push_back({0, 0, 0});
    }
    f.matched_point.assign(f.keypoints.size(), -1);
    return f;
  }
};

}  // namespace

TEST_CASE("track_frame recovers the keyframe pose on identical observations") {
  TrackingFixture fx(120, 3);
  std::mt19937_64 rng(5);
  const Pose g = test::random_pose(rng);

  TrackState state;
  state.status = TrackStatus::kOk;
  state.current = g;
  state.velocity = Pose::Identity();
  state.frames_tracked = 1;

  Frame frame = fx.frame_at(g);
  TrackingConfig cfg;
  const TrackFrameResult res =
      track_frame(frame, fx.snapshot, state, fx.intr, cfg);
  REQUIRE(res.ok);
  CHECK(res.inliers >= 110);
  CHECK(rotation_angle_between(frame.pose.R, g.R) < 1e-6);
  CHECK((frame.pose.t - g.t).norm() < 1e-6);
  CHECK(state.status == TrackStatus::kOk);
  CHECK(state.tracked_points == res.inliers);
}

TEST_CASE("track_frame follows constant motion and updates the velocity") {
  TrackingFixture fx(150, 7);
  TrackState state;
  state.status = TrackStatus::kOk;
  state.current = Pose::Identity();
  state.velocity = Pose::Identity();
  state.frames_tracked = 1;

  Pose step;  // constant per-frame motion
  step.R = rotation_exp(Vec3(0, 0, 0.01));
  step.t = Vec3(0.05, -0.02, 0.01);

  TrackingConfig cfg;
  Pose truth = Pose::Identity();
  for (int k = 1; k <= 5; ++k) {
    truth = step * truth;
    Frame frame = fx.frame_at(truth);
    const TrackFrameResult res =
        track_frame(frame, fx.snapshot, state, fx.intr, cfg);
    REQUIRE(res.ok);
    REQUIRE((frame.pose.t - truth.t).norm() < 1e-5);
  }
  // After a few steps the velocity matches the constant motion.
  CHECK((state.velocity.t - step.t).norm() < 1e-5);
  CHECK(rotation_angle_between(state.velocity.R, step.R) < 1e-5);
}

TEST_CASE("track_frame loses on a featureless frame") {
  TrackingFixture fx(100, 11);
  TrackState state;
  state.status = TrackStatus::kOk;
  state.current = Pose::Identity();
  state.velocity = Pose::Identity();
  state.frames_tracked = 1;

  Frame empty;
  empty.matched_point.clear();
  TrackingConfig cfg;
  const TrackFrameResult res =
      track_frame(empty, fx.snapshot, state, fx.intr, cfg);
  CHECK_FALSE(res.ok);
  CHECK(state.status == TrackStatus::kLost);
}

TEST_CASE("relative pose RANSAC bootstraps from oracle bearings") {
  std::mt19937_64 rng(13);
  TwoViewGeometryConfig geom;
  for (int rep = 0; rep < 5; ++rep) {
    const Pose t1 = Pose::Identity();
    Pose t2;
    t2.R = rotation_exp(0.1 * test::random_unit(rng));
    t2.t = test::random_unit(rng);  // unit baseline

    std::vector<Bearing> p1, p2;
    for (int i = 0; i < 120; ++i) {
      const Vec3 point = test::uniform(rng, 3.0, 20.0) * test::random_unit(rng);
      p1.push_back(test::observed_bearing(t1, point));
      p2.push_back(test::observed_bearing(t2, point));
    }
    // 15% outliers.
    for (int i = 0; i < 18; ++i)
      p2[static_cast<size_t>(rng() % p2.size())] = test::random_unit(rng);

    const auto rel = estimate_relative_pose_ransac(p1, p2, 99, geom);
    REQUIRE(rel.has_value());
    CHECK(rotation_angle_between(rel->r12, t2.R) < 1e-4);
    const double dir_err = std::min((rel->t12 - t2.t).norm(),
                                    (rel->t12 + t2.t).norm());
    CHECK(dir_err < 1e-3);
    CHECK(rel->inlier_matches.size() >= 90);
  }
}

TEST_CASE("relative pose RANSAC is deterministic in the seed") {
  std::mt19937_64 rng(17);
  const Pose t2{rotation_exp(Vec3(0.02, -0.03, 0.05)), Vec3(0.6, -0.8, 0)};
  std::vector<Bearing> p1, p2;
  for (int i = 0; i < 80; ++i) {
    const Vec3 point = test::uniform(rng, 3.0, 20.0) * test::random_unit(rng);
    p1.push_back(point.normalized());
    p2.push_back(test::observed_bearing(t2, point));
  }
  TwoViewGeometryConfig geom;
  const auto a = estimate_relative_pose_ransac(p1, p2, 1234, geom);
  const auto b = estimate_relative_pose_ransac(p1, p2, 1234, geom);
  REQUIRE(a.has_value());
  REQUIRE(b.has_value());
  CHECK((a->r12 - b->r12).norm() == 0.0);
  CHECK((a->t12 - b->t12).norm() == 0.0);
  CHECK(a->inlier_matches == b->inlier_matches);
}
