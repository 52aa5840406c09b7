#include <catch2/catch_amalgamated.hpp>

#include "panoslam/sparse_depth.hpp"
#include "test_support.hpp"

using namespace panoslam;

TEST_CASE("world_to_camera implements the camera-in-world inversion") {
  CHECK((world_to_camera({1, 2, 3}, Pose::Identity()) - Vec3(1, 2, 3)).norm() <
        1e-15);

  Pose cam_in_world;  // pure translation to (0,0,1)
  cam_in_world.t = Vec3(0, 0, 1);
  CHECK(world_to_camera({0, 0, 1}, cam_in_world).norm() < 1e-15);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Pose pose_wc = test::random_pose(rng);
    const Vec3 p = 5.0 * test::random_unit(rng);
    const Vec3 cam = world_to_camera(p, pose_wc);
    const Vec3 back = pose_wc.R * cam + pose_wc.t;
    REQUIRE((back - p).norm() < 1e-12);
    // Matches the world-to-camera pose convention used elsewhere.
    REQUIRE((pose_wc.inverse().act(p) - cam).norm() < 1e-12);
  }
}

TEST_CASE("render_sparse_depth reference cases") {
  const Intrinsics intr = make_intrinsics(2048, 1024);

  SECTION("single point lands at the image center") {
    const DepthMap d =
        render_sparse_depth({{0, Vec3(-5, 0, 0)}}, Pose::Identity(), intr);
    REQUIRE(d.valid_count() == 1);
    CHECK(d.valid.at(1024, 512) == 1);
    CHECK(d.values.at(1024, 512) == Catch::Approx(5.0));
  }

  SECTION("collision keeps the nearer range") {
    const DepthMap d = render_sparse_depth(
        {{0, Vec3(-5, 0, 0)}, {1, Vec3(-9, 0, 0)}}, Pose::Identity(), intr);
    REQUIRE(d.valid_count() == 1);
    CHECK(d.values.at(1024, 512) == Catch::Approx(5.0));
  }

  SECTION("empty map renders all-invalid") {
    const DepthMap d = render_sparse_depth({}, Pose::Identity(), intr);
    CHECK(d.valid_count() == 0);
  }
}

TEST_CASE("render_sparse_depth properties") {
  const Intrinsics intr = make_intrinsics(512, 256);
  std::mt19937_64 rng(5);
  const Pose t_cw = test::random_pose(rng);

  std::vector<DepthSample> points;
  for (int i = 0; i < 400; ++i)
    points.push_back(
        {i, test::uniform(rng, 1.0, 30.0) * test::random_unit(rng)});

  const DepthMap a = render_sparse_depth(points, t_cw, intr);
  CHECK(a.valid_count() <= points.size());
  CHECK(a.valid_count() > 0);

  // Every valid pixel's range equals some point's range under this pose.
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 512; ++x) {
      if (!a.valid.at(x, y)) continue;
      bool matched = false;
      for (const auto& p : points)
        if (std::abs(t_cw.act(p.position_w).norm() - a.values.at(x, y)) < 1e-9)
          matched = true;
      REQUIRE(matched);
    }

  // Bit-identical re-render.
  const DepthMap b = render_sparse_depth(points, t_cw, intr);
  REQUIRE(a.values == b.values);
  REQUIRE(a.valid == b.valid);

  // Deterministic collision handling regardless of input order.
  auto reversed = points;
  std::reverse(reversed.begin(), reversed.end());
  const DepthMap c = render_sparse_depth(reversed, t_cw, intr);
  REQUIRE(a.values == c.values);
}
