#include <catch2/catch_amalgamated.hpp>

#include "panoslam/two_view.hpp"
#include "test_support.hpp"

using namespace panoslam;

namespace {

/// Random two-view setup with a point visible in both frames, bearings from
/// the forward-projection oracle.
struct TwoViewCase {
  Pose t1, t2;
  Vec3 point;
  Bearing p1, p2;
};

TwoViewCase random_case(std::mt19937_64& rng) {
  TwoViewCase c;
  for (;;) {
    c.t1 = test::random_pose(rng);
    c.t2 = test::random_pose(rng);
    const Pose t12 = relative_pose(c.t1, c.t2);
    if (t12.t.norm() < 0.2) continue;
    c.point = 10.0 * test::random_unit(rng) * test::uniform(rng, 0.2, 2.0);
    const Vec3 pc1 = c.t1.act(c.point);
    const Vec3 pc2 = c.t2.act(c.point);
    if (pc1.norm() < 0.5 || pc2.norm() < 0.5) continue;
    c.p1 = pc1.normalized();
    c.p2 = pc2.normalized();
    // Keep clear of the triangulation gates so acceptance is expected.
    const Bearing e2 = t12.t.normalized();
    const Bearing e1 = (-(t12.R.transpose() * t12.t)).normalized();
    if (!epipole_angle_ok(c.p2, e2, 3.0)) continue;
    if (!epipole_angle_ok(c.p1, e1, 3.0)) continue;
    if (angular_error((t12.R * c.p1).normalized(), c.p2) < deg2rad(1.0))
      continue;
    return c;
  }
}

}  // namespace

TEST_CASE("essential matrix of a pure y-translation") {
  // T12 = T2 * T1^-1 = T2 here, so t12 = (0,1,0) and E = [t12]x.
  const Pose t1 = Pose::Identity();
  const Pose t2{Mat3::Identity(), Vec3(0, 1, 0)};
  const EssentialMatrix e = essential_from_poses(t1, t2);
  Mat3 expected;
  expected << 0, 0, 1, 0, 0, 0, -1, 0, 0;
  CHECK((e.e - expected).norm() < 1e-12);
}

TEST_CASE("essential matrix rejects zero baseline") {
  std::mt19937_64 rng(3);
  const Pose t = test::random_pose(rng);
  CHECK_THROWS_AS(essential_from_poses(t, t), std::invalid_argument);
}

TEST_CASE("essential matrix satisfies the epipolar constraint on oracle data") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    const TwoViewCase c = random_case(rng);
    const EssentialMatrix e = essential_from_poses(c.t1, c.t2);
    REQUIRE(std::abs(c.p2.dot(e.e * c.p1)) < 1e-9);

    // Rank 2 with two equal leading singular values.
    Eigen::JacobiSVD<Mat3> svd(e.e);
    const auto& sv = svd.singularValues();
    REQUIRE(sv(2) < 1e-9 * sv(0));
    REQUIRE(std::abs(sv(0) - sv(1)) < 1e-9 * sv(0));
  }
}

TEST_CASE("epipolar plane extraction") {
  Mat3 em;
  em << 0, 0, 1, 0, 0, 0, -1, 0, 0;
  const EssentialMatrix e{em};

  const EpipolarPlane pl = epipolar_plane(e, {1, 0, 0});
  REQUIRE_FALSE(pl.degenerate);
  CHECK((pl.n - Vec3(0, 0, 1)).norm() < 1e-12);

  CHECK(epipolar_plane(e, {0, 1, 0}).degenerate);
}

TEST_CASE("epipolar plane contains the first-frame bearing on oracle data") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    const TwoViewCase c = random_case(rng);
    const EpipolarPlane pl =
        epipolar_plane(essential_from_poses(c.t1, c.t2), c.p2);
    REQUIRE_FALSE(pl.degenerate);
    REQUIRE(std::abs(pl.n.dot(c.p1)) < 1e-9);
  }
}

TEST_CASE("sq_plane_distance reference values") {
  CHECK(sq_plane_distance({{0, 0, 1}, false}, {0, 0, 1}) == Catch::Approx(1.0));
  CHECK(sq_plane_distance({{0, 0, 1}, false}, {1, 0, 0}) ==
        Catch::Approx(0.0).margin(1e-15));
  const Vec3 n = Vec3(1, 1, 0).normalized();
  CHECK(sq_plane_distance({n, false}, {1, 0, 0}) == Catch::Approx(0.5));
}

TEST_CASE("sq_plane_distance equals sin^2 of the bearing-plane angle") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 n = test::random_unit(rng);
    const Vec3 p = test::random_unit(rng);
    const double d2 = sq_plane_distance({n, false}, p);
    const double angle_to_plane = std::asin(std::clamp(n.dot(p), -1.0, 1.0));
    REQUIRE(std::abs(d2 - std::pow(std::sin(angle_to_plane), 2)) < 1e-12);
  }
}

TEST_CASE("epipole angle gate") {
  const Bearing e{1, 0, 0};
  CHECK_FALSE(epipole_angle_ok({1, 0, 0}, e, 1.0));
  CHECK_FALSE(epipole_angle_ok({-1, 0, 0}, e, 1.0));  // antipode too
  CHECK(epipole_angle_ok({0, 1, 0}, e, 1.0));
  // Boundary is inclusive.
  const double mu = 1.0;
  const Bearing at_boundary{std::cos(deg2rad(mu)), std::sin(deg2rad(mu)), 0};
  CHECK(epipole_angle_ok(at_boundary, e, mu));
}

TEST_CASE("check_parallax") {
  std::mt19937_64 rng(11);
  const Mat3 r = test::random_rotation(rng);
  std::vector<Bearing> b1, b2;
  for (int i = 0; i < 21; ++i) {
    const Bearing b = test::random_unit(rng);
    b1.push_back(b);
    b2.push_back((r * b).normalized());
  }
  CHECK(check_parallax(b1, b2, r) < 1e-9);                    // pure rotation
  CHECK(check_parallax(b1, b1, Mat3::Identity()) < 1e-9);     // identity

  // Synthetic 1 m baseline with points at 10 m: compare against the analytic
  // two-ray angle for each match, checked via the median.
  const Pose t1 = Pose::Identity();
  const Pose t2{Mat3::Identity(), Vec3(0, -1, 0)};
  std::vector<Bearing> p1s, p2s;
  std::vector<double> angles;
  for (int i = 0; i < 31; ++i) {
    const Vec3 point = 10.0 * test::random_unit(rng);
    const Bearing p1 = test::observed_bearing(t1, point);
    const Bearing p2 = test::observed_bearing(t2, point);
    p1s.push_back(p1);
    p2s.push_back(p2);
    angles.push_back(std::acos(std::clamp(p1.dot(p2), -1.0, 1.0)));
  }
  std::nth_element(angles.begin(), angles.begin() + angles.size() / 2,
                   angles.end());
  const double expected = angles[angles.size() / 2];
  CHECK(check_parallax(p1s, p2s, Mat3::Identity()) ==
        Catch::Approx(expected).margin(1e-12));

  CHECK_THROWS_AS(check_parallax({}, {}, Mat3::Identity()),
                  std::invalid_argument);
}

TEST_CASE("triangulation recovers the constructed point") {
  const Pose t1 = Pose::Identity();
  const Pose t2{Mat3::Identity(), Vec3(0, -1, 0)};
  const Vec3 point(-10, 0, 0);
  const Bearing p1 = test::observed_bearing(t1, point);
  const Bearing p2 = test::observed_bearing(t2, point);
  const TriangulationResult res = triangulate_dlt(p1, p2, t1, t2);
  REQUIRE(res.accepted());
  CHECK((res.point - point).norm() < 1e-6 * point.norm());
}

TEST_CASE("triangulation rejects degenerate inputs") {
  const Pose t1 = Pose::Identity();
  const Pose t2{Mat3::Identity(), Vec3(0, -1, 0)};

  // Rays through the epipole.
  const Bearing epipole = Vec3(0, -1, 0);
  CHECK(triangulate_dlt(epipole, epipole, t1, t2).status ==
        TriangulationStatus::kDegenerate);

  // Zero baseline.
  const Vec3 point(-10, 0, 0);
  const Bearing p = test::observed_bearing(t1, point);
  CHECK(triangulate_dlt(p, p, t1, t1).status ==
        TriangulationStatus::kDegenerate);
}

TEST_CASE("triangulation oracle equivalence on random configurations") {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 1000; ++i) {
    const TwoViewCase c = random_case(rng);
    const TriangulationResult res = triangulate_dlt(c.p1, c.p2, c.t1, c.t2);
    REQUIRE(res.accepted());
    REQUIRE((res.point - c.point).norm() < 1e-6 * c.point.norm());

    const EssentialMatrix e = essential_from_poses(c.t1, c.t2);
    REQUIRE(std::abs(c.p2.dot(e.e * c.p1)) < 1e-6);
  }
}

TEST_CASE("triangulation is invariant to a global rigid transform") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 200; ++i) {
    const TwoViewCase c = random_case(rng);
    const Pose g = test::random_pose(rng);  // world' -> world
    // Poses compose on the right: T_cw' = T_cw * g.
    const Pose t1g = c.t1 * g;
    const Pose t2g = c.t2 * g;
    const Vec3 point_g = g.inverse().act(c.point);

    const TriangulationResult a = triangulate_dlt(c.p1, c.p2, c.t1, c.t2);
    const TriangulationResult b = triangulate_dlt(c.p1, c.p2, t1g, t2g);
    REQUIRE(a.accepted());
    REQUIRE(b.accepted());
    REQUIRE((g.act(b.point) - a.point).norm() < 1e-6 * (1 + a.point.norm()));
    REQUIRE((b.point - point_g).norm() < 1e-6 * (1 + point_g.norm()));
  }
}

TEST_CASE("angular error reference values") {
  CHECK(angular_error({1, 0, 0}, {1, 0, 0}) == Catch::Approx(0).margin(1e-12));
  CHECK(angular_error({1, 0, 0}, {0, 1, 0}) == Catch::Approx(kPi / 2));
  CHECK(angular_error({1, 0, 0}, {-1, 0, 0}) == Catch::Approx(kPi));
}
