#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "panoslam/dataset.hpp"
#include "panoslam/features.hpp"
#include "test_support.hpp"

using namespace panoslam;

namespace {

/// Brute-force FAST-9 segment test, written independently of the detector:
/// no pyramid, no NMS, no scores. Returns corner pixels of the level-0 image.
bool oracle_fast9(const ImageU8& img, int x, int y, int t) {
  static const int off[16][2] = {{0, -3}, {1, -3}, {2, -2}, {3, -1},
                                 {3, 0},  {3, 1},  {2, 2},  {1, 3},
                                 {0, 3},  {-1, 3}, {-2, 2}, {-3, 1},
                                 {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}};
  const int c = img.at(x, y);
  int diffs[32];
  for (int i = 0; i < 16; ++i) {
    int xx = (x + off[i][0]) % img.width();
    if (xx < 0) xx += img.width();
    const int yy = std::clamp(y + off[i][1], 0, img.height() - 1);
    diffs[i] = diffs[i + 16] = static_cast<int>(img.at(xx, yy)) - c;
  }
  for (int sign = -1; sign <= 1; sign += 2) {
    int run = 0;
    for (int i = 0; i < 32; ++i) {
      if (sign * diffs[i] > t) {
        if (++run >= 9) return true;
      } else {
        run = 0;
      }
    }
  }
  return false;
}

ImageU8 render_gray_pano(int w, int h, int frame = 0) {
  const SceneSpec scene = builtin_desk_scene();
  const io::Trajectory traj = make_circle_trajectory(scene.trajectory);
  auto [rgb, depth] =
      raycast_scene(scene, traj[static_cast<size_t>(frame)].pose,
                    make_intrinsics(w, h));
  return to_grayscale(rgb);
}

ImageU8 shift_columns(const ImageU8& img, int k) {
  ImageU8 out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at((x + k) % img.width(), y) = img.at(x, y);
  return out;
}

}  // namespace

TEST_CASE("uniform image has no keypoints") {
  const ImageU8 gray(256, 128, 128);
  FeatureConfig cfg;
  auto [kps, descs] = detect_and_describe(gray, cfg);
  CHECK(kps.empty());
  CHECK(descs.empty());
}

TEST_CASE("image too small for the patch size is rejected") {
  const ImageU8 tiny(64, 32, 0);
  FeatureConfig cfg;
  CHECK_THROWS_AS(detect_and_describe(tiny, cfg), std::invalid_argument);
  const ImageU8 not_pano(300, 200, 0);
  CHECK_THROWS_AS(detect_and_describe(not_pano, cfg), std::invalid_argument);
}

TEST_CASE("black square corners are detected where the oracle fires") {
  ImageU8 img(256, 128, 255);
  for (int y = 44; y < 84; ++y)
    for (int x = 108; x < 148; ++x) img.at(x, y) = 0;

  // Oracle: collect all segment-test corners.
  std::vector<std::pair<int, int>> oracle;
  for (int y = 10; y < 118; ++y)
    for (int x = 0; x < 256; ++x)
      if (oracle_fast9(img, x, y, 20)) oracle.emplace_back(x, y);
  REQUIRE_FALSE(oracle.empty());

  FeatureConfig cfg;
  auto [kps, descs] = detect_and_describe(img, cfg);
  REQUIRE(kps.size() >= 4);

  const std::vector<std::pair<double, double>> corners = {
      {108, 44}, {147, 44}, {108, 83}, {147, 83}};
  int near_corners = 0;
  for (const auto& [cx, cy] : corners) {
    for (const auto& kp : kps) {
      if (std::abs(kp.u - cx) <= 3 && std::abs(kp.v - cy) <= 3) {
        ++near_corners;
        break;
      }
    }
  }
  CHECK(near_corners >= 4);

  // Every detected level-0 keypoint must be an oracle corner (up to the
  // sub-pixel shift).
  for (const auto& kp : kps) {
    if (kp.octave != 0) continue;
    const int x = static_cast<int>(std::lround(kp.u));
    const int y = static_cast<int>(std::lround(kp.v));
    bool found = false;
    for (const auto& [ox, oy] : oracle)
      if (std::abs(ox - x) <= 1 && std::abs(oy - y) <= 1) found = true;
    REQUIRE(found);
  }
}

TEST_CASE("detection is deterministic") {
  const ImageU8 gray = render_gray_pano(512, 256);
  FeatureConfig cfg;
  auto [kps_a, descs_a] = detect_and_describe(gray, cfg);
  auto [kps_b, descs_b] = detect_and_describe(gray, cfg);
  REQUIRE(kps_a.size() == kps_b.size());
  REQUIRE(descs_a == descs_b);
  for (size_t i = 0; i < kps_a.size(); ++i) {
    REQUIRE(kps_a[i].u == kps_b[i].u);
    REQUIRE(kps_a[i].v == kps_b[i].v);
    REQUIRE(kps_a[i].response == kps_b[i].response);
    REQUIRE(kps_a[i].angle == kps_b[i].angle);
  }
}

TEST_CASE("keypoints respect the polar band and grid quota") {
  const ImageU8 gray = render_gray_pano(512, 256);
  FeatureConfig cfg;
  auto [kps, descs] = detect_and_describe(gray, cfg);
  REQUIRE(kps.size() > 100);

  const double band = 0.05 * 256;
  const int cells = cfg.grid_cols * cfg.grid_rows;
  const int quota = std::max(1, (cfg.n_features + cells - 1) / cells);
  std::map<std::pair<int, int>, int> per_cell;
  for (const auto& kp : kps) {
    REQUIRE(kp.v >= band - 1.0);
    REQUIRE(kp.v <= 256 - band + 1.0);
    REQUIRE(kp.u >= 0);
    REQUIRE(kp.u < 512);
    REQUIRE(kp.octave >= 0);
    REQUIRE(kp.octave < cfg.n_levels);
    const int cx = std::min(static_cast<int>(kp.u / (512.0 / cfg.grid_cols)),
                            cfg.grid_cols - 1);
    const int cy = std::min(static_cast<int>(kp.v / (256.0 / cfg.grid_rows)),
                            cfg.grid_rows - 1);
    per_cell[{cx, cy}] += 1;
  }
  for (const auto& [cell, count] : per_cell) REQUIRE(count <= quota);
}

TEST_CASE("cyclic shift equivariance", "[slowish]") {
  const ImageU8 gray = render_gray_pano(512, 256);
  const int k = 128;
  const ImageU8 shifted = shift_columns(gray, k);

  FeatureConfig cfg;
  auto [kps_a, descs_a] = detect_and_describe(gray, cfg);
  auto [kps_b, descs_b] = detect_and_describe(shifted, cfg);
  REQUIRE(kps_a.size() > 200);

  int survived = 0;
  for (size_t i = 0; i < kps_a.size(); ++i) {
    const double expected_u = std::fmod(kps_a[i].u + k, 512.0);
    for (size_t j = 0; j < kps_b.size(); ++j) {
      if (kps_b[j].octave != kps_a[i].octave) continue;
      double du = std::abs(kps_b[j].u - expected_u);
      du = std::min(du, 512.0 - du);
      if (du <= 2.0 && std::abs(kps_b[j].v - kps_a[i].v) <= 2.0 &&
          descs_a[i].distance(descs_b[j]) <= 16) {
        ++survived;
        break;
      }
    }
  }
  REQUIRE(survived >= static_cast<int>(0.9 * kps_a.size()));
}

TEST_CASE("descriptor matching") {
  std::mt19937_64 rng(3);
  auto random_desc = [&rng] {
    Descriptor d;
    for (auto& w : d.bits) w = rng();
    return d;
  };

  SECTION("identical lists match with distance zero") {
    std::vector<Descriptor> a;
    for (int i = 0; i < 50; ++i) a.push_back(random_desc());
    const auto matches = match_descriptors(a, a, 0.8, 256);
    REQUIRE(matches.size() == a.size());
    for (const auto& m : matches) {
      CHECK(m.index_a == m.index_b);
      CHECK(m.distance == 0);
    }
  }

  SECTION("disjoint random descriptors produce a near-empty set") {
    std::vector<Descriptor> a, b;
    for (int i = 0; i < 200; ++i) a.push_back(random_desc());
    for (int i = 0; i < 200; ++i) b.push_back(random_desc());
    const auto matches = match_descriptors(a, b, 1.0, 50);
    CHECK(matches.size() <= 2);
  }

  SECTION("empty inputs give empty output") {
    std::vector<Descriptor> a = {random_desc()};
    CHECK(match_descriptors(a, {}, 0.8).empty());
    CHECK(match_descriptors({}, a, 0.8).empty());
  }

  SECTION("ratio outside (0,1] is rejected") {
    std::vector<Descriptor> a = {random_desc()};
    CHECK_THROWS_AS(match_descriptors(a, a, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(match_descriptors(a, a, 1.5), std::invalid_argument);
  }
}
