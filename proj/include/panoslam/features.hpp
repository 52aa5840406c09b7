#pragma once

// ORB-style features on equirectangular panoramas: FAST corners over a scale
// pyramid, intensity-centroid orientation, rotation-steered 256-bit binary
// descriptors. Detection treats u as cyclic (patches wrap across the
// left/right seam) and excludes a polar band where equirectangular stretch
// makes binary patches meaningless. Everything is deterministic: identical
// image and config give bit-identical keypoints and descriptors.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "panoslam/config.hpp"
#include "panoslam/image.hpp"

namespace panoslam {

struct KeyPoint {
  double u = 0, v = 0;   // sub-pixel position at level-0 scale
  int octave = 0;        // pyramid level index
  double response = 0;   // corner score
  double angle = 0;      // orientation, radians
};

struct Descriptor {
  std::array<uint64_t, 4> bits{};

  int distance(const Descriptor& o) const {
    int d = 0;
    for (int i = 0; i < 4; ++i) d += std::popcount(bits[i] ^ o.bits[i]);
    return d;
  }
  bool operator==(const Descriptor&) const = default;
};

struct Match {
  int index_a = 0;
  int index_b = 0;
  int distance = 0;  // Hamming bits in [0, 256]
};

struct FeatureConfig {
  int n_levels = 8;
  double scale_factor = 1.2;
  int fast_threshold = 20;
  int n_features = 2000;
  double match_ratio = 0.8;
  int max_hamming = 64;
  int grid_cols = 64;
  int grid_rows = 32;
  double polar_band = 0.05;  // fraction of H excluded top and bottom
  bool cyclic = true;        // panorama seam wrap; off for plain images

  static FeatureConfig from(const Config& c) {
    FeatureConfig f;
    f.n_levels = c.get_int("features.n_levels");
    f.scale_factor = c.get_double("features.scale_factor");
    f.fast_threshold = c.get_int("features.fast_threshold");
    f.n_features = c.get_int("features.n_features");
    f.match_ratio = c.get_double("features.match_ratio");
    f.max_hamming = c.get_int("features.max_hamming");
    return f;
  }
};

namespace detail {

constexpr int kPatchRadius = 15;    // orientation patch
constexpr int kBriefRadius = 12;    // descriptor sample extent
constexpr int kEdgeMargin = 16;     // vertical (and horizontal if not cyclic)

inline int wrap_x(int x, int w) {
  x %= w;
  return x < 0 ? x + w : x;
}

inline uint8_t sample(const ImageU8& img, int x, int y, bool cyclic) {
  if (cyclic) {
    x = wrap_x(x, img.width());
  } else {
    x = std::clamp(x, 0, img.width() - 1);
  }
  y = std::clamp(y, 0, img.height() - 1);
  return img.at(x, y);
}

inline double sample_bilinear(const ImageU8& img, double x, double y,
                              bool cyclic) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  const double v00 = sample(img, x0, y0, cyclic);
  const double v10 = sample(img, x0 + 1, y0, cyclic);
  const double v01 = sample(img, x0, y0 + 1, cyclic);
  const double v11 = sample(img, x0 + 1, y0 + 1, cyclic);
  return (v00 * (1 - fx) + v10 * fx) * (1 - fy) +
         (v01 * (1 - fx) + v11 * fx) * fy;
}

/// Resizes level 0 to (w, h) with bilinear sampling (cyclic in x when asked).
inline ImageU8 resize(const ImageU8& src, int w, int h, bool cyclic) {
  ImageU8 dst(w, h);
  const double sx = static_cast<double>(src.width()) / w;
  const double sy = static_cast<double>(src.height()) / h;
  for (int y = 0; y < h; ++y) {
    const double srcy = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < w; ++x) {
      const double srcx = (x + 0.5) * sx - 0.5;
      const double v = sample_bilinear(src, srcx, srcy, cyclic);
      dst.at(x, y) = static_cast<uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
    }
  }
  return dst;
}

/// Separable 5x5 box blur; the descriptor samples this.
inline ImageU8 box_blur5(const ImageU8& src, bool cyclic) {
  const int w = src.width(), h = src.height();
  std::vector<uint16_t> tmp(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int s = 0;
      for (int d = -2; d <= 2; ++d) s += sample(src, x + d, y, cyclic);
      tmp[static_cast<size_t>(y) * w + x] = static_cast<uint16_t>(s);
    }
  ImageU8 dst(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int s = 0;
      for (int d = -2; d <= 2; ++d) {
        const int yy = std::clamp(y + d, 0, h - 1);
        s += tmp[static_cast<size_t>(yy) * w + x];
      }
      dst.at(x, y) = static_cast<uint8_t>((s + 12) / 25);
    }
  return dst;
}

inline const std::array<std::array<int, 2>, 16>& fast_circle() {
  static const std::array<std::array<int, 2>, 16> c = {{{0, -3},
                                                        {1, -3},
                                                        {2, -2},
                                                        {3, -1},
                                                        {3, 0},
                                                        {3, 1},
                                                        {2, 2},
                                                        {1, 3},
                                                        {0, 3},
                                                        {-1, 3},
                                                        {-2, 2},
                                                        {-3, 1},
                                                        {-3, 0},
                                                        {-3, -1},
                                                        {-2, -2},
                                                        {-1, -3}}};
  return c;
}

/// FAST-9 segment test. Returns true and the corner score (sum of absolute
/// threshold exceedances) when >= 9 contiguous circle pixels are all brighter
/// or all darker than the center by more than the threshold.
inline bool fast9_test(const ImageU8& img, int x, int y, int threshold,
                       bool cyclic, double* score) {
  const int c = sample(img, x, y, cyclic);
  const auto& circle = fast_circle();
  std::array<int, 16> diff;
  for (int i = 0; i < 16; ++i)
    diff[i] = static_cast<int>(sample(img, x + circle[i][0], y + circle[i][1],
                                      cyclic)) - c;

  auto run_ok = [&](int sign) {
    int run = 0;
    for (int i = 0; i < 32; ++i) {
      if (sign * diff[i % 16] > threshold) {
        if (++run >= 9) return true;
      } else {
        run = 0;
      }
    }
    return false;
  };

  const bool bright = run_ok(+1);
  const bool dark = !bright && run_ok(-1);
  if (!bright && !dark) return false;

  if (score) {
    double s_bright = 0, s_dark = 0;
    for (int i = 0; i < 16; ++i) {
      if (diff[i] > threshold) s_bright += diff[i] - threshold;
      if (-diff[i] > threshold) s_dark += -diff[i] - threshold;
    }
    *score = std::max(s_bright, s_dark);
  }
  return true;
}

/// ORB-style intensity-centroid orientation over a circular patch.
inline double orientation(const ImageU8& img, int x, int y, bool cyclic) {
  static const auto umax = [] {
    std::array<int, kPatchRadius + 1> u{};
    for (int v = 0; v <= kPatchRadius; ++v)
      u[static_cast<size_t>(v)] = static_cast<int>(std::floor(
          std::sqrt(static_cast<double>(kPatchRadius * kPatchRadius - v * v))));
    return u;
  }();
  double m01 = 0, m10 = 0;
  for (int dv = -kPatchRadius; dv <= kPatchRadius; ++dv) {
    const int du_max = umax[static_cast<size_t>(std::abs(dv))];
    for (int du = -du_max; du <= du_max; ++du) {
      const double val = sample(img, x + du, y + dv, cyclic);
      m10 += du * val;
      m01 += dv * val;
    }
  }
  return std::atan2(m01, m10);
}

struct BriefPattern {
  std::array<std::array<float, 4>, 256> pairs;  // x1, y1, x2, y2
};

/// Deterministic descriptor sampling pattern: Gaussian point pairs clipped to
/// the sample disk, generated with an explicit xorshift (no stdlib
/// distributions, so the pattern is identical across toolchains).
inline const BriefPattern& brief_pattern() {
  static const BriefPattern pattern = [] {
    BriefPattern p;
    uint64_t state = 0x9e3779b97f4a7c15ull;
    auto next_u64 = [&state] {
      state ^= state << 13;
      state ^= state >> 7;
      state ^= state << 17;
      return state;
    };
    auto next_unit = [&] {  // uniform in (0, 1)
      return (static_cast<double>(next_u64() >> 11) + 0.5) / 9007199254740992.0;
    };
    const double sigma = 31.0 / 5.0;
    auto next_coord = [&] {
      for (;;) {
        const double a = next_unit(), b = next_unit();
        const double g = std::sqrt(-2.0 * std::log(a)) * std::cos(2 * kPi * b);
        const double c = g * sigma;
        if (std::abs(c) <= kBriefRadius / std::sqrt(2.0)) return c;
      }
    };
    for (auto& pair : p.pairs)
      pair = {static_cast<float>(next_coord()), static_cast<float>(next_coord()),
              static_cast<float>(next_coord()), static_cast<float>(next_coord())};
    return p;
  }();
  return pattern;
}

inline Descriptor describe(const ImageU8& blurred, double x, double y,
                           double angle, bool cyclic) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  const auto& pattern = brief_pattern();
  Descriptor d;
  for (int i = 0; i < 256; ++i) {
    const auto& pr = pattern.pairs[static_cast<size_t>(i)];
    const double x1 = x + ca * pr[0] - sa * pr[1];
    const double y1 = y + sa * pr[0] + ca * pr[1];
    const double x2 = x + ca * pr[2] - sa * pr[3];
    const double y2 = y + sa * pr[2] + ca * pr[3];
    const int xi1 = static_cast<int>(std::lround(x1));
    const int yi1 = static_cast<int>(std::lround(y1));
    const int xi2 = static_cast<int>(std::lround(x2));
    const int yi2 = static_cast<int>(std::lround(y2));
    if (sample(blurred, xi1, yi1, cyclic) < sample(blurred, xi2, yi2, cyclic))
      d.bits[static_cast<size_t>(i / 64)] |= 1ull << (i % 64);
  }
  return d;
}

}  // namespace detail

/// Detects and describes features. The image must be an equirectangular
/// panorama (W = 2H) when config.cyclic is set.
inline std::pair<std::vector<KeyPoint>, std::vector<Descriptor>>
detect_and_describe(const ImageU8& image, const FeatureConfig& cfg) {
  using namespace detail;
  const int W = image.width(), H = image.height();
  if (cfg.cyclic && W != 2 * H)
    throw std::invalid_argument("detect_and_describe: panorama must have W = 2H");
  if (H < 3 * kEdgeMargin || W < 3 * kEdgeMargin)
    throw std::invalid_argument("detect_and_describe: image too small");

  struct Candidate {
    KeyPoint kp;
    Descriptor desc;
  };
  std::vector<Candidate> candidates;

  const int band = cfg.cyclic
                       ? static_cast<int>(std::ceil(cfg.polar_band * H))
                       : 0;

  ImageU8 level = image;
  for (int lvl = 0; lvl < cfg.n_levels; ++lvl) {
    const double scale = std::pow(cfg.scale_factor, lvl);
    if (lvl > 0) {
      // Successive level-to-level resize: each step shrinks by at most the
      // scale factor, which bilinear handles without aliasing.
      const int w = std::max(1, static_cast<int>(std::lround(W / scale)));
      const int h = std::max(1, static_cast<int>(std::lround(H / scale)));
      if (h < 3 * kEdgeMargin || w < 3 * kEdgeMargin) break;
      level = resize(level, w, h, cfg.cyclic);
    }
    const int w = level.width(), h = level.height();
    const ImageU8 blurred = box_blur5(level, cfg.cyclic);

    // Keep the full patch inside the clamped vertical range; honor the polar
    // exclusion band in level-0 coordinates.
    const double lvl_sy = static_cast<double>(H) / h;
    int y_min = kEdgeMargin, y_max = h - 1 - kEdgeMargin;
    const int x_min = cfg.cyclic ? 0 : kEdgeMargin;
    const int x_max = cfg.cyclic ? w - 1 : w - 1 - kEdgeMargin;

    ImageF64 scores(w, h, -1.0);
    for (int y = y_min; y <= y_max; ++y) {
      const double v0 = (y + 0.5) * lvl_sy - 0.5;
      if (v0 < band || v0 >= H - band) continue;
      for (int x = x_min; x <= x_max; ++x) {
        double s = 0;
        if (fast9_test(level, x, y, cfg.fast_threshold, cfg.cyclic, &s))
          scores.at(x, y) = s;
      }
    }

    for (int y = y_min; y <= y_max; ++y) {
      for (int x = x_min; x <= x_max; ++x) {
        const double s = scores.at(x, y);
        if (s < 0) continue;
        bool is_max = true;
        for (int dy = -1; dy <= 1 && is_max; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const int nx = cfg.cyclic ? wrap_x(x + dx, w)
                                      : std::clamp(x + dx, 0, w - 1);
            const int ny = std::clamp(y + dy, 0, h - 1);
            const double ns = scores.at(nx, ny);
            // Ties broken toward the lexicographically smaller pixel so that
            // exactly one of a flat pair survives.
            if (ns > s || (ns == s && (ny < y || (ny == y && nx < x)))) {
              is_max = false;
              break;
            }
          }
        if (!is_max) continue;

        // Sub-pixel refinement: 1D parabola fit on the score in u and v.
        auto refine = [&](double sm, double s0, double sp) {
          const double denom = sm - 2 * s0 + sp;
          if (denom >= 0) return 0.0;
          return std::clamp(0.5 * (sm - sp) / denom, -0.5, 0.5);
        };
        const double sxm = std::max(
            scores.at(cfg.cyclic ? wrap_x(x - 1, w) : std::max(x - 1, 0), y),
            0.0);
        const double sxp = std::max(
            scores.at(cfg.cyclic ? wrap_x(x + 1, w) : std::min(x + 1, w - 1), y),
            0.0);
        const double sym = std::max(scores.at(x, std::max(y - 1, 0)), 0.0);
        const double syp = std::max(scores.at(x, std::min(y + 1, h - 1)), 0.0);
        const double du = refine(sxm, s, sxp);
        const double dv = refine(sym, s, syp);

        Candidate c;
        c.kp.octave = lvl;
        c.kp.response = s;
        c.kp.angle = orientation(level, x, y, cfg.cyclic);
        c.kp.u = (x + du + 0.5) * (static_cast<double>(W) / w) - 0.5;
        c.kp.v = (y + dv + 0.5) * lvl_sy - 0.5;
        if (cfg.cyclic) c.kp.u = std::fmod(c.kp.u + W, static_cast<double>(W));
        c.desc = describe(blurred, x, y, c.kp.angle, cfg.cyclic);
        candidates.push_back(c);
      }
    }
  }

  // Grid bucketing at level-0 coordinates: each cell contributes at most its
  // quota, best responses first.
  const int cells = cfg.grid_cols * cfg.grid_rows;
  const int quota =
      std::max(1, static_cast<int>((cfg.n_features + cells - 1) / cells));
  const double cell_w = static_cast<double>(W) / cfg.grid_cols;
  const double cell_h = static_cast<double>(H) / cfg.grid_rows;

  std::vector<std::vector<int>> buckets(static_cast<size_t>(cells));
  for (int i = 0; i < static_cast<int>(candidates.size()); ++i) {
    const auto& kp = candidates[static_cast<size_t>(i)].kp;
    int cxi = std::min(static_cast<int>(kp.u / cell_w), cfg.grid_cols - 1);
    int cyi = std::min(static_cast<int>(kp.v / cell_h), cfg.grid_rows - 1);
    cxi = std::max(cxi, 0);
    cyi = std::max(cyi, 0);
    buckets[static_cast<size_t>(cyi * cfg.grid_cols + cxi)].push_back(i);
  }

  std::vector<int> kept;
  for (auto& bucket : buckets) {
    std::sort(bucket.begin(), bucket.end(), [&](int a, int b) {
      const auto& ka = candidates[static_cast<size_t>(a)].kp;
      const auto& kb = candidates[static_cast<size_t>(b)].kp;
      if (ka.response != kb.response) return ka.response > kb.response;
      if (ka.octave != kb.octave) return ka.octave < kb.octave;
      if (ka.v != kb.v) return ka.v < kb.v;
      return ka.u < kb.u;
    });
    for (size_t i = 0; i < bucket.size() && i < static_cast<size_t>(quota); ++i)
      kept.push_back(bucket[i]);
  }

  std::sort(kept.begin(), kept.end(), [&](int a, int b) {
    const auto& ka = candidates[static_cast<size_t>(a)].kp;
    const auto& kb = candidates[static_cast<size_t>(b)].kp;
    if (ka.octave != kb.octave) return ka.octave < kb.octave;
    if (ka.v != kb.v) return ka.v < kb.v;
    return ka.u < kb.u;
  });

  std::vector<KeyPoint> keypoints;
  std::vector<Descriptor> descriptors;
  keypoints.reserve(kept.size());
  descriptors.reserve(kept.size());
  for (int i : kept) {
    keypoints.push_back(candidates[static_cast<size_t>(i)].kp);
    descriptors.push_back(candidates[static_cast<size_t>(i)].desc);
  }
  return {std::move(keypoints), std::move(descriptors)};
}

/// Ratio-test + mutual-consistency descriptor matching.
inline std::vector<Match> match_descriptors(
    const std::vector<Descriptor>& desc_a, const std::vector<Descriptor>& desc_b,
    double ratio, int max_hamming = 64) {
  if (!(ratio > 0 && ratio <= 1))
    throw std::invalid_argument("match_descriptors: ratio must be in (0, 1]");
  std::vector<Match> matches;
  if (desc_a.empty() || desc_b.empty()) return matches;

  const int na = static_cast<int>(desc_a.size());
  const int nb = static_cast<int>(desc_b.size());
  std::vector<int> best_b_for_a(static_cast<size_t>(na), -1);
  std::vector<int> best_d(static_cast<size_t>(na),
                          std::numeric_limits<int>::max());
  std::vector<int> second_d(static_cast<size_t>(na),
                            std::numeric_limits<int>::max());
  std::vector<int> best_a_for_b(static_cast<size_t>(nb), -1);
  std::vector<int> best_d_b(static_cast<size_t>(nb),
                            std::numeric_limits<int>::max());

  for (int a = 0; a < na; ++a) {
    for (int b = 0; b < nb; ++b) {
      const int d = desc_a[static_cast<size_t>(a)].distance(
          desc_b[static_cast<size_t>(b)]);
      if (d < best_d[static_cast<size_t>(a)]) {
        second_d[static_cast<size_t>(a)] = best_d[static_cast<size_t>(a)];
        best_d[static_cast<size_t>(a)] = d;
        best_b_for_a[static_cast<size_t>(a)] = b;
      } else if (d < second_d[static_cast<size_t>(a)]) {
        second_d[static_cast<size_t>(a)] = d;
      }
      if (d < best_d_b[static_cast<size_t>(b)]) {
        best_d_b[static_cast<size_t>(b)] = d;
        best_a_for_b[static_cast<size_t>(b)] = a;
      }
    }
  }

  for (int a = 0; a < na; ++a) {
    const int b = best_b_for_a[static_cast<size_t>(a)];
    if (b < 0) continue;
    const int d1 = best_d[static_cast<size_t>(a)];
    const int d2 = second_d[static_cast<size_t>(a)];
    if (d1 > max_hamming) continue;
    if (d2 != std::numeric_limits<int>::max() && !(d1 < ratio * d2)) continue;
    if (best_a_for_b[static_cast<size_t>(b)] != a) continue;
    matches.push_back({a, b, d1});
  }
  return matches;
}

}  // namespace panoslam
