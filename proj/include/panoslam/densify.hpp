#pragma once

// Sparse-to-dense depth completion as deterministic multi-scale normalized
// convolution: confidence-weighted filtering propagates sparse samples
// outward while carrying a per-pixel confidence, coarser pyramid levels fill
// the large gaps, and an RGB-guided cross-bilateral pass sharpens the result
// along color edges. Every stage outputs convex combinations of the input
// values, so the output range never leaves the input range and confidences
// stay in [0, 1]. Horizontal indexing is cyclic (equirectangular seam);
// vertical indexing clamps at the pole rows.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "panoslam/config.hpp"
#include "panoslam/image.hpp"

namespace panoslam {

/// Odd-sized square array of non-negative applicability weights.
struct Kernel {
  int size = 0;  // odd
  std::vector<double> weights;

  double at(int dx, int dy) const {
    const int r = size / 2;
    return weights[static_cast<size_t>((dy + r) * size + (dx + r))];
  }
};

inline Kernel make_gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0)
    throw std::invalid_argument("make_gaussian_kernel: size must be odd");
  Kernel k;
  k.size = size;
  k.weights.resize(static_cast<size_t>(size) * size);
  const int r = size / 2;
  double sum = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      k.weights[static_cast<size_t>((dy + r) * size + (dx + r))] = w;
      sum += w;
    }
  for (auto& w : k.weights) w /= sum;
  return k;
}

struct DensifyConfig {
  int levels = 4;
  int kernel_size = 5;
  double kernel_sigma = 1.0;
  double c_min = 1e-3;
  int max_iters = 16;
  double gamma = 0.5;  // confidence damping per upsampled level
  double refine_sigma_s = 3.0;
  double refine_sigma_r = 0.1;  // RGB in [0, 1]
  int refine_passes = 2;

  static DensifyConfig from(const Config& c) {
    DensifyConfig d;
    d.levels = c.get_int("densify.levels");
    d.kernel_size = c.get_int("densify.kernel_size");
    d.kernel_sigma = c.get_double("densify.kernel_sigma");
    d.c_min = c.get_double("densify.c_min");
    d.max_iters = c.get_int("densify.max_iters");
    d.gamma = c.get_double("densify.gamma");
    d.refine_sigma_s = c.get_double("densify.refine_sigma_s");
    d.refine_sigma_r = c.get_double("densify.refine_sigma_r");
    d.refine_passes = c.get_int("densify.refine_passes");
    return d;
  }
};

/// One normalized-convolution step:
///   out_value(p) = sum_q k(q) c(p+q) d(p+q) / sum_q k(q) c(p+q)
///   out_conf(p)  = sum_q k(q) c(p+q) / sum_q k(q)
/// Pixels whose confidence-weighted support is exactly zero get value 0 and
/// confidence 0 (flagged invalid downstream).
inline std::pair<ImageF64, ConfidenceMap> nconv(const ImageF64& values,
                                                const ConfidenceMap& conf,
                                                const Kernel& kernel) {
  if (values.width() != conf.width() || values.height() != conf.height())
    throw std::invalid_argument("nconv: dimension mismatch");
  const int w = values.width(), h = values.height();
  const int r = kernel.size / 2;
  double kernel_sum = 0;
  for (double kw : kernel.weights) kernel_sum += kw;

  ImageF64 out_v(w, h, 0.0);
  ConfidenceMap out_c(w, h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double wc = 0, wcv = 0;
      for (int dy = -r; dy <= r; ++dy) {
        int yy = y + dy;
        if (yy < 0) yy = 0;
        if (yy >= h) yy = h - 1;
        for (int dx = -r; dx <= r; ++dx) {
          int xx = (x + dx) % w;
          if (xx < 0) xx += w;
          const double kcw = kernel.at(dx, dy) * conf.at(xx, yy);
          wc += kcw;
          wcv += kcw * values.at(xx, yy);
        }
      }
      if (wc > 0) {
        out_v.at(x, y) = wcv / wc;
        out_c.at(x, y) = std::min(wc / kernel_sum, 1.0);
      }
    }
  }
  return {std::move(out_v), std::move(out_c)};
}

namespace detail {

inline std::pair<ImageF64, ConfidenceMap> decimate2(const ImageF64& v,
                                                    const ConfidenceMap& c) {
  const int w = std::max(1, v.width() / 2), h = std::max(1, v.height() / 2);
  ImageF64 ov(w, h);
  ConfidenceMap oc(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      ov.at(x, y) = v.at(2 * x, 2 * y);
      oc.at(x, y) = c.at(2 * x, 2 * y);
    }
  return {std::move(ov), std::move(oc)};
}

}  // namespace detail

struct DenseResult {
  DepthMap depth;
  ConfidenceMap confidence;
};

/// Multi-scale densification. Builds a pyramid by nconv + 2x decimation,
/// iterates nconv at the coarsest level until the minimum confidence clears
/// c_min (or max_iters), then merges coarse-to-fine, per pixel keeping the
/// candidate with higher confidence (upsampled confidence damped by gamma).
/// Pixels no scale ever reached fall back to the global confidence-weighted
/// mean of the input samples so the output is fully valid.
inline DenseResult densify_multiscale(const DepthMap& sparse,
                                      const DensifyConfig& cfg = {}) {
  if (sparse.valid_count() == 0)
    throw std::invalid_argument("densify_multiscale: no valid samples");

  const Kernel kernel = make_gaussian_kernel(cfg.kernel_size, cfg.kernel_sigma);
  const int W = sparse.width(), H = sparse.height();

  ImageF64 v0(W, H, 0.0);
  ConfidenceMap c0(W, H, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (sparse.valid.at(x, y)) {
        v0.at(x, y) = sparse.values.at(x, y);
        c0.at(x, y) = 1.0;
      }

  // Global confidence-weighted mean, the last-resort fill value.
  double mean_num = 0, mean_den = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      mean_num += c0.at(x, y) * v0.at(x, y);
      mean_den += c0.at(x, y);
    }
  const double global_mean = mean_num / mean_den;

  std::vector<ImageF64> lv;
  std::vector<ConfidenceMap> lc;
  lv.push_back(std::move(v0));
  lc.push_back(std::move(c0));
  for (int l = 1; l < cfg.levels; ++l) {
    if (lv.back().width() < 2 || lv.back().height() < 2) break;
    auto [nv, nc] = nconv(lv.back(), lc.back(), kernel);
    auto [dv, dc] = detail::decimate2(nv, nc);
    lv.push_back(std::move(dv));
    lc.push_back(std::move(dc));
  }
  const int levels = static_cast<int>(lv.size());

  // Diffuse at the coarsest level until confident everywhere (or budget out).
  ImageF64 merged_v = lv[static_cast<size_t>(levels - 1)];
  ConfidenceMap merged_c = lc[static_cast<size_t>(levels - 1)];
  for (int it = 0; it < cfg.max_iters; ++it) {
    double min_c = 1.0;
    for (size_t i = 0; i < merged_c.size(); ++i)
      min_c = std::min(min_c, merged_c.data()[i]);
    if (min_c > cfg.c_min) break;
    auto [nv, nc] = nconv(merged_v, merged_c, kernel);
    merged_v = std::move(nv);
    merged_c = std::move(nc);
  }

  for (int l = levels - 2; l >= 0; --l) {
    // Propagate at this level too (a short budget), so data keeps its native
    // resolution wherever it can reach and the upsampled coarse values only
    // fill what remains.
    auto [cand_v, cand_c] = nconv(lv[static_cast<size_t>(l)],
                                  lc[static_cast<size_t>(l)], kernel);
    const int fine_budget = std::min(cfg.max_iters, 1 + (levels - 1 - l));
    for (int it = 1; it < fine_budget; ++it) {
      double min_c = 1.0;
      for (size_t i = 0; i < cand_c.size(); ++i)
        min_c = std::min(min_c, cand_c.data()[i]);
      if (min_c > cfg.c_min) break;
      auto [nv, nc] = nconv(cand_v, cand_c, kernel);
      cand_v = std::move(nv);
      cand_c = std::move(nc);
    }
    const int w = cand_v.width(), h = cand_v.height();
    ImageF64 out_v(w, h);
    ConfidenceMap out_c(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int cx = std::min(x / 2, merged_v.width() - 1);
        const int cy = std::min(y / 2, merged_v.height() - 1);
        const double up_c = cfg.gamma * merged_c.at(cx, cy);
        if (cand_c.at(x, y) >= up_c) {
          out_v.at(x, y) = cand_v.at(x, y);
          out_c.at(x, y) = cand_c.at(x, y);
        } else {
          out_v.at(x, y) = merged_v.at(cx, cy);
          out_c.at(x, y) = up_c;
        }
      }
    merged_v = std::move(out_v);
    merged_c = std::move(out_c);
  }

  DenseResult res;
  res.depth = DepthMap(W, H);
  res.confidence = ConfidenceMap(W, H, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double value = merged_v.at(x, y);
      double c = merged_c.at(x, y);
      if (c <= 0) {
        value = global_mean;
        c = 1e-12;
      }
      res.depth.set(x, y, value);
      res.confidence.at(x, y) = c;
    }
  return res;
}

/// RGB-guided cross-bilateral refinement. A fixed number of passes replaces
/// each value by a spatial/color/confidence-weighted mean; confidences are
/// untouched. Zero passes is the identity.
inline DepthMap guided_refine(const DepthMap& dense, const ConfidenceMap& conf,
                              const ImageRgb& rgb, const DensifyConfig& cfg = {}) {
  const int w = dense.width(), h = dense.height();
  if (conf.width() != w || conf.height() != h || rgb.width() != w ||
      rgb.height() != h)
    throw std::invalid_argument("guided_refine: dimension mismatch");

  const int radius = std::max(1, static_cast<int>(std::ceil(2 * cfg.refine_sigma_s)));
  std::vector<double> spatial(static_cast<size_t>(2 * radius + 1) *
                              (2 * radius + 1));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      spatial[static_cast<size_t>((dy + radius) * (2 * radius + 1) + dx +
                                  radius)] =
          std::exp(-(dx * dx + dy * dy) /
                   (2.0 * cfg.refine_sigma_s * cfg.refine_sigma_s));

  // Color weights looked up from a table over squared RGB distance; the
  // maximum squared distance for [0,1]^3 colors is 3.
  constexpr int kLutSize = 4096;
  std::vector<double> lut(kLutSize);
  const double inv_2sr2 = 1.0 / (2.0 * cfg.refine_sigma_r * cfg.refine_sigma_r);
  for (int i = 0; i < kLutSize; ++i) {
    const double d2 = 3.0 * i / (kLutSize - 1);
    lut[static_cast<size_t>(i)] = std::exp(-d2 * inv_2sr2);
  }
  auto color_weight = [&](const Color3u8& a, const Color3u8& b) {
    const double dr = (a.r - b.r) / 255.0;
    const double dg = (a.g - b.g) / 255.0;
    const double db = (a.b - b.b) / 255.0;
    const double d2 = dr * dr + dg * dg + db * db;
    int idx = static_cast<int>(d2 / 3.0 * (kLutSize - 1) + 0.5);
    idx = std::min(idx, kLutSize - 1);
    return lut[static_cast<size_t>(idx)];
  };

  DepthMap cur = dense;
  for (int pass = 0; pass < cfg.refine_passes; ++pass) {
    DepthMap next = cur;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Color3u8 c_p = rgb.at(x, y);
        double wsum = 0, vsum = 0;
        for (int dy = -radius; dy <= radius; ++dy) {
          int yy = y + dy;
          if (yy < 0) yy = 0;
          if (yy >= h) yy = h - 1;
          for (int dx = -radius; dx <= radius; ++dx) {
            int xx = (x + dx) % w;
            if (xx < 0) xx += w;
            if (!cur.valid.at(xx, yy)) continue;
            const double wq =
                spatial[static_cast<size_t>((dy + radius) * (2 * radius + 1) +
                                            dx + radius)] *
                color_weight(c_p, rgb.at(xx, yy)) * conf.at(xx, yy);
            wsum += wq;
            vsum += wq * cur.values.at(xx, yy);
          }
        }
        if (wsum > 0) next.values.at(x, y) = vsum / wsum;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace panoslam
