#pragma once

// Sparse depth generation: project map points into a frame through the
// panoramic model and record their ranges at the nearest integer pixel.

#include <cmath>
#include <vector>

#include "panoslam/camera.hpp"
#include "panoslam/image.hpp"
#include "panoslam/se3.hpp"

namespace panoslam {

/// Transforms a world point into camera coordinates given the camera-in-world
/// pose (R_wi, t_wi): P_i = R_wi^-1 * P_w - R_wi^-1 * t_wi. Note the
/// inversion: the camera-in-world pose is the inverse of the world-to-camera
/// convention used elsewhere in this library.
inline Vec3 world_to_camera(const Vec3& p_w, const Pose& camera_in_world) {
  return camera_in_world.R.transpose() * (p_w - camera_in_world.t);
}

/// One world point with the id used for deterministic tie-breaking.
struct DepthSample {
  int64_t id = 0;
  Vec3 position_w;
};

/// Rasterizes map-point ranges into a sparse depth map. Pixels whose rounded
/// v falls outside [0, H-1] are discarded (u wraps); collisions keep the
/// smaller range, ties the smaller id.
inline DepthMap render_sparse_depth(const std::vector<DepthSample>& points,
                                    const Pose& t_cw, const Intrinsics& intr) {
  DepthMap depth(intr.width, intr.height);
  Image<int64_t> owner(intr.width, intr.height, -1);
  for (const auto& pt : points) {
    const Vec3 pc = t_cw.act(pt.position_w);
    const double range = pc.norm();
    if (!(range > 0) || !std::isfinite(range)) continue;
    const PixelCoord px = project(intr, pc);
    int u = static_cast<int>(std::lround(px.u));
    const int v = static_cast<int>(std::lround(px.v));
    if (v < 0 || v >= intr.height) continue;
    u %= intr.width;
    if (u < 0) u += intr.width;
    const double existing = depth.values.at(u, v);
    const int64_t prev = owner.at(u, v);
    if (prev >= 0 &&
        (existing < range || (existing == range && prev < pt.id)))
      continue;
    depth.set(u, v, range);
    owner.at(u, v) = pt.id;
  }
  return depth;
}

}  // namespace panoslam
