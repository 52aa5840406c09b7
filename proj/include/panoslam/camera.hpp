#pragma once

// Equirectangular spherical camera model.
//
// Conventions: the image center looks along -X, the top row is the +Z pole.
// A pixel (u, v) maps linearly to longitude/latitude; u is periodic with the
// image width (the left/right seam is the +/-pi meridian), v is bounded.
// "Depth" throughout is range: Euclidean distance from the camera center,
// not a z-coordinate.

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Core>

namespace panoslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Wraps x into [0, period).
inline double wrap_positive(double x, double period) {
  double r = std::fmod(x, period);
  if (r < 0) r += period;
  // fmod can return exactly `period` after the correction when x is a tiny
  // negative number; fold that back to 0.
  if (r >= period) r = 0;
  return r;
}

struct Intrinsics {
  int width = 0;   // W, pixels
  int height = 0;  // H, pixels
  double fx = 0;   // W / (2*pi), pixels per radian
  double fy = 0;   // -H / pi, pixels per radian (negative: v grows downward)
  double cx = 0;   // W / 2
  double cy = 0;   // H / 2
};

struct SphericalCoord {
  double lon = 0;  // radians; canonical range (-pi, pi], 0 at the exact poles
  double lat = 0;  // radians in [-pi/2, pi/2]
};

struct PixelCoord {
  double u = 0;  // wraps modulo W
  double v = 0;  // [0, H], never wrapped
};

/// Unit viewing direction; see bearing_from_pixel.
using Bearing = Vec3;

inline Intrinsics make_intrinsics(int width, int height) {
  if (width <= 0 || height < 2)
    throw std::invalid_argument("make_intrinsics: non-positive image size");
  if (width != 2 * height || width % 2 != 0 || height % 2 != 0)
    throw std::invalid_argument(
        "make_intrinsics: equirectangular image requires even W = 2*H");
  Intrinsics k;
  k.width = width;
  k.height = height;
  k.fx = width / (2.0 * kPi);
  k.fy = -height / kPi;
  k.cx = width / 2.0;
  k.cy = height / 2.0;
  return k;
}

/// Longitude/latitude of a camera-frame point. Quadrant-correct: lon is the
/// two-argument arctangent of (Y, -X) so that the image center (-X axis) is
/// lon = 0. At the exact poles lon is undefined and set to 0.
inline SphericalCoord lonlat_of_point(const Vec3& p) {
  const double r = p.norm();
  if (r <= 0) throw std::invalid_argument("lonlat_of_point: zero-norm point");
  SphericalCoord s;
  const double sz = std::clamp(p.z() / r, -1.0, 1.0);
  s.lat = std::asin(sz);
  if (p.x() == 0 && p.y() == 0)
    s.lon = 0;  // pole convention
  else
    s.lon = std::atan2(p.y(), -p.x());
  return s;
}

inline PixelCoord project(const Intrinsics& k, const Vec3& p) {
  const SphericalCoord s = lonlat_of_point(p);
  PixelCoord px;
  px.u = wrap_positive(k.cx + k.fx * s.lon, static_cast<double>(k.width));
  px.v = k.cy + k.fy * s.lat;
  return px;
}

inline SphericalCoord pixel_to_lonlat(const Intrinsics& k, const PixelCoord& px) {
  SphericalCoord s;
  s.lon = (px.u - k.cx) / k.fx;
  s.lat = (px.v - k.cy) / k.fy;
  return s;
}

inline Bearing bearing_from_lonlat(const SphericalCoord& s) {
  const double cl = std::cos(s.lat);
  return {-cl * std::cos(s.lon), cl * std::sin(s.lon), std::sin(s.lat)};
}

inline Bearing bearing_from_pixel(const Intrinsics& k, const PixelCoord& px) {
  return bearing_from_lonlat(pixel_to_lonlat(k, px));
}

/// Inverse projection: d is range in meters (distance from camera center).
inline Vec3 unproject(const Intrinsics& k, const PixelCoord& px, double d) {
  if (!(d > 0)) throw std::invalid_argument("unproject: non-positive depth");
  return d * bearing_from_pixel(k, px);
}

}  // namespace panoslam
