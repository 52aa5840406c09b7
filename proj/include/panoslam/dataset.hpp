#pragma once

// Synthetic dataset construction: a desk-scale ray-cast scene generator
// (spheres, boxes, a checkerboard ground plane, value-noise surface texture),
// cubemap rendering, cubemap-to-equirectangular stitching, and the on-disk
// dataset layout (rgb/*.ppm, depth/*.pfm, gt_traj.txt, calib.txt, scene.txt).
// Everything is a pure function of the scene spec and seed: same seed, same
// bytes.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "panoslam/camera.hpp"
#include "panoslam/image.hpp"
#include "panoslam/io.hpp"
#include "panoslam/se3.hpp"

namespace panoslam {

struct SphereSpec {
  Vec3 center;
  double radius = 1;
  Color3u8 albedo;
};

struct BoxSpec {
  Vec3 min, max;
  Color3u8 albedo;
};

struct PlaneSpec {
  double height = 0;  // z = height
  double cell = 0.5;  // checker cell size, meters
  Color3u8 albedo1, albedo2;
};

struct CircleTrajectorySpec {
  double radius = 1.5;
  double height = 1.5;  // camera z
  int frames = 200;
  double step_deg = 1.8;  // yaw step per frame
};

struct SceneSpec {
  std::vector<SphereSpec> spheres;
  std::vector<BoxSpec> boxes;
  std::vector<PlaneSpec> planes;
  CircleTrajectorySpec trajectory;
  uint64_t seed = 42;
  double noise_cell = 0.6;  // base texture cell, meters
  double noise_amp = 0.4;   // modulation amplitude, fraction of albedo

  bool has_primitive() const {
    return !spheres.empty() || !boxes.empty() || !planes.empty();
  }
};

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline double lattice_value(int64_t x, int64_t y, int64_t z, uint64_t seed) {
  uint64_t h = seed;
  h = splitmix64(h ^ static_cast<uint64_t>(x) * 0x8da6b343ull);
  h = splitmix64(h ^ static_cast<uint64_t>(y) * 0xd8163841ull);
  h = splitmix64(h ^ static_cast<uint64_t>(z) * 0xcb1ab31full);
  return static_cast<double>(h >> 11) * 0x1p-53;
}

inline double smoothstep(double t) { return t * t * (3 - 2 * t); }

/// Trilinear value noise in [0, 1], smooth at the pixel scale of the renders.
inline double value_noise(const Vec3& p, double cell, uint64_t seed) {
  const double x = p.x() / cell, y = p.y() / cell, z = p.z() / cell;
  const auto fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const auto ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy),
             iz = static_cast<int64_t>(fz);
  const double tx = smoothstep(x - fx), ty = smoothstep(y - fy),
               tz = smoothstep(z - fz);
  double c[2][2][2];
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        c[dz][dy][dx] = lattice_value(ix + dx, iy + dy, iz + dz, seed);
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  const double z0 = lerp(lerp(c[0][0][0], c[0][0][1], tx),
                         lerp(c[0][1][0], c[0][1][1], tx), ty);
  const double z1 = lerp(lerp(c[1][0][0], c[1][0][1], tx),
                         lerp(c[1][1][0], c[1][1][1], tx), ty);
  return lerp(z0, z1, tz);
}

inline double surface_noise(const Vec3& p, const SceneSpec& scene) {
  const double c = scene.noise_cell;
  return 0.5 * value_noise(p, c, scene.seed) +
         0.3 * value_noise(p, c * 0.5, scene.seed ^ 0x6a09e667f3bcc909ull) +
         0.2 * value_noise(p, c * 0.25, scene.seed ^ 0xbb67ae8584caa73bull);
}

inline Color3u8 modulate(const Color3u8& albedo, double noise, double amp) {
  const double m = 1.0 + amp * (2.0 * noise - 1.0);
  auto ch = [&](uint8_t v) {
    return static_cast<uint8_t>(std::clamp(v * m + 0.5, 0.0, 255.0));
  };
  return {ch(albedo.r), ch(albedo.g), ch(albedo.b)};
}

inline bool intersect_sphere(const Vec3& o, const Vec3& d, const Vec3& c,
                             double r, double* t) {
  const Vec3 oc = o - c;
  const double b = oc.dot(d);
  const double disc = b * b - (oc.squaredNorm() - r * r);
  if (disc < 0) return false;
  const double s = std::sqrt(disc);
  double tt = -b - s;
  if (tt <= 1e-9) tt = -b + s;
  if (tt <= 1e-9) return false;
  *t = tt;
  return true;
}

inline bool intersect_box(const Vec3& o, const Vec3& d, const Vec3& bmin,
                          const Vec3& bmax, double* t) {
  double t0 = 0, t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (d(i) == 0) {
      if (o(i) < bmin(i) || o(i) > bmax(i)) return false;
      continue;
    }
    double ta = (bmin(i) - o(i)) / d(i);
    double tb = (bmax(i) - o(i)) / d(i);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  if (t0 <= 1e-9) t0 = t1;
  if (t0 <= 1e-9) return false;
  *t = t0;
  return true;
}

inline bool intersect_plane_z(const Vec3& o, const Vec3& d, double height,
                              double* t) {
  if (d.z() == 0) return false;
  const double tt = (height - o.z()) / d.z();
  if (tt <= 1e-9) return false;
  *t = tt;
  return true;
}

}  // namespace detail

/// Nearest-hit shade of a world-space ray. Returns false for sky (no hit).
inline bool raycast(const SceneSpec& scene, const Vec3& origin, const Vec3& dir,
                    double* range, Color3u8* color) {
  double best_t = std::numeric_limits<double>::infinity();
  Color3u8 albedo{};
  bool hit = false;

  for (const auto& s : scene.spheres) {
    double t;
    if (detail::intersect_sphere(origin, dir, s.center, s.radius, &t) &&
        t < best_t) {
      best_t = t;
      albedo = s.albedo;
      hit = true;
    }
  }
  for (const auto& b : scene.boxes) {
    double t;
    if (detail::intersect_box(origin, dir, b.min, b.max, &t) && t < best_t) {
      best_t = t;
      albedo = b.albedo;
      hit = true;
    }
  }
  for (const auto& p : scene.planes) {
    double t;
    if (detail::intersect_plane_z(origin, dir, p.height, &t) && t < best_t) {
      const Vec3 q = origin + t * dir;
      const auto cx = static_cast<int64_t>(std::floor(q.x() / p.cell));
      const auto cy = static_cast<int64_t>(std::floor(q.y() / p.cell));
      best_t = t;
      albedo = ((cx + cy) & 1) == 0 ? p.albedo1 : p.albedo2;
      hit = true;
    }
  }

  if (!hit) return false;
  *range = best_t;
  if (color) {
    const Vec3 q = origin + best_t * dir;
    *color = detail::modulate(albedo, detail::surface_noise(q, scene),
                              scene.noise_amp);
  }
  return true;
}

/// Renders an equirectangular panorama plus ground-truth range. pose_wc is
/// camera-in-world. Sky pixels are black with invalid depth.
inline std::pair<ImageRgb, DepthMap> raycast_scene(const SceneSpec& scene,
                                                   const Pose& pose_wc,
                                                   const Intrinsics& intr) {
  ImageRgb rgb(intr.width, intr.height);
  DepthMap depth(intr.width, intr.height);
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const Bearing b = bearing_from_pixel(
          intr, {static_cast<double>(x), static_cast<double>(y)});
      const Vec3 dir = pose_wc.R * b;
      double range;
      Color3u8 color;
      if (raycast(scene, pose_wc.t, dir, &range, &color)) {
        rgb.at(x, y) = color;
        depth.set(x, y, range);
      }
    }
  }
  return {std::move(rgb), std::move(depth)};
}

// ---------------------------------------------------------------------------
// Cubemap
// ---------------------------------------------------------------------------

/// Six square 90-degree pinhole views (focal F/2, principal point at the face
/// center). Face axes: front=-X (the panorama's central direction), back=+X,
/// left=-Y, right=+Y, up=+Z, down=-Z.
struct CubemapFaces {
  ImageRgb front, back, left, right, up, down;

  int face_size() const { return front.width(); }
  bool consistent() const {
    const int f = front.width();
    auto ok = [f](const ImageRgb& img) {
      return img.width() == f && img.height() == f && f > 0;
    };
    return ok(front) && ok(back) && ok(left) && ok(right) && ok(up) && ok(down);
  }
};

namespace detail {

struct FaceBasis {
  Vec3 forward, right, down;
};

inline const std::array<FaceBasis, 6>& face_bases() {
  static const std::array<FaceBasis, 6> bases = {{
      {{-1, 0, 0}, {0, 1, 0}, {0, 0, -1}},   // front
      {{1, 0, 0}, {0, -1, 0}, {0, 0, -1}},   // back
      {{0, -1, 0}, {-1, 0, 0}, {0, 0, -1}},  // left
      {{0, 1, 0}, {1, 0, 0}, {0, 0, -1}},    // right
      {{0, 0, 1}, {0, 1, 0}, {-1, 0, 0}},    // up
      {{0, 0, -1}, {0, 1, 0}, {1, 0, 0}},    // down
  }};
  return bases;
}

inline Color3u8 sample_face_bilinear(const ImageRgb& face, double x, double y) {
  const int f = face.width();
  auto clamp_px = [f](int v) { return std::clamp(v, 0, f - 1); };
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto px = [&](int xx, int yy) -> const Color3u8& {
    return face.at(clamp_px(xx), clamp_px(yy));
  };
  auto mix = [&](auto get) {
    const double v = (get(px(x0, y0)) * (1 - fx) + get(px(x0 + 1, y0)) * fx) *
                         (1 - fy) +
                     (get(px(x0, y0 + 1)) * (1 - fx) +
                      get(px(x0 + 1, y0 + 1)) * fx) *
                         fy;
    return static_cast<uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
  };
  return {mix([](const Color3u8& c) { return static_cast<double>(c.r); }),
          mix([](const Color3u8& c) { return static_cast<double>(c.g); }),
          mix([](const Color3u8& c) { return static_cast<double>(c.b); })};
}

}  // namespace detail

/// Renders the six cubemap faces of a scene (camera-in-world pose).
inline CubemapFaces render_cubemap_faces(const SceneSpec& scene,
                                         const Pose& pose_wc, int face_size) {
  CubemapFaces faces;
  ImageRgb* imgs[6] = {&faces.front, &faces.back, &faces.left,
                       &faces.right, &faces.up,   &faces.down};
  const auto& bases = detail::face_bases();
  for (int fi = 0; fi < 6; ++fi) {
    ImageRgb img(face_size, face_size);
    for (int y = 0; y < face_size; ++y) {
      const double ndc_y = 2.0 * (y + 0.5) / face_size - 1.0;
      for (int x = 0; x < face_size; ++x) {
        const double ndc_x = 2.0 * (x + 0.5) / face_size - 1.0;
        const Vec3 b = (bases[static_cast<size_t>(fi)].forward +
                        ndc_x * bases[static_cast<size_t>(fi)].right +
                        ndc_y * bases[static_cast<size_t>(fi)].down)
                           .normalized();
        double range;
        Color3u8 color{};
        if (raycast(scene, pose_wc.t, pose_wc.R * b, &range, &color))
          img.at(x, y) = color;
      }
    }
    *imgs[fi] = std::move(img);
  }
  return faces;
}

/// Stitches six pinhole faces into an equirectangular panorama. Each output
/// pixel picks the face whose axis best aligns with its bearing (ties resolve
/// in the fixed order front, back, left, right, up, down) and bilinearly
/// samples it.
inline ImageRgb stitch_cubemap(const CubemapFaces& faces, int out_width,
                               int out_height) {
  if (!faces.consistent())
    throw std::invalid_argument("stitch_cubemap: missing or mismatched faces");
  if (out_width != 2 * out_height)
    throw std::invalid_argument("stitch_cubemap: output must have W = 2H");

  const Intrinsics intr = make_intrinsics(out_width, out_height);
  const ImageRgb* imgs[6] = {&faces.front, &faces.back, &faces.left,
                             &faces.right, &faces.up,   &faces.down};
  const auto& bases = detail::face_bases();
  const int f = faces.face_size();

  ImageRgb out(out_width, out_height);
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const Bearing b = bearing_from_pixel(
          intr, {static_cast<double>(x), static_cast<double>(y)});
      int best = 0;
      double best_dot = -2;
      for (int fi = 0; fi < 6; ++fi) {
        const double s = b.dot(bases[static_cast<size_t>(fi)].forward);
        if (s > best_dot) {
          best_dot = s;
          best = fi;
        }
      }
      const auto& basis = bases[static_cast<size_t>(best)];
      const double s = b.dot(basis.forward);
      const double ndc_x = b.dot(basis.right) / s;
      const double ndc_y = b.dot(basis.down) / s;
      const double px = (ndc_x + 1.0) * f / 2.0 - 0.5;
      const double py = (ndc_y + 1.0) * f / 2.0 - 0.5;
      out.at(x, y) = detail::sample_face_bilinear(
          *imgs[static_cast<size_t>(best)], px, py);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory and dataset layout
// ---------------------------------------------------------------------------

/// Camera-in-world poses on a horizontal circle, gaze following the tangent,
/// panorama kept upright. Timestamps step 0.1 s.
inline io::Trajectory make_circle_trajectory(const CircleTrajectorySpec& spec) {
  if (spec.frames <= 0)
    throw std::invalid_argument("trajectory: frame count must be positive");
  io::Trajectory traj;
  traj.reserve(static_cast<size_t>(spec.frames));
  for (int k = 0; k < spec.frames; ++k) {
    const double th = deg2rad(spec.step_deg) * k;
    const double c = std::cos(th), s = std::sin(th);
    Pose pose;  // camera-in-world
    pose.t = Vec3(spec.radius * c, spec.radius * s, spec.height);
    Mat3 r;
    r.col(0) = Vec3(s, -c, 0);  // camera X in world; image center looks at -X
    r.col(1) = Vec3(c, s, 0);
    r.col(2) = Vec3(0, 0, 1);
    pose.R = r;
    traj.push_back({0.1 * k, pose});
  }
  return traj;
}

/// Throws if any trajectory position is inside (or touching) a solid.
inline void validate_scene(const SceneSpec& scene) {
  if (!scene.has_primitive())
    throw std::invalid_argument("scene: needs at least one primitive");
  const io::Trajectory traj = make_circle_trajectory(scene.trajectory);
  for (const auto& e : traj) {
    const Vec3& p = e.pose.t;
    for (const auto& s : scene.spheres)
      if ((p - s.center).norm() <= s.radius)
        throw std::invalid_argument("scene: camera inside a sphere");
    for (const auto& b : scene.boxes)
      if ((p.array() >= b.min.array()).all() &&
          (p.array() <= b.max.array()).all())
        throw std::invalid_argument("scene: camera inside a box");
    for (const auto& pl : scene.planes)
      if (std::abs(p.z() - pl.height) < 1e-9)
        throw std::invalid_argument("scene: camera on the ground plane");
  }
}

inline Color3u8 parse_color(std::istream& in) {
  int r, g, b;
  if (!(in >> r >> g >> b)) throw std::runtime_error("scene: expected r g b");
  if (r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255)
    throw std::runtime_error("scene: color channel out of [0,255]");
  return {static_cast<uint8_t>(r), static_cast<uint8_t>(g),
          static_cast<uint8_t>(b)};
}

/// Text scene format, one directive per line:
///   seed N
///   noise CELL AMP
///   sphere CX CY CZ RADIUS R G B
///   box XMIN YMIN ZMIN XMAX YMAX ZMAX R G B
///   plane HEIGHT CELL R1 G1 B1 R2 G2 B2
///   trajectory RADIUS HEIGHT FRAMES STEP_DEG
inline SceneSpec parse_scene(std::istream& in) {
  SceneSpec scene;
  scene.spheres.clear();
  scene.boxes.clear();
  scene.planes.clear();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string kind;
    if (!(ss >> kind)) continue;
    try {
      if (kind == "seed") {
        if (!(ss >> scene.seed)) throw std::runtime_error("expected seed N");
      } else if (kind == "noise") {
        if (!(ss >> scene.noise_cell >> scene.noise_amp))
          throw std::runtime_error("expected noise CELL AMP");
      } else if (kind == "sphere") {
        SphereSpec s;
        if (!(ss >> s.center.x() >> s.center.y() >> s.center.z() >> s.radius))
          throw std::runtime_error("expected sphere CX CY CZ R ...");
        s.albedo = parse_color(ss);
        scene.spheres.push_back(s);
      } else if (kind == "box") {
        BoxSpec b;
        if (!(ss >> b.min.x() >> b.min.y() >> b.min.z() >> b.max.x() >>
              b.max.y() >> b.max.z()))
          throw std::runtime_error("expected box MIN MAX ...");
        b.albedo = parse_color(ss);
        scene.boxes.push_back(b);
      } else if (kind == "plane") {
        PlaneSpec p;
        if (!(ss >> p.height >> p.cell))
          throw std::runtime_error("expected plane HEIGHT CELL ...");
        p.albedo1 = parse_color(ss);
        p.albedo2 = parse_color(ss);
        scene.planes.push_back(p);
      } else if (kind == "trajectory") {
        auto& t = scene.trajectory;
        if (!(ss >> t.radius >> t.height >> t.frames >> t.step_deg))
          throw std::runtime_error("expected trajectory RADIUS HEIGHT FRAMES STEP");
      } else {
        throw std::runtime_error("unknown directive '" + kind + "'");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("scene line " + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return scene;
}

inline SceneSpec load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open scene file: " + path);
  return parse_scene(f);
}

inline void write_scene(std::ostream& out, const SceneSpec& scene) {
  char buf[512];
  out << "seed " << scene.seed << "\n";
  std::snprintf(buf, sizeof(buf), "noise %.17g %.17g\n", scene.noise_cell,
                scene.noise_amp);
  out << buf;
  for (const auto& s : scene.spheres) {
    std::snprintf(buf, sizeof(buf), "sphere %.17g %.17g %.17g %.17g %d %d %d\n",
                  s.center.x(), s.center.y(), s.center.z(), s.radius,
                  s.albedo.r, s.albedo.g, s.albedo.b);
    out << buf;
  }
  for (const auto& b : scene.boxes) {
    std::snprintf(buf, sizeof(buf),
                  "box %.17g %.17g %.17g %.17g %.17g %.17g %d %d %d\n",
                  b.min.x(), b.min.y(), b.min.z(), b.max.x(), b.max.y(),
                  b.max.z(), b.albedo.r, b.albedo.g, b.albedo.b);
    out << buf;
  }
  for (const auto& p : scene.planes) {
    std::snprintf(buf, sizeof(buf), "plane %.17g %.17g %d %d %d %d %d %d\n",
                  p.height, p.cell, p.albedo1.r, p.albedo1.g, p.albedo1.b,
                  p.albedo2.r, p.albedo2.g, p.albedo2.b);
    out << buf;
  }
  const auto& t = scene.trajectory;
  std::snprintf(buf, sizeof(buf), "trajectory %.17g %.17g %d %.17g\n", t.radius,
                t.height, t.frames, t.step_deg);
  out << buf;
}

/// The built-in desk-scale scene: a checkered floor with a ring of textured
/// spheres and boxes around a 1.5 m camera circle.
inline SceneSpec builtin_desk_scene() {
  SceneSpec s;
  s.seed = 42;
  s.noise_cell = 0.6;
  s.noise_amp = 0.4;
  s.planes.push_back({0.0, 0.5, {196, 188, 172}, {96, 102, 114}});
  s.spheres.push_back({{3.6, 1.2, 0.9}, 0.8, {204, 84, 72}});
  s.spheres.push_back({{-3.0, 2.8, 0.7}, 0.7, {72, 160, 212}});
  s.spheres.push_back({{0.6, -4.0, 1.0}, 0.9, {228, 200, 92}});
  s.spheres.push_back({{-4.2, -2.2, 0.6}, 0.6, {124, 212, 132}});
  s.boxes.push_back({{2.6, -3.4, 0.0}, {3.8, -2.2, 1.5}, {172, 120, 204}});
  s.boxes.push_back({{-5.0, 0.6, 0.0}, {-3.8, 1.8, 1.2}, {224, 144, 64}});
  s.boxes.push_back({{1.6, 3.2, 0.0}, {3.0, 4.6, 1.9}, {92, 192, 184}});
  s.boxes.push_back({{-1.2, -5.4, 0.0}, {0.2, -4.2, 1.3}, {204, 172, 140}});
  s.trajectory = {1.5, 1.5, 200, 1.8};
  return s;
}

/// Writes the full dataset tree: rgb/%06d.ppm, depth/%06d.pfm, gt_traj.txt,
/// calib.txt ("W H"), scene.txt.
inline void generate_dataset(const SceneSpec& scene, const std::string& out_dir,
                             int width, int height) {
  validate_scene(scene);
  const Intrinsics intr = make_intrinsics(width, height);
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "rgb");
  fs::create_directories(fs::path(out_dir) / "depth");

  const io::Trajectory traj = make_circle_trajectory(scene.trajectory);
  char name[64];
  for (size_t k = 0; k < traj.size(); ++k) {
    auto [rgb, depth] = raycast_scene(scene, traj[k].pose, intr);
    std::snprintf(name, sizeof(name), "%06zu.ppm", k);
    io::write_ppm((fs::path(out_dir) / "rgb" / name).string(), rgb);
    std::snprintf(name, sizeof(name), "%06zu.pfm", k);
    io::write_pfm((fs::path(out_dir) / "depth" / name).string(), depth.values);
  }
  io::write_trajectory((fs::path(out_dir) / "gt_traj.txt").string(), traj);

  std::ofstream calib(fs::path(out_dir) / "calib.txt");
  calib << width << " " << height << "\n";
  if (!calib) throw std::runtime_error("cannot write calib.txt");

  std::ofstream scene_out(fs::path(out_dir) / "scene.txt");
  write_scene(scene_out, scene);
  if (!scene_out) throw std::runtime_error("cannot write scene.txt");
}

}  // namespace panoslam
