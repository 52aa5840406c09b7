#pragma once

// File formats: binary PPM (P6, maxval 255) for color, PFM ("Pf", scale -1.0,
// bottom-to-top rows) for depth/confidence, TUM-style text trajectories
// ("timestamp tx ty tz qx qy qz qw"), ASCII PLY point clouds.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "panoslam/image.hpp"
#include "panoslam/se3.hpp"

namespace panoslam::io {

struct TrajectoryEntry {
  double timestamp = 0;  // seconds
  Pose pose;             // camera-in-world
  // Quaternion as read from file (x, y, z, w), kept so that read-write round
  // trips are byte-identical; recomputing it from the rotation matrix loses
  // the last ulp.
  std::optional<Eigen::Vector4d> raw_quat;
};

using Trajectory = std::vector<TrajectoryEntry>;

namespace detail {

inline std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  return f;
}

inline std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  return f;
}

/// Reads one whitespace-delimited token, skipping '#' comments (PNM/PFM
/// header syntax).
inline std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      break;
    }
  }
  while ((c = in.get()) != EOF && !std::isspace(c))
    tok.push_back(static_cast<char>(c));
  if (tok.empty()) throw std::runtime_error("truncated header");
  return tok;
}

}  // namespace detail

inline void write_ppm(const std::string& path, const ImageRgb& img) {
  auto f = detail::open_out(path, true);
  f << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.data()),
          static_cast<std::streamsize>(img.size() * 3));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline ImageRgb read_ppm(const std::string& path) {
  auto f = detail::open_in(path, true);
  if (detail::pnm_token(f) != "P6")
    throw std::runtime_error(path + ": not a binary PPM (P6)");
  const int w = std::stoi(detail::pnm_token(f));
  const int h = std::stoi(detail::pnm_token(f));
  const int maxval = std::stoi(detail::pnm_token(f));
  if (w <= 0 || h <= 0) throw std::runtime_error(path + ": bad PPM size");
  if (maxval != 255)
    throw std::runtime_error(path + ": unsupported PPM maxval (want 255)");
  ImageRgb img(w, h);
  f.read(reinterpret_cast<char*>(img.data()),
         static_cast<std::streamsize>(img.size() * 3));
  if (f.gcount() != static_cast<std::streamsize>(img.size() * 3))
    throw std::runtime_error(path + ": truncated PPM payload");
  return img;
}

/// Grayscale PFM. Values are float32 on disk; the in-memory maps use double.
/// NaN values are rejected on write (invalid pixels are encoded as 0.0).
inline void write_pfm(const std::string& path, const ImageF64& img) {
  auto f = detail::open_out(path, true);
  f << "Pf\n" << img.width() << " " << img.height() << "\n-1.0\n";
  std::vector<float> row(static_cast<size_t>(img.width()));
  for (int y = img.height() - 1; y >= 0; --y) {  // bottom-to-top
    for (int x = 0; x < img.width(); ++x) {
      const double v = img.at(x, y);
      if (std::isnan(v)) throw std::runtime_error(path + ": NaN in PFM write");
      row[static_cast<size_t>(x)] = static_cast<float>(v);
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline ImageF64 read_pfm(const std::string& path) {
  auto f = detail::open_in(path, true);
  const std::string magic = detail::pnm_token(f);
  if (magic != "Pf")
    throw std::runtime_error(path + ": not a grayscale PFM (Pf)");
  const int w = std::stoi(detail::pnm_token(f));
  const int h = std::stoi(detail::pnm_token(f));
  const double scale = std::stod(detail::pnm_token(f));
  if (w <= 0 || h <= 0) throw std::runtime_error(path + ": bad PFM size");
  const bool little_endian = scale < 0;
  ImageF64 img(w, h);
  std::vector<float> row(static_cast<size_t>(w));
  for (int y = h - 1; y >= 0; --y) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(row.size() * sizeof(float)))
      throw std::runtime_error(path + ": truncated PFM payload");
    for (int x = 0; x < w; ++x) {
      float v = row[static_cast<size_t>(x)];
      if (!little_endian) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        u = __builtin_bswap32(u);
        std::memcpy(&v, &u, 4);
      }
      img.at(x, y) = v;
    }
  }
  return img;
}

inline DepthMap depth_from_pfm(const ImageF64& img) {
  DepthMap d(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (img.at(x, y) > 0) d.set(x, y, img.at(x, y));
  return d;
}

inline void write_trajectory(const std::string& path, const Trajectory& traj) {
  auto f = detail::open_out(path, false);
  f << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[512];
  for (const auto& e : traj) {
    Eigen::Vector4d q;
    if (e.raw_quat) {
      q = *e.raw_quat;
    } else {
      const Eigen::Quaterniond eq = e.pose.quat();
      q << eq.x(), eq.y(), eq.z(), eq.w();
    }
    std::snprintf(buf, sizeof(buf),
                  "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  e.timestamp, e.pose.t.x(), e.pose.t.y(), e.pose.t.z(), q(0),
                  q(1), q(2), q(3));
    f << buf;
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline Trajectory read_trajectory(const std::string& path) {
  auto f = detail::open_in(path, false);
  Trajectory traj;
  std::string line;
  while (std::getline(f, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    TrajectoryEntry e;
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> e.timestamp >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      continue;  // blank or comment-only line
    e.pose = Pose::from_quat(Eigen::Quaterniond(qw, qx, qy, qz), {tx, ty, tz});
    e.raw_quat = Eigen::Vector4d(qx, qy, qz, qw);
    traj.push_back(e);
  }
  return traj;
}

struct PlyVertex {
  Vec3 position;
  Color3u8 color;
};

inline void write_ply(const std::string& path,
                      const std::vector<PlyVertex>& vertices) {
  auto f = detail::open_out(path, false);
  f << "ply\nformat ascii 1.0\n"
    << "element vertex " << vertices.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n"
    << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
    << "end_header\n";
  char buf[256];
  for (const auto& v : vertices) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d %d %d\n",
                  v.position.x(), v.position.y(), v.position.z(), v.color.r,
                  v.color.g, v.color.b);
    f << buf;
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace panoslam::io
