#pragma once

// Flat key=value configuration: registered defaults < config file <
// command-line overrides. Unknown keys and out-of-domain values are rejected.

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace panoslam {

class Config {
 public:
  Config() { register_defaults(); }

  void set(const std::string& key, const std::string& value) {
    auto it = entries_.find(key);
    if (it == entries_.end())
      throw std::invalid_argument("unknown config key: " + key);
    if (it->second.validate && !it->second.validate(value))
      throw std::invalid_argument("invalid value for " + key + ": " + value);
    it->second.value = value;
  }

  /// Parses `key = value` lines; '#' starts a comment, blank lines ignored.
  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                   ": expected key = value");
        continue;
      }
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  /// Accepts a single "key=value" override (CLI --set).
  void set_from_string(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("expected key=value, got: " + kv);
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  double get_double(const std::string& key) const {
    return std::stod(raw(key));
  }
  int get_int(const std::string& key) const { return std::stoi(raw(key)); }
  bool get_bool(const std::string& key) const {
    const std::string& v = raw(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("not a boolean: " + key + " = " + v);
  }
  const std::string& get_string(const std::string& key) const {
    return raw(key);
  }

 private:
  struct Entry {
    std::string value;
    std::function<bool(const std::string&)> validate;
  };

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  const std::string& raw(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end())
      throw std::invalid_argument("unknown config key: " + key);
    return it->second.value;
  }

  static bool is_number(const std::string& s, double lo, double hi) {
    try {
      size_t pos = 0;
      const double v = std::stod(s, &pos);
      return pos == s.size() && std::isfinite(v) && v >= lo && v <= hi;
    } catch (...) {
      return false;
    }
  }

  static bool is_int(const std::string& s, long lo, long hi) {
    try {
      size_t pos = 0;
      const long v = std::stol(s, &pos);
      return pos == s.size() && v >= lo && v <= hi;
    } catch (...) {
      return false;
    }
  }

  void add(const std::string& key, const std::string& def,
           std::function<bool(const std::string&)> validate) {
    entries_[key] = Entry{def, std::move(validate)};
  }

  void register_defaults() {
    auto num = [](double lo, double hi) {
      return [lo, hi](const std::string& s) { return is_number(s, lo, hi); };
    };
    auto integer = [](long lo, long hi) {
      return [lo, hi](const std::string& s) { return is_int(s, lo, hi); };
    };

    add("features.n_levels", "8", integer(1, 16));
    add("features.scale_factor", "1.2", num(1.01, 4.0));
    add("features.fast_threshold", "20", integer(1, 254));
    add("features.n_features", "2000", integer(1, 10000000));
    add("features.match_ratio", "0.8", num(0.01, 1.0));
    add("features.max_hamming", "64", integer(0, 256));

    add("geom.epipole_angle_deg", "1.0", num(0, 90));
    add("geom.epiplane_angle_deg", "0.5", num(0, 90));
    add("geom.reproj_angle_deg", "1.0", num(0, 90));
    add("geom.parallax_deg", "0.5", num(0, 90));
    add("geom.min_range_m", "0.1", num(0, 1e9));

    add("track.huber_deg", "1.5", num(1e-6, 90));
    add("track.inlier_deg", "2.0", num(1e-6, 90));
    add("track.min_inliers", "15", integer(4, 100000));
    add("track.kf_ratio", "0.9", num(0, 1));
    add("track.kf_min_interval", "3", integer(0, 10000));
    add("track.kf_max_interval", "30", integer(1, 100000));

    add("map.fuse_angle_deg", "1.0", num(0, 90));
    add("map.fuse_hamming", "50", integer(0, 256));
    add("map.covis_threshold", "15", integer(1, 100000));
    add("map.top_n_neighbors", "10", integer(1, 1000));
    add("map.ba_window", "8", integer(2, 100));

    add("densify.levels", "4", integer(1, 10));
    add("densify.kernel_size", "5", integer(1, 31));
    add("densify.kernel_sigma", "1.0", num(1e-3, 100));
    add("densify.c_min", "1e-3", num(0, 1));
    add("densify.max_iters", "16", integer(0, 100000));
    add("densify.gamma", "0.5", num(0, 1));
    add("densify.refine_sigma_s", "3.0", num(0.1, 100));
    add("densify.refine_sigma_r", "0.1", num(1e-4, 10));
    add("densify.refine_passes", "2", integer(0, 100));
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace panoslam
