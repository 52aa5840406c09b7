#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "panoslam/config.hpp"

using namespace panoslam;

TEST_CASE("config defaults and overrides") {
  Config cfg;
  CHECK(cfg.get_int("features.n_levels") == 8);
  CHECK(cfg.get_double("features.scale_factor") == Catch::Approx(1.2));
  CHECK(cfg.get_double("geom.parallax_deg") == Catch::Approx(0.5));

  cfg.set("features.n_levels", "4");
  CHECK(cfg.get_int("features.n_levels") == 4);

  cfg.set_from_string("track.huber_deg = 2.5");
  CHECK(cfg.get_double("track.huber_deg") == Catch::Approx(2.5));
}

TEST_CASE("unknown keys and bad values are rejected") {
  Config cfg;
  CHECK_THROWS_AS(cfg.set("nonsense.key", "1"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("features.n_levels", "0"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("features.n_levels", "abc"), std::invalid_argument);
  CHECK_THROWS_AS(cfg.set("features.scale_factor", "-1"),
                  std::invalid_argument);
  CHECK_THROWS_AS(cfg.set_from_string("no_equals_sign"), std::invalid_argument);
}

TEST_CASE("config file parsing") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "panoslam_cfg_test.cfg";
  {
    std::ofstream f(path);
    f << "# comment line\n"
      << "features.fast_threshold = 15\n"
      << "\n"
      << "geom.min_range_m = 0.25  # trailing comment\n";
  }
  Config cfg;
  cfg.load_file(path.string());
  CHECK(cfg.get_int("features.fast_threshold") == 15);
  CHECK(cfg.get_double("geom.min_range_m") == Catch::Approx(0.25));

  {
    std::ofstream f(path);
    f << "not a key value line\n";
  }
  Config bad;
  CHECK_THROWS(bad.load_file(path.string()));
  CHECK_THROWS(Config().load_file("/nonexistent/path.cfg"));
}
