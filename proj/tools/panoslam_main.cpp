// panoslam command-line toolkit.
//
// Subcommands:
//   synth         render a synthetic panoramic dataset
//   stitch        stitch six cubemap faces into an equirectangular panorama
//   run           run SLAM over a dataset (tri or dc mode)
//   densify       densify a sparse depth map guided by an RGB panorama
//   eval          align an estimated trajectory against ground truth
//   sparse-depth  dump per-keyframe sparse depth maps from a run
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage error. Logs go to stderr;
// machine-readable results go to stdout or files.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "panoslam/config.hpp"
#include "panoslam/dataset.hpp"
#include "panoslam/densify.hpp"
#include "panoslam/eval.hpp"
#include "panoslam/io.hpp"
#include "panoslam/system.hpp"

namespace {

using namespace panoslam;

struct SizeArg {
  int width = 1024;
  int height = 512;
};

bool parse_size(const std::string& s, SizeArg* out) {
  const auto x = s.find('x');
  if (x == std::string::npos) return false;
  try {
    out->width = std::stoi(s.substr(0, x));
    out->height = std::stoi(s.substr(x + 1));
  } catch (...) {
    return false;
  }
  return out->width > 0 && out->height > 0;
}

Config build_config(const std::string& config_file,
                    const std::vector<std::string>& overrides) {
  Config cfg;
  if (!config_file.empty()) cfg.load_file(config_file);
  for (const auto& kv : overrides) cfg.set_from_string(kv);
  return cfg;
}

int cmd_synth(const std::string& out_dir, int frames, uint64_t seed,
              const std::string& scene_arg, const std::string& size_str) {
  SizeArg size;
  if (!parse_size(size_str, &size)) {
    std::cerr << "error: --size expects WxH\n";
    return 2;
  }
  SceneSpec scene = scene_arg == "builtin" || scene_arg.empty()
                        ? builtin_desk_scene()
                        : load_scene(scene_arg);
  if (frames > 0) scene.trajectory.frames = frames;
  scene.seed = seed;
  generate_dataset(scene, out_dir, size.width, size.height);
  std::cerr << "wrote " << scene.trajectory.frames << " frames to " << out_dir
            << "\n";
  return 0;
}

int cmd_stitch(const std::string& faces_dir, const std::string& out_file,
               const std::string& size_str) {
  namespace fs = std::filesystem;
  CubemapFaces faces;
  faces.front = io::read_ppm((fs::path(faces_dir) / "front.ppm").string());
  faces.back = io::read_ppm((fs::path(faces_dir) / "back.ppm").string());
  faces.left = io::read_ppm((fs::path(faces_dir) / "left.ppm").string());
  faces.right = io::read_ppm((fs::path(faces_dir) / "right.ppm").string());
  faces.up = io::read_ppm((fs::path(faces_dir) / "up.ppm").string());
  faces.down = io::read_ppm((fs::path(faces_dir) / "down.ppm").string());

  int w, h;
  if (size_str.empty()) {
    // Default panorama height: 4/3 of the face size, rounded to even.
    h = (faces.face_size() * 4 / 3 + 1) & ~1;
    w = 2 * h;
  } else {
    SizeArg size;
    if (!parse_size(size_str, &size)) {
      std::cerr << "error: --size expects WxH\n";
      return 2;
    }
    w = size.width;
    h = size.height;
  }
  io::write_ppm(out_file, stitch_cubemap(faces, w, h));
  std::cerr << "wrote " << out_file << " (" << w << "x" << h << ")\n";
  return 0;
}

int cmd_run(const std::string& data_dir, const std::string& mode,
            const std::string& out_file, const std::string& ply_file,
            int depth_prior, const std::string& config_file,
            const std::vector<std::string>& overrides, uint64_t seed,
            bool single_thread) {
  const Config cfg = build_config(config_file, overrides);
  SystemConfig sys_cfg = SystemConfig::from(cfg);
  sys_cfg.mode = mode == "dc" ? TrackMode::kDc : TrackMode::kTri;
  sys_cfg.depth_prior = depth_prior;
  sys_cfg.seed = seed;
  sys_cfg.single_thread = single_thread;

  System system(Dataset::load(data_dir), sys_cfg);
  const RunReport report = system.run();

  io::write_trajectory(out_file, report.keyframe_trajectory);
  if (!ply_file.empty()) system.export_ply(ply_file);

  std::cerr << "frames: " << report.frames.size()
            << "  keyframes: " << report.keyframe_count
            << "  map points: " << report.map_point_count
            << (report.lost ? "  [LOST]" : "") << "\n";
  if (report.lost) {
    std::cerr << "error: tracking lost\n";
    return 1;
  }
  return 0;
}

int cmd_densify(const std::string& rgb_file, const std::string& sparse_file,
                const std::string& out_file, const std::string& conf_file,
                const std::string& config_file,
                const std::vector<std::string>& overrides) {
  const Config cfg = build_config(config_file, overrides);
  const DensifyConfig dcfg = DensifyConfig::from(cfg);

  const ImageRgb rgb = io::read_ppm(rgb_file);
  const DepthMap sparse = io::depth_from_pfm(io::read_pfm(sparse_file));
  if (sparse.width() != rgb.width() || sparse.height() != rgb.height())
    throw std::runtime_error("densify: rgb and sparse sizes differ");

  const DenseResult dense = densify_multiscale(sparse, dcfg);
  const DepthMap refined = guided_refine(dense.depth, dense.confidence, rgb, dcfg);
  io::write_pfm(out_file, refined.values);
  if (!conf_file.empty()) io::write_pfm(conf_file, dense.confidence);
  return 0;
}

int cmd_eval(const std::string& gt_file, const std::string& est_file,
             const std::string& align_mode, double max_dt) {
  const io::Trajectory gt = io::read_trajectory(gt_file);
  const io::Trajectory est = io::read_trajectory(est_file);
  const PairedPositions pairs = associate(est, gt, max_dt);
  const AlignMode mode =
      align_mode == "sim3" ? AlignMode::kSim3 : AlignMode::kSe3;
  const Alignment alignment = align(pairs, mode);
  const double rmse = ate_rmse(pairs, alignment);
  const double sf = scale_factor(pairs);
  std::printf("ATE_RMSE %.6g SF %.6g\n", rmse, sf);
  return 0;
}

int cmd_sparse_depth(const std::string& data_dir, const std::string& out_dir,
                     const std::string& mode, int depth_prior,
                     const std::string& config_file,
                     const std::vector<std::string>& overrides, uint64_t seed,
                     bool single_thread) {
  const Config cfg = build_config(config_file, overrides);
  SystemConfig sys_cfg = SystemConfig::from(cfg);
  sys_cfg.mode = mode == "dc" ? TrackMode::kDc : TrackMode::kTri;
  sys_cfg.depth_prior = depth_prior;
  sys_cfg.seed = seed;
  sys_cfg.single_thread = single_thread;

  System system(Dataset::load(data_dir), sys_cfg);
  const RunReport report = system.run();
  if (report.lost) {
    std::cerr << "error: tracking lost\n";
    return 1;
  }

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  char name[64];
  for (int64_t kf_id : system.keyframe_ids()) {
    const DepthMap depth = system.keyframe_sparse_depth(kf_id);
    std::snprintf(name, sizeof(name), "kf_%06lld.pfm",
                  static_cast<long long>(kf_id));
    io::write_pfm((fs::path(out_dir) / name).string(), depth.values);
    std::cerr << name << ": " << depth.valid_count() << " valid pixels\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"panoramic visual SLAM toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "render a synthetic dataset");
  std::string synth_out, synth_scene = "builtin", synth_size = "1024x512";
  int synth_frames = 0;
  uint64_t synth_seed = 42;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--frames", synth_frames, "frame count override");
  synth->add_option("--seed", synth_seed, "texture / trajectory seed");
  synth->add_option("--scene", synth_scene, "scene file or 'builtin'");
  synth->add_option("--size", synth_size, "panorama size WxH");

  // stitch
  auto* stitch = app.add_subcommand("stitch", "cubemap -> equirectangular");
  std::string stitch_faces, stitch_out, stitch_size;
  stitch->add_option("--faces", stitch_faces,
                     "directory with front/back/left/right/up/down.ppm")
      ->required();
  stitch->add_option("--out", stitch_out, "output PPM")->required();
  stitch->add_option("--size", stitch_size, "panorama size WxH (default 2H=8F/3)");

  // run
  auto* run = app.add_subcommand("run", "run SLAM over a dataset");
  std::string run_data, run_mode = "tri", run_out, run_ply, run_config;
  std::vector<std::string> run_set;
  int run_prior = 0;
  uint64_t run_seed = 0;
  bool run_single = false;
  run->add_option("--data", run_data, "dataset directory")->required();
  run->add_option("--mode", run_mode, "tri|dc")
      ->check(CLI::IsMember({"tri", "dc"}));
  run->add_option("--out", run_out, "keyframe trajectory output")->required();
  run->add_option("--ply", run_ply, "map point cloud output");
  run->add_option("--depth-prior", run_prior,
                  "ground-truth range anchors per keyframe (dc mode)");
  run->add_option("--config", run_config, "config file (key = value lines)");
  run->add_option("--set", run_set, "config override key=value (repeatable)");
  run->add_option("--seed", run_seed, "seed for the run");
  run->add_flag("--single-thread", run_single,
                "serialize tracking and mapping (bit-deterministic)");

  // densify
  auto* densify = app.add_subcommand("densify", "sparse -> dense depth");
  std::string den_rgb, den_sparse, den_out, den_conf, den_config;
  std::vector<std::string> den_set;
  densify->add_option("--rgb", den_rgb, "RGB panorama (PPM)")->required();
  densify->add_option("--sparse", den_sparse, "sparse depth (PFM)")->required();
  densify->add_option("--out", den_out, "dense depth output (PFM)")->required();
  densify->add_option("--conf", den_conf, "confidence output (PFM)");
  densify->add_option("--config", den_config, "config file");
  densify->add_option("--set", den_set, "config override key=value");

  // eval
  auto* eval = app.add_subcommand("eval", "trajectory evaluation");
  std::string eval_gt, eval_est, eval_align = "sim3";
  double eval_dt = 0.05;
  eval->add_option("--gt", eval_gt, "ground-truth trajectory")->required();
  eval->add_option("--est", eval_est, "estimated trajectory")->required();
  eval->add_option("--align", eval_align, "se3|sim3")
      ->check(CLI::IsMember({"se3", "sim3"}));
  eval->add_option("--max-dt", eval_dt, "association window, seconds");

  // sparse-depth
  auto* sparse = app.add_subcommand("sparse-depth",
                                    "dump per-keyframe sparse depth maps");
  std::string sp_data, sp_out, sp_mode = "tri", sp_config;
  std::vector<std::string> sp_set;
  int sp_prior = 0;
  uint64_t sp_seed = 0;
  bool sp_single = false;
  sparse->add_option("--data", sp_data, "dataset directory")->required();
  sparse->add_option("--out", sp_out, "output directory")->required();
  sparse->add_option("--mode", sp_mode, "tri|dc")
      ->check(CLI::IsMember({"tri", "dc"}));
  sparse->add_option("--depth-prior", sp_prior, "anchors per keyframe (dc)");
  sparse->add_option("--config", sp_config, "config file");
  sparse->add_option("--set", sp_set, "config override key=value");
  sparse->add_option("--seed", sp_seed, "seed for the run");
  sparse->add_flag("--single-thread", sp_single, "serialize tracking/mapping");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed())
      return cmd_synth(synth_out, synth_frames, synth_seed, synth_scene,
                       synth_size);
    if (stitch->parsed()) return cmd_stitch(stitch_faces, stitch_out, stitch_size);
    if (run->parsed())
      return cmd_run(run_data, run_mode, run_out, run_ply, run_prior,
                     run_config, run_set, run_seed, run_single);
    if (densify->parsed())
      return cmd_densify(den_rgb, den_sparse, den_out, den_conf, den_config,
                         den_set);
    if (eval->parsed()) return cmd_eval(eval_gt, eval_est, eval_align, eval_dt);
    if (sparse->parsed())
      return cmd_sparse_depth(sp_data, sp_out, sp_mode, sp_prior, sp_config,
                              sp_set, sp_seed, sp_single);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
