// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].
//
// Command-line driver: synth / run / eval / gradcheck / ablate / bench.
// Exit codes: 0 ok, 1 usage, 2 I/O, 3 invariant or gradcheck failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "lcf/gradcheck.hpp"
#include "lcf/pipeline.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace lcf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitInvariant = 3;

struct CommonOpts {
  std::string config_path;
  std::string profile = "wod";
  bool profile_given = false;
  std::vector<std::string> overrides;
  std::vector<std::string> toggles;
  std::string pie_mode;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "configuration file");
  cmd->add_option("--profile", opts.profile, "dataset profile (wod|kitti)")
      ->check(CLI::IsMember({"wod", "kitti"}))
      ->each([&opts](const std::string&) { opts.profile_given = true; });
  cmd->add_option("--set", opts.overrides,
                  "config override key=value (repeatable)");
  cmd->add_option("--toggle", opts.toggles,
                  "flip a fusion component: gof|lof|fda (repeatable)")
      ->check(CLI::IsMember({"gof", "lof", "fda"}));
  cmd->add_option("--pie-mode", opts.pie_mode,
                  "position encoder inputs (xyz_d|xyz_d_r)")
      ->check(CLI::IsMember({"xyz_d", "xyz_d_r"}));
}

// Precedence: profile defaults < config file < --set < named flags.
io::Config resolve_config(const CommonOpts& opts) {
  if (opts.profile_given && !opts.config_path.empty())
    throw io::ConfigError(0, "--profile and --config are mutually exclusive");
  io::Config cfg =
      opts.config_path.empty()
          ? io::default_config(opts.profile == "kitti" ? io::Profile::kitti
                                                       : io::Profile::wod)
          : io::load_config(opts.config_path);
  for (const std::string& assignment : opts.overrides)
    io::apply_override(cfg, assignment);
  for (const std::string& toggle : opts.toggles) {
    if (toggle == "gof") cfg.fusion.enable_gof = !cfg.fusion.enable_gof;
    if (toggle == "lof") cfg.fusion.enable_lof = !cfg.fusion.enable_lof;
    if (toggle == "fda") cfg.fusion.enable_fda = !cfg.fusion.enable_fda;
  }
  if (!opts.pie_mode.empty())
    cfg.fusion.pie_mode =
        opts.pie_mode == "xyz_d" ? PieMode::XYZ_D : PieMode::XYZ_D_R;
  return cfg;
}

double mean_of(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double s = 0;
  for (const double v : values) s += v;
  return s / double(values.size());
}

json timings_json(std::span<const StageTiming> timings) {
  json out = json::array();
  for (const StageTiming& t : timings)
    out.push_back({{"stage", t.stage}, {"ms", t.ms}});
  return out;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw io::IoError(io::IoErrorKind::open_failure, "cannot open " + path);
  out << j.dump(2) << "\n";
}

// Every subcommand can snapshot the inputs that reproduce it.
void write_command_manifest(const std::string& path, const char* command,
                            const io::Config& cfg, json extra) {
  if (path.empty()) return;
  extra["command"] = command;
  extra["config_text"] = io::config_to_text(cfg);
  write_json(path, extra);
}

void print_metrics_table(std::span<const ClassMetrics> metrics) {
  std::printf("%-12s %8s %8s %6s %6s\n", "class", "AP40", "APH", "n_gt",
              "n_det");
  double map = 0, maph = 0;
  int classes = 0;
  for (const ClassMetrics& m : metrics) {
    std::printf("%-12s %8.4f %8.4f %6zu %6zu\n", class_name(m.cls), m.ap,
                m.aph, m.n_gt, m.n_det);
    if (m.n_gt > 0) {
      map += m.ap;
      maph += m.aph;
      ++classes;
    }
  }
  if (classes > 0)
    std::printf("%-12s %8.4f %8.4f\n", "mean", map / classes, maph / classes);
}

std::vector<ClassMetrics> evaluate_detections(
    std::span<const Detection> detections, const Scene& scene,
    const io::Config& cfg) {
  // Detections grouped by frame id; synthetic scenes are one frame, but the
  // evaluator accepts any count.
  std::map<int, EvalFrame> frames;
  for (const Detection& d : detections) frames[d.frame].detections.push_back(d);
  if (frames.empty()) frames[0] = EvalFrame{};
  std::vector<EvalFrame> list;
  for (auto& [id, frame] : frames) {
    frame.ground_truth = scene.gt_boxes;
    frame.iou_thresholds = cfg.eval.iou_thresholds;
    list.push_back(std::move(frame));
  }
  return evaluate_frames(list);
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOpts& common, uint64_t seed,
              const std::string& out_path, const std::string& manifest) {
  const io::Config cfg = resolve_config(common);
  const Scene scene = generate_scene(seed, cfg.synth, cfg.voxel);
  io::save_scene(out_path, scene);
  write_command_manifest(manifest, "synth", cfg,
                         {{"seeds", {{"scene_seed", seed}}},
                          {"outputs", {{"scene", out_path}}}});
  std::printf("scene: %zu objects, %zu points, %zu cameras -> %s\n",
              scene.gt_boxes.size(), scene.points.count, scene.cameras.size(),
              out_path.c_str());
  return kExitOk;
}

struct RunArgs {
  std::string scene_path;
  std::string params_path;
  std::string save_params_path;
  std::string out_dir = ".";
  std::string replay_path;
  uint64_t param_seed = 1;
  uint64_t proposal_seed = 2;
};

int cmd_run(const CommonOpts& common, RunArgs args) {
  io::Config cfg;
  if (!args.replay_path.empty()) {
    std::ifstream in(args.replay_path);
    if (!in)
      throw io::IoError(io::IoErrorKind::open_failure,
                        "cannot open " + args.replay_path);
    const json manifest = json::parse(in);
    cfg = io::parse_config(manifest.at("config_text").get<std::string>());
    args.scene_path = manifest.at("inputs").at("scene").get<std::string>();
    args.param_seed = manifest.at("seeds").at("param_seed").get<uint64_t>();
    args.proposal_seed =
        manifest.at("seeds").at("proposal_seed").get<uint64_t>();
    if (manifest.contains("params_file"))
      args.params_path = manifest.at("params_file").get<std::string>();
  } else {
    cfg = resolve_config(common);
  }
  if (args.scene_path.empty())
    throw io::ConfigError(0, "run requires --scene or --replay");

  set_precision(cfg.run_precision);
  const Scene scene = io::load_scene(args.scene_path);

  ParamStore params;
  if (!args.params_path.empty()) {
    params = io::load_params(args.params_path);
  } else {
    params = init_params(pipeline_param_spec(cfg, scene.points.extra_channels),
                         args.param_seed);
  }
  if (!args.save_params_path.empty())
    io::save_params(args.save_params_path, params);

  const auto t0 = std::chrono::steady_clock::now();
  const PipelineOutput out =
      run_pipeline(scene, params, cfg, args.proposal_seed);
  const double total_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();

  fs::create_directories(args.out_dir);
  const std::string det_bin =
      (fs::path(args.out_dir) / "detections.bin").string();
  const std::string det_txt =
      (fs::path(args.out_dir) / "detections.txt").string();
  const std::string manifest_path =
      (fs::path(args.out_dir) / "manifest.json").string();
  io::save_detections(det_bin, out.detections);
  io::save_detections_text(det_txt, out.detections);

  json manifest{
      {"command", "run"},
      {"config_text", io::config_to_text(cfg)},
      {"inputs", {{"scene", args.scene_path}}},
      {"seeds",
       {{"scene_seed", scene.seed},
        {"param_seed", args.param_seed},
        {"proposal_seed", args.proposal_seed}}},
      {"toggles",
       {{"gof", cfg.fusion.enable_gof},
        {"lof", cfg.fusion.enable_lof},
        {"fda", cfg.fusion.enable_fda}}},
      {"timings", timings_json(out.timings)},
      {"total_ms", total_ms},
      {"outputs", {{"detections_bin", det_bin}, {"detections_txt", det_txt}}},
      {"summary",
       {{"n_proposals", out.proposals.size()},
        {"mean_proposal_iou", mean_of(out.proposal_iou)},
        {"mean_refined_iou", mean_of(out.refined_iou)}}},
  };
  if (!args.params_path.empty()) manifest["params_file"] = args.params_path;
  write_json(manifest_path, manifest);

  std::printf("run: %zu proposals, mean iou %.4f -> %.4f (%.1f ms)\n",
              out.proposals.size(), mean_of(out.proposal_iou),
              mean_of(out.refined_iou), total_ms);
  std::printf("detections: %s\nmanifest: %s\n", det_bin.c_str(),
              manifest_path.c_str());
  return kExitOk;
}

int cmd_eval(const CommonOpts& common, const std::string& scene_path,
             const std::string& det_path, const std::string& manifest) {
  const io::Config cfg = resolve_config(common);
  const Scene scene = io::load_scene(scene_path);
  const auto detections = io::load_detections(det_path);
  print_metrics_table(evaluate_detections(detections, scene, cfg));
  write_command_manifest(
      manifest, "eval", cfg,
      {{"inputs", {{"scene", scene_path}, {"detections", det_path}}}});
  return kExitOk;
}

int cmd_gradcheck(uint64_t seed, int probes, double tol,
                  const std::string& out_path) {
  const auto reports = check_gradients(seed, tol, probes);
  std::printf("%-16s %12s %12s %7s %9s %6s\n", "op", "max_rel", "max_abs",
              "probes", "tol", "pass");
  for (const GradReport& r : reports)
    std::printf("%-16s %12.3e %12.3e %7d %9.1e %6s\n", r.op.c_str(),
                r.max_rel_err, r.max_abs_err, r.probes, r.tolerance,
                r.pass ? "yes" : "NO");
  if (!out_path.empty()) io::save_grad_reports(out_path, reports);
  return all_pass(reports) ? kExitOk : kExitInvariant;
}

int cmd_ablate(const CommonOpts& common, const std::string& scene_path,
               uint64_t param_seed, uint64_t proposal_seed,
               const std::string& manifest) {
  const io::Config base = resolve_config(common);
  write_command_manifest(manifest, "ablate", base,
                         {{"inputs", {{"scene", scene_path}}},
                          {"seeds",
                           {{"param_seed", param_seed},
                            {"proposal_seed", proposal_seed}}}});
  const Scene scene = io::load_scene(scene_path);
  set_precision(base.run_precision);

  std::printf("%-4s %-4s %-4s %-8s %10s %10s %8s %8s\n", "gof", "lof", "fda",
              "pie", "prop_iou", "ref_iou", "mAP40", "mAPH");
  for (const PieMode mode : {PieMode::XYZ_D, PieMode::XYZ_D_R}) {
    io::Config cfg = base;
    cfg.fusion.pie_mode = mode;
    // The PIE input width depends on the mode, so parameters are seeded per
    // mode; the toggle rows reuse them.
    const ParamStore params = init_params(
        pipeline_param_spec(cfg, scene.points.extra_channels), param_seed);
    for (int bits = 0; bits < 8; ++bits) {
      cfg.fusion.enable_gof = bits & 1;
      cfg.fusion.enable_lof = bits & 2;
      cfg.fusion.enable_fda = bits & 4;
      const PipelineOutput out =
          run_pipeline(scene, params, cfg, proposal_seed);
      const auto metrics = evaluate_detections(out.detections, scene, cfg);
      double map = 0, maph = 0;
      int classes = 0;
      for (const ClassMetrics& m : metrics)
        if (m.n_gt > 0) {
          map += m.ap;
          maph += m.aph;
          ++classes;
        }
      std::printf("%-4s %-4s %-4s %-8s %10.4f %10.4f %8.4f %8.4f\n",
                  cfg.fusion.enable_gof ? "on" : "off",
                  cfg.fusion.enable_lof ? "on" : "off",
                  cfg.fusion.enable_fda ? "on" : "off",
                  mode == PieMode::XYZ_D ? "xyz_d" : "xyz_d_r",
                  mean_of(out.proposal_iou), mean_of(out.refined_iou),
                  classes ? map / classes : 0.0,
                  classes ? maph / classes : 0.0);
    }
  }
  return kExitOk;
}

int cmd_bench(const CommonOpts& common, size_t n_points, int n_proposals,
              const std::string& manifest) {
  const io::Config cfg = resolve_config(common);
  write_command_manifest(manifest, "bench", cfg,
                         {{"sizes",
                           {{"points", n_points},
                            {"proposals", n_proposals}}}});

  PointCloud cloud;
  cloud.extra_channels = 2;
  cloud.data.reserve(n_points * cloud.row_stride());
  SplitMix64 rng(99);
  for (size_t i = 0; i < n_points; ++i)
    cloud.append({rng.uniform(cfg.voxel.range_min.x, cfg.voxel.range_max.x),
                  rng.uniform(cfg.voxel.range_min.y, cfg.voxel.range_max.y),
                  rng.uniform(cfg.voxel.range_min.z, cfg.voxel.range_max.z)},
                 {rng.next_double(), rng.next_double()});
  const auto t0 = std::chrono::steady_clock::now();
  const SparseVoxelMap map = voxelize(cloud, cfg.voxel, 1);
  const double vox_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  std::printf("voxelize: %zu points in %.3f s -> %.3e points/s (%zu voxels)\n",
              n_points, vox_s, double(n_points) / vox_s, map.size());

  io::Config scene_cfg = cfg;
  scene_cfg.synth.n_objects = n_proposals;
  set_precision(cfg.run_precision);
  const Scene scene = generate_scene(5, scene_cfg.synth, scene_cfg.voxel);
  const ParamStore params = init_params(
      pipeline_param_spec(scene_cfg, scene.points.extra_channels), 1);
  const PipelineOutput out = run_pipeline(scene, params, scene_cfg, 2);
  double fuse_ms = 0;
  for (const StageTiming& t : out.timings)
    if (t.stage == "fuse+refine") fuse_ms = t.ms;
  std::printf("fusion: %zu proposals in %.3f s -> %.2f proposals/s\n",
              out.proposals.size(), fuse_ms / 1e3,
              double(out.proposals.size()) / (fuse_ms / 1e3));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"local-to-global LiDAR-camera fusion engine"};
  app.require_subcommand(1);

  CommonOpts synth_common, run_common, eval_common, ablate_common,
      bench_common;

  auto* synth = app.add_subcommand("synth", "generate a synthetic scene");
  uint64_t synth_seed = 0;
  std::string synth_out = "scene.bin";
  std::string synth_manifest;
  uint64_t synth_objects = 0;
  bool objects_given = false;
  synth->add_option("--seed", synth_seed, "scene seed");
  synth->add_option("--out,-o", synth_out, "output scene file");
  synth->add_option("--manifest", synth_manifest, "write a run manifest");
  synth->add_option("--objects", synth_objects, "object count")
      ->each([&objects_given](const std::string&) { objects_given = true; });
  add_common(synth, synth_common);

  auto* run = app.add_subcommand("run", "run the fusion pipeline");
  RunArgs run_args;
  run->add_option("--scene", run_args.scene_path, "scene file");
  run->add_option("--params", run_args.params_path, "parameter file");
  run->add_option("--param-seed", run_args.param_seed,
                  "seed for fresh parameters");
  run->add_option("--proposal-seed", run_args.proposal_seed,
                  "seed for proposal perturbation");
  run->add_option("--save-params", run_args.save_params_path,
                  "write the parameters used");
  run->add_option("--out-dir", run_args.out_dir, "output directory");
  run->add_option("--replay", run_args.replay_path,
                  "re-run from a manifest file");
  add_common(run, run_common);

  auto* eval = app.add_subcommand("eval", "evaluate detections (AP40/APH)");
  std::string eval_scene, eval_dets, eval_manifest;
  eval->add_option("--scene", eval_scene, "scene file")->required();
  eval->add_option("--detections", eval_dets, "detection file")->required();
  eval->add_option("--manifest", eval_manifest, "write a run manifest");
  add_common(eval, eval_common);

  auto* grad = app.add_subcommand("gradcheck", "verify analytic gradients");
  uint64_t grad_seed = 2026;
  int grad_probes = 32;
  double grad_tol = 1e-5;
  std::string grad_out;
  grad->add_option("--seed", grad_seed, "probe seed");
  grad->add_option("--probes", grad_probes, "probes per op");
  grad->add_option("--tol", grad_tol, "relative error tolerance");
  grad->add_option("--out", grad_out, "write the report file");

  auto* ablate = app.add_subcommand(
      "ablate", "metric table over the component toggle lattice");
  std::string ablate_scene, ablate_manifest;
  uint64_t ablate_pseed = 1, ablate_prop_seed = 2;
  ablate->add_option("--scene", ablate_scene, "scene file")->required();
  ablate->add_option("--param-seed", ablate_pseed, "parameter seed");
  ablate->add_option("--proposal-seed", ablate_prop_seed, "proposal seed");
  ablate->add_option("--manifest", ablate_manifest, "write a run manifest");
  add_common(ablate, ablate_common);

  auto* bench = app.add_subcommand("bench", "throughput report");
  size_t bench_points = 1000000;
  int bench_proposals = 20;
  std::string bench_manifest;
  bench->add_option("--points", bench_points, "points to voxelize");
  bench->add_option("--proposals", bench_proposals, "proposals to fuse");
  bench->add_option("--manifest", bench_manifest, "write a run manifest");
  add_common(bench, bench_common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) {
      if (objects_given)
        synth_common.overrides.push_back("objects=" +
                                         std::to_string(synth_objects));
      return cmd_synth(synth_common, synth_seed, synth_out,
                       synth_manifest);
    }
    if (*run) return cmd_run(run_common, run_args);
    if (*eval)
      return cmd_eval(eval_common, eval_scene, eval_dets, eval_manifest);
    if (*grad)
      return cmd_gradcheck(grad_seed, grad_probes, grad_tol, grad_out);
    if (*ablate)
      return cmd_ablate(ablate_common, ablate_scene, ablate_pseed,
                        ablate_prop_seed, ablate_manifest);
    if (*bench)
      return cmd_bench(bench_common, bench_points, bench_proposals,
                       bench_manifest);
  } catch (const io::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const io::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvariant;
  }
  return kExitUsage;
}
