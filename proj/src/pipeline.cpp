// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#include "lcf/pipeline.hpp"

#include <algorithm>
#include <chrono>

namespace lcf {

namespace {

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& out) : out_(out) {}
  void lap(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    const double ms =
        std::chrono::duration<double, std::milli>(now - last_).count();
    out_.push_back({stage, ms});
    last_ = now;
  }

 private:
  std::vector<StageTiming>& out_;
  std::chrono::steady_clock::time_point last_ =
      std::chrono::steady_clock::now();
};

}  // namespace

std::vector<ParamSpec> pipeline_param_spec(const io::Config& cfg,
                                           int point_extra_channels) {
  return fusion_param_spec(cfg.fusion, cfg.voxel.levels,
                           point_extra_channels);
}

PipelineOutput run_pipeline(const Scene& scene, const ParamStore& params,
                            const io::Config& cfg, uint64_t proposal_seed) {
  validate_voxel_config(cfg.voxel);
  validate_fusion_config(cfg.fusion);
  const FusionConfig& fc = cfg.fusion;
  const size_t c = size_t(fc.c_voxel);

  PipelineOutput out;
  StageClock clock(out.timings);

  const std::vector<SparseVoxelMap> maps =
      surrogate_backbone(scene.points, cfg.voxel, params);
  clock.lap("voxelize+backbone");

  out.proposals = perturb_boxes(scene.gt_boxes, proposal_seed,
                                {cfg.synth.noise_center,
                                 cfg.synth.noise_size_log,
                                 cfg.synth.noise_heading});
  clock.lap("proposals");

  std::vector<SparseVoxelMap> fused;
  if (fc.enable_gof) {
    fused = global_fuse(maps, scene.feature_maps, scene.cameras, params, fc);
  }
  clock.lap("global_fuse");

  // Fail fast on missing parameters before fanning out to workers.
  FfnParams::bind(params, "pie");
  if (fc.enable_gof) {
    params.at("pool.weight");
    params.at("pool.bias");
  }
  if (fc.enable_lof) {
    DeformAttnParams::bind(params, "lof.attn", fc.heads, fc.samples);
    FfnParams::bind(params, "lof.reduce");
  }
  if (fc.enable_fda) {
    SelfAttnParams::bind(params, "fda.attn");
    FfnParams::bind(params, "fda.rcb");
    params.at("fda.rcb.ln.gamma");
    params.at("fda.rcb.ln.beta");
  }
  for (const char* name :
       {"refine.conf.fc1.weight", "refine.conf.fc1.bias",
        "refine.conf.fc2.weight", "refine.conf.fc2.bias",
        "refine.reg.fc1.weight", "refine.reg.fc1.bias", "refine.reg.offset"})
    params.at(name);

  const size_t n = out.proposals.size();
  std::vector<Refinement> refined(n);
  parallel_for(n, [&](size_t i) {
    const Proposal& prop = out.proposals[i];
    const RoiGrid grid = split_box_grid(prop.box, fc.u);

    ProposalFeatures pf;
    pf.u = fc.u;
    pf.channels = fc.c_voxel;
    pf.f_local.assign(pf.grid_size() * c, 0.0);
    pf.f_global.assign(pf.grid_size() * c, 0.0);
    pf.valid.assign(pf.grid_size(), 0);

    const PieResult pie = pie_encode(prop.box, grid, scene.points, params, fc);
    pf.f_pie = pie.features;
    for (size_t j = 0; j < pf.grid_size(); ++j)
      if (pie.counts[j] > 0) pf.valid[j] = 1;

    if (fc.enable_gof) {
      PooledGrid pooled = roi_grid_pool(fused, grid, params, fc);
      pf.f_global = std::move(pooled.features);
      for (size_t j = 0; j < pf.grid_size(); ++j)
        if (pooled.valid[j]) pf.valid[j] = 1;
    }
    if (fc.enable_lof) {
      pf.f_local = local_fuse(grid, pf.f_pie, scene.feature_maps,
                              scene.cameras, params, fc);
    }
    const std::vector<double> flat = fda_aggregate(pf, params, fc);
    refined[i] = refine(flat, prop.box, params);
  });
  clock.lap("fuse+refine");

  out.proposal_iou.resize(n);
  out.refined_iou.resize(n);
  out.detections.resize(n);
  for (size_t i = 0; i < n; ++i) {
    out.proposal_iou[i] = out.proposals[i].score;
    out.refined_iou[i] = iou_3d(refined[i].box, scene.gt_boxes[i].box);
    out.detections[i] = Detection{0, out.proposals[i].cls, refined[i].box,
                                  refined[i].confidence};
  }
  std::stable_sort(out.detections.begin(), out.detections.end(),
                   [](const Detection& a, const Detection& b) {
                     if (a.frame != b.frame) return a.frame < b.frame;
                     return a.confidence > b.confidence;
                   });
  clock.lap("collect");
  return out;
}

}  // namespace lcf
