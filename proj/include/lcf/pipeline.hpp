// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#pragma once

#include "lcf/eval.hpp"
#include "lcf/fusion.hpp"
#include "lcf/io.hpp"
#include "lcf/synth.hpp"

namespace lcf {

struct StageTiming {
  std::string stage;
  double ms = 0.0;
};

struct PipelineOutput {
  std::vector<Proposal> proposals;
  std::vector<Detection> detections;  // canonical order: frame, conf desc
  std::vector<double> proposal_iou;   // against the source GT box
  std::vector<double> refined_iou;
  std::vector<StageTiming> timings;
};

// Builds the parameter manifest for a scene + config pair.
std::vector<ParamSpec> pipeline_param_spec(const io::Config& cfg,
                                           int point_extra_channels);

// voxelize -> surrogate_backbone -> perturb_boxes -> global_fuse ->
// roi_grid_pool -> pie_encode -> local_fuse -> fda_aggregate -> refine.
// Toggled-off components contribute exact zeros to the grid features.
PipelineOutput run_pipeline(const Scene& scene, const ParamStore& params,
                            const io::Config& cfg, uint64_t proposal_seed);

}  // namespace lcf
