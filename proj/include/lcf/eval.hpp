// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#pragma once

#include <array>
#include <vector>

#include "lcf/geometry.hpp"
#include "lcf/synth.hpp"

namespace lcf {

struct Detection {
  int frame = 0;
  int cls = 0;
  Box7 box;
  double confidence = 0.0;
};

struct EvalFrame {
  std::vector<Detection> detections;
  std::vector<GtBox> ground_truth;
  std::array<double, kNumClasses> iou_thresholds{0.7, 0.5, 0.5};
};

struct MatchRecord {
  int det_index = -1;  // index into frame.detections
  int gt_index = -1;   // -1 for false positives
  int cls = 0;
  double confidence = 0.0;
  double heading_err = 0.0;  // min(|dtheta|, 2pi - |dtheta|), matches only
  bool matched = false;
};

// Greedy confidence-order matching: each detection claims the unmatched
// same-class ground truth with the highest iou_3d at or above the class
// threshold. Records come back in processing (confidence-descending) order.
std::vector<MatchRecord> match_frame(const EvalFrame& frame);

struct PrSample {
  double confidence = 0.0;
  bool tp = false;
  double heading_err = 0.0;
};

// AP interpolated at the 40 recall positions {1/40, ..., 40/40}, with
// precision at recall r taken as the maximum precision among operating
// points whose recall is >= r. Zero ground truth gives 0.
double average_precision_40(std::span<const PrSample> samples, size_t n_gt);

// Same sweep, but every true positive contributes 1 - heading_err / pi to
// the cumulative true-positive mass of both precision and recall. APH <= AP
// by construction.
double aph(std::span<const PrSample> samples, size_t n_gt);

struct ClassMetrics {
  int cls = 0;
  double ap = 0.0;
  double aph = 0.0;
  size_t n_gt = 0;
  size_t n_det = 0;
};

// Aggregates match records over frames and reports AP40 / APH per class.
std::vector<ClassMetrics> evaluate_frames(std::span<const EvalFrame> frames);

}  // namespace lcf
