// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#include "lcf/eval.hpp"

#include <algorithm>
#include <cmath>

namespace lcf {

std::vector<MatchRecord> match_frame(const EvalFrame& frame) {
  std::vector<size_t> order(frame.detections.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return frame.detections[a].confidence > frame.detections[b].confidence;
  });

  std::vector<uint8_t> claimed(frame.ground_truth.size(), 0);
  std::vector<MatchRecord> out;
  out.reserve(order.size());
  for (const size_t di : order) {
    const Detection& det = frame.detections[di];
    MatchRecord rec;
    rec.det_index = int(di);
    rec.cls = det.cls;
    rec.confidence = det.confidence;

    const double threshold =
        frame.iou_thresholds[std::clamp(det.cls, 0, kNumClasses - 1)];
    double best_iou = 0.0;
    int best_gt = -1;
    for (size_t gi = 0; gi < frame.ground_truth.size(); ++gi) {
      if (claimed[gi] || frame.ground_truth[gi].cls != det.cls) continue;
      const double iou = iou_3d(det.box, frame.ground_truth[gi].box);
      if (iou >= threshold && iou > best_iou) {
        best_iou = iou;
        best_gt = int(gi);
      }
    }
    if (best_gt >= 0) {
      claimed[best_gt] = 1;
      rec.matched = true;
      rec.gt_index = best_gt;
      const double d = std::abs(normalize_angle(
          det.box.heading - frame.ground_truth[best_gt].box.heading));
      rec.heading_err = std::min(d, 2.0 * kPi - d);
    }
    out.push_back(rec);
  }
  return out;
}

namespace {

// Shared PR sweep. TP mass per true positive is 1 for AP and the heading
// weight for APH; both the precision numerator and the recall use it.
double interpolated_ap(std::span<const PrSample> samples, size_t n_gt,
                       bool heading_weighted) {
  if (n_gt == 0) return 0.0;
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return samples[a].confidence > samples[b].confidence;
  });

  std::vector<double> precision, recall;
  precision.reserve(order.size());
  recall.reserve(order.size());
  double tp_mass = 0.0;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    const PrSample& s = samples[order[rank]];
    if (s.tp) {
      const double w =
          heading_weighted ? 1.0 - std::min(s.heading_err, kPi) / kPi : 1.0;
      tp_mass += w;
    }
    precision.push_back(tp_mass / double(rank + 1));
    recall.push_back(tp_mass / double(n_gt));
  }
  // Max precision over every suffix: envelope[i] = max precision at >= i.
  std::vector<double> envelope(precision.size());
  double running = 0.0;
  for (size_t i = precision.size(); i-- > 0;) {
    running = std::max(running, precision[i]);
    envelope[i] = running;
  }

  double ap_sum = 0.0;
  for (int k = 1; k <= 40; ++k) {
    const double r = double(k) / 40.0;
    // First operating point reaching recall >= r (recall is nondecreasing).
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end())
      ap_sum += envelope[size_t(it - recall.begin())];
  }
  return ap_sum / 40.0;
}

}  // namespace

double average_precision_40(std::span<const PrSample> samples, size_t n_gt) {
  return interpolated_ap(samples, n_gt, false);
}

double aph(std::span<const PrSample> samples, size_t n_gt) {
  return interpolated_ap(samples, n_gt, true);
}

std::vector<ClassMetrics> evaluate_frames(std::span<const EvalFrame> frames) {
  std::array<std::vector<PrSample>, kNumClasses> samples;
  std::array<size_t, kNumClasses> n_gt{};
  for (const EvalFrame& frame : frames) {
    for (const GtBox& gt : frame.ground_truth)
      if (gt.cls >= 0 && gt.cls < kNumClasses) ++n_gt[gt.cls];
    for (const MatchRecord& rec : match_frame(frame)) {
      if (rec.cls < 0 || rec.cls >= kNumClasses) continue;
      samples[rec.cls].push_back(
          {rec.confidence, rec.matched, rec.heading_err});
    }
  }
  std::vector<ClassMetrics> out;
  for (int cls = 0; cls < kNumClasses; ++cls) {
    ClassMetrics m;
    m.cls = cls;
    m.n_gt = n_gt[cls];
    m.n_det = samples[cls].size();
    m.ap = average_precision_40(samples[cls], n_gt[cls]);
    m.aph = aph(samples[cls], n_gt[cls]);
    out.push_back(m);
  }
  return out;
}

}  // namespace lcf
