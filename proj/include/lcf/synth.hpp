// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#pragma once

#include <string>
#include <vector>

#include "lcf/geometry.hpp"
#include "lcf/kernels.hpp"
#include "lcf/voxel.hpp"

namespace lcf {

inline constexpr int kNumClasses = 3;
const char* class_name(int cls);  // vehicle / pedestrian / cyclist

struct SynthConfig {
  int n_objects = 20;
  int n_cameras = 3;
  int points_per_object = 256;
  double clutter_ratio = 0.25;  // clutter points per object surface point
  // Proposal perturbation noise.
  double noise_center = 0.25;    // sigma, meters
  double noise_size_log = 0.05;  // sigma of log size ratio
  double noise_heading = 0.10;   // sigma, radians
  // Surrogate camera / image branch.
  int image_width = 512;
  int image_height = 384;
  int image_stride = 4;  // feature-map cells are stride x stride pixels
  int image_channels = 16;  // must match the fusion C_I
  double focal = 400.0;
};

struct GtBox {
  Box7 box;
  int cls = 0;
};

struct Scene {
  PointCloud points;
  std::vector<GtBox> gt_boxes;
  std::vector<CameraModel> cameras;
  std::vector<FeatureMap> feature_maps;  // one per camera
  uint64_t seed = 0;
  SynthConfig meta;
};

// Deterministic synthetic scene: boxes drawn from class-conditioned size
// priors, surface-sampled points with intensity + elongation channels,
// uniform clutter, and cameras on a ring facing the scene center. Everything
// (boxes, points, feature maps) is a pure function of the seed and stays
// inside the voxel range. Throws "placement failure" when a box cannot be
// placed after bounded retries.
Scene generate_scene(uint64_t seed, const SynthConfig& cfg,
                     const VoxelConfig& voxel_cfg);

// Point splat grid feeding the feature renderer: per cell, mean inverse
// depth, mean intensity, and log1p(count) of the points projecting into it.
FeatureMap splat_points(const PointCloud& points, const CameraModel& cam,
                        int stride);

// Surrogate for a learned image branch: splat, blur with a fixed 3x3
// binomial kernel, and expand to `channels` with a seeded bias-free linear
// map (an empty cloud therefore renders to an all-zero map).
FeatureMap render_feature_map(const PointCloud& points,
                              const CameraModel& cam, int channels,
                              int stride, uint64_t seed);

struct Proposal {
  Box7 box;
  int cls = 0;
  double score = 0.0;  // iou_3d against the source ground-truth box
};

struct PerturbNoise {
  double center_sigma = 0.25;
  double size_log_sigma = 0.05;
  double heading_sigma = 0.10;
};

// One proposal per ground-truth box with seeded Gaussian perturbations.
std::vector<Proposal> perturb_boxes(std::span<const GtBox> gt, uint64_t seed,
                                    const PerturbNoise& noise);

}  // namespace lcf
