// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#include "lcf/synth.hpp"

#include <algorithm>
#include <cmath>

namespace lcf {

namespace {

struct ClassPrior {
  const char* name;
  Vec3 mean_size;  // (l, w, h) meters
  double size_log_sigma;
};

// Scale ratios mirror the vehicle / pedestrian / cyclist split.
constexpr ClassPrior kPriors[kNumClasses] = {
    {"vehicle", {4.6, 1.95, 1.70}, 0.08},
    {"pedestrian", {0.90, 0.85, 1.75}, 0.06},
    {"cyclist", {1.76, 0.80, 1.73}, 0.07},
};

constexpr int kExtraChannels = 2;  // intensity, elongation

Vec3 sample_on_surface(SplitMix64& rng, const Box7& box) {
  const double l = box.size.x, w = box.size.y, h = box.size.z;
  const double areas[3] = {w * h, l * h, l * w};  // +-x, +-y, +-z faces
  const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
  double pick = rng.uniform(0.0, total);
  int axis = 0;
  double sign = 1.0;
  for (int face = 0; face < 6; ++face) {
    axis = face / 2;
    sign = face % 2 == 0 ? -1.0 : 1.0;
    if (pick < areas[axis]) break;
    pick -= areas[axis];
  }
  Vec3 q{rng.uniform(-0.5, 0.5) * l, rng.uniform(-0.5, 0.5) * w,
         rng.uniform(-0.5, 0.5) * h};
  if (axis == 0) q.x = sign * 0.5 * l;
  if (axis == 1) q.y = sign * 0.5 * w;
  if (axis == 2) q.z = sign * 0.5 * h;
  return from_canonical(box, q);
}

CameraModel ring_camera(double angle, double radius, const Vec3& mid,
                        const SynthConfig& cfg) {
  const Vec3 eye{mid.x + radius * std::cos(angle),
                 mid.y + radius * std::sin(angle), mid.z + 1.0};
  const Vec3 target = mid;
  const Vec3 fwd = (target - eye).normalized();
  const Vec3 up{0.0, 0.0, 1.0};
  const Vec3 right = fwd.cross(up).normalized();
  const Vec3 down = fwd.cross(right);
  Mat3 rot;
  rot.m = {right.x, right.y, right.z, down.x, down.y,
           down.z, fwd.x, fwd.y, fwd.z};
  CameraModel cam;
  cam.intrinsic = Mat3::identity();
  cam.intrinsic(0, 0) = cfg.focal;
  cam.intrinsic(1, 1) = cfg.focal;
  cam.intrinsic(0, 2) = cfg.image_width / 2.0;
  cam.intrinsic(1, 2) = cfg.image_height / 2.0;
  cam.extrinsic = Mat4::from_rt(rot, rot * eye * -1.0);
  cam.image_width = cfg.image_width;
  cam.image_height = cfg.image_height;
  validate_camera(cam);
  return cam;
}

bool box_inside_range(const Box7& box, const VoxelConfig& vc) {
  for (const Vec3& corner : box_corners(box)) {
    if (corner.x < vc.range_min.x || corner.x >= vc.range_max.x ||
        corner.y < vc.range_min.y || corner.y >= vc.range_max.y ||
        corner.z < vc.range_min.z || corner.z >= vc.range_max.z)
      return false;
  }
  return true;
}

}  // namespace

const char* class_name(int cls) {
  if (cls < 0 || cls >= kNumClasses) return "unknown";
  return kPriors[cls].name;
}

Scene generate_scene(uint64_t seed, const SynthConfig& cfg,
                     const VoxelConfig& voxel_cfg) {
  validate_voxel_config(voxel_cfg);
  Scene scene;
  scene.seed = seed;
  scene.meta = cfg;
  scene.points.extra_channels = kExtraChannels;

  const Vec3 extent = voxel_cfg.range_max - voxel_cfg.range_min;
  const Vec3 mid = (voxel_cfg.range_max + voxel_cfg.range_min) * 0.5;
  const double place_x = 0.30 * extent.x;
  const double place_y = 0.30 * extent.y;

  SplitMix64 box_rng(seed, "scene.boxes");
  for (int i = 0; i < cfg.n_objects; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const int cls = int(box_rng.next_below(kNumClasses));
      const ClassPrior& prior = kPriors[cls];
      const Vec3 size{
          prior.mean_size.x * std::exp(prior.size_log_sigma * box_rng.next_normal()),
          prior.mean_size.y * std::exp(prior.size_log_sigma * box_rng.next_normal()),
          prior.mean_size.z * std::exp(prior.size_log_sigma * box_rng.next_normal())};
      const Vec3 center{mid.x + box_rng.uniform(-0.5, 0.5) * place_x,
                        mid.y + box_rng.uniform(-0.5, 0.5) * place_y,
                        voxel_cfg.range_min.z + 0.5 * size.z +
                            box_rng.uniform(0.05, 0.25)};
      const Box7 box =
          make_box(center, size, box_rng.uniform(-kPi, kPi));
      if (!box_inside_range(box, voxel_cfg)) continue;
      bool overlaps = false;
      for (const GtBox& other : scene.gt_boxes)
        if (rotated_bev_iou(box, other.box) > 1e-9) {
          overlaps = true;
          break;
        }
      if (overlaps) continue;
      scene.gt_boxes.push_back({box, cls});
      placed = true;
    }
    if (!placed) throw std::runtime_error("placement failure");
  }

  SplitMix64 point_rng(seed, "scene.points");
  for (const GtBox& gt : scene.gt_boxes) {
    for (int i = 0; i < cfg.points_per_object; ++i) {
      const Vec3 p = sample_on_surface(point_rng, gt.box);
      const double extras[kExtraChannels] = {point_rng.next_double(),
                                             point_rng.uniform(0.0, 0.2)};
      scene.points.append(p, extras);
    }
  }
  const size_t n_clutter = size_t(std::llround(
      cfg.clutter_ratio * double(cfg.n_objects) * cfg.points_per_object));
  SplitMix64 clutter_rng(seed, "scene.clutter");
  for (size_t i = 0; i < n_clutter; ++i) {
    const Vec3 p{
        clutter_rng.uniform(voxel_cfg.range_min.x, voxel_cfg.range_max.x),
        clutter_rng.uniform(voxel_cfg.range_min.y, voxel_cfg.range_max.y),
        clutter_rng.uniform(voxel_cfg.range_min.z, voxel_cfg.range_max.z)};
    const double extras[kExtraChannels] = {clutter_rng.next_double(),
                                           clutter_rng.uniform(0.0, 0.2)};
    scene.points.append(p, extras);
  }

  const double ring_radius = 0.45 * std::min(extent.x, extent.y);
  SplitMix64 cam_rng(seed, "scene.cameras");
  const double phase = cam_rng.uniform(0.0, 2.0 * kPi);
  for (int t = 0; t < cfg.n_cameras; ++t) {
    const double angle = phase + 2.0 * kPi * t / std::max(1, cfg.n_cameras);
    scene.cameras.push_back(ring_camera(angle, ring_radius, mid, cfg));
  }
  for (int t = 0; t < cfg.n_cameras; ++t) {
    scene.feature_maps.push_back(
        render_feature_map(scene.points, scene.cameras[t], cfg.image_channels,
                           cfg.image_stride, mix64(seed ^ uint64_t(t))));
  }
  return scene;
}

FeatureMap splat_points(const PointCloud& points, const CameraModel& cam,
                        int stride) {
  const int w = cam.image_width / stride;
  const int h = cam.image_height / stride;
  FeatureMap fm = FeatureMap::zeros(h, w, 3, stride);
  std::vector<uint32_t> counts(size_t(h) * w, 0);
  std::vector<double> inv_depth(counts.size(), 0.0);
  std::vector<double> intensity(counts.size(), 0.0);
  for (size_t i = 0; i < points.count; ++i) {
    const auto px = project_point(cam, points.point(i));
    if (!px) continue;
    const int ix = std::min(int(px->u) / stride, w - 1);
    const int iy = std::min(int(px->v) / stride, h - 1);
    const size_t cell = size_t(iy) * w + ix;
    ++counts[cell];
    inv_depth[cell] += 1.0 / px->depth;
    if (points.extra_channels > 0) intensity[cell] += points.extra(i, 0);
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t cell = size_t(y) * w + x;
      if (counts[cell] == 0) continue;
      fm.at(y, x, 0) = inv_depth[cell] / counts[cell];
      fm.at(y, x, 1) = intensity[cell] / counts[cell];
      fm.at(y, x, 2) = std::log1p(double(counts[cell]));
    }
  return fm;
}

FeatureMap render_feature_map(const PointCloud& points,
                              const CameraModel& cam, int channels,
                              int stride, uint64_t seed) {
  const FeatureMap splat = splat_points(points, cam, stride);

  // 3x3 binomial blur, zero padding.
  static constexpr double kKernel[3][3] = {
      {1 / 16.0, 2 / 16.0, 1 / 16.0},
      {2 / 16.0, 4 / 16.0, 2 / 16.0},
      {1 / 16.0, 2 / 16.0, 1 / 16.0}};
  FeatureMap blurred =
      FeatureMap::zeros(splat.height, splat.width, 3, stride);
  for (int y = 0; y < splat.height; ++y)
    for (int x = 0; x < splat.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= splat.height || xx < 0 || xx >= splat.width)
              continue;
            acc += kKernel[dy + 1][dx + 1] * splat.at(yy, xx, c);
          }
        blurred.at(y, x, c) = acc;
      }

  // Channel expansion by a seeded bias-free linear map.
  SplitMix64 rng(seed, "render.expand");
  std::vector<double> weights(size_t(channels) * 3);
  for (double& v : weights) v = rng.uniform(-1.0, 1.0);
  FeatureMap out =
      FeatureMap::zeros(splat.height, splat.width, channels, stride);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int b = 0; b < 3; ++b)
          acc += weights[size_t(c) * 3 + b] * blurred.at(y, x, b);
        out.at(y, x, c) = quantize(acc);
      }
  return out;
}

std::vector<Proposal> perturb_boxes(std::span<const GtBox> gt, uint64_t seed,
                                    const PerturbNoise& noise) {
  if (noise.center_sigma < 0 || noise.size_log_sigma < 0 ||
      noise.heading_sigma < 0)
    throw std::invalid_argument("perturbation sigmas must be >= 0");
  SplitMix64 rng(seed, "proposals");
  std::vector<Proposal> out;
  out.reserve(gt.size());
  for (const GtBox& g : gt) {
    const Vec3 center{g.box.center.x + noise.center_sigma * rng.next_normal(),
                      g.box.center.y + noise.center_sigma * rng.next_normal(),
                      g.box.center.z + noise.center_sigma * rng.next_normal()};
    const Vec3 size{
        g.box.size.x * std::exp(noise.size_log_sigma * rng.next_normal()),
        g.box.size.y * std::exp(noise.size_log_sigma * rng.next_normal()),
        g.box.size.z * std::exp(noise.size_log_sigma * rng.next_normal())};
    const double heading =
        g.box.heading + noise.heading_sigma * rng.next_normal();
    Proposal p;
    p.box = make_box(center, size, heading);
    p.cls = g.cls;
    p.score = iou_3d(p.box, g.box);
    out.push_back(p);
  }
  return out;
}

}  // namespace lcf
