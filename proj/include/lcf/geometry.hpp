// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#pragma once

#include <optional>
#include <vector>

#include "lcf/core.hpp"

namespace lcf {

// Pinhole camera. `extrinsic` maps LiDAR-frame points into the camera frame
// (+z forward, +x right, +y down); `intrinsic` maps camera-frame points to
// homogeneous pixels.
struct CameraModel {
  Mat3 intrinsic = Mat3::identity();
  Mat4 extrinsic = Mat4::identity();
  int image_width = 0;
  int image_height = 0;

  double principal_x() const { return intrinsic(0, 2); }
};

// Throws if the extrinsic rotation block is not orthonormal (1e-9) or the
// image dimensions are not positive.
void validate_camera(const CameraModel& cam);

struct PixelPoint {
  double u = 0.0;  // continuous pixel column
  double v = 0.0;  // continuous pixel row
  double depth = 0.0;
};

// Projects p through intrinsic * extrinsic[0:3,:]. Absent when the depth is
// <= 1e-6 or (u, v) falls outside [0, W) x [0, H). Pixel coordinates stay
// fractional; nothing rounds before sampling.
std::optional<PixelPoint> project_point(const CameraModel& cam, const Vec3& p);

// Inverse of project_point for accepted points.
Vec3 unproject_point(const CameraModel& cam, double u, double v, double depth);

// 7-DoF upright box: center, size (l, w, h), heading about +z in (-pi, pi].
struct Box7 {
  Vec3 center;
  Vec3 size;  // l along box x, w along box y, h along box z
  double heading = 0.0;
};

// Normalizes the heading; throws on non-positive size.
Box7 make_box(const Vec3& center, const Vec3& size, double heading);

// World point -> box-canonical coordinates (origin at center, axes unrotated).
Vec3 to_canonical(const Box7& b, const Vec3& p);
Vec3 from_canonical(const Box7& b, const Vec3& q);
bool box_contains(const Box7& b, const Vec3& p, double tol = 1e-9);
inline double box_volume(const Box7& b) { return b.size.x * b.size.y * b.size.z; }

// Corner order is the bit pattern of the index: bit0 -> +l/2 when set,
// bit1 -> +w/2, bit2 -> +h/2; canonical corners are rotated by the heading
// and translated by the center.
std::array<Vec3, 8> box_corners(const Box7& b);

// Bird's-eye-view IoU of the two heading-rotated rectangles via
// Sutherland-Hodgman clipping. Zero-area rectangles give 0.
double rotated_bev_iou(const Box7& a, const Box7& b);

// BEV intersection area times z-extent overlap over the union of volumes.
double iou_3d(const Box7& a, const Box7& b);

// The u^3 proposal grid. `centers` are world-frame cell centers;
// `local_offsets` are the same points in the box-canonical frame.
struct RoiGrid {
  Box7 owner;
  int u = 0;
  std::vector<Vec3> centers;
  std::vector<Vec3> local_offsets;

  // Fixed row-major flattening: x slowest, z fastest.
  static size_t flat_index(int u, int ix, int iy, int iz) {
    return (size_t(ix) * u + iy) * u + iz;
  }
};

// Divides the box into u x u x u regular cells; cell centers sit at
// ((i + 0.5) / u - 0.5) * extent per axis in the canonical frame.
RoiGrid split_box_grid(const Box7& b, int u);

}  // namespace lcf
