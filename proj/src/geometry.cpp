// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#include "lcf/geometry.hpp"

#include <algorithm>

namespace lcf {

void validate_camera(const CameraModel& cam) {
  if (cam.image_width <= 0 || cam.image_height <= 0)
    throw std::invalid_argument("camera image dimensions must be positive");
  const Mat3 r = cam.extrinsic.rotation();
  const Mat3 rtr = r.transposed() * r;
  const Mat3 id = Mat3::identity();
  for (int i = 0; i < 9; ++i)
    if (std::abs(rtr.m[i] - id.m[i]) > 1e-9)
      throw std::invalid_argument("camera extrinsic rotation not orthonormal");
}

std::optional<PixelPoint> project_point(const CameraModel& cam, const Vec3& p) {
  const Vec3 pc = cam.extrinsic.apply(p);
  const Vec3 h = cam.intrinsic * pc;
  if (h.z <= 1e-6) return std::nullopt;
  const double u = h.x / h.z;
  const double v = h.y / h.z;
  if (u < 0.0 || u >= cam.image_width || v < 0.0 || v >= cam.image_height)
    return std::nullopt;
  return PixelPoint{u, v, h.z};
}

Vec3 unproject_point(const CameraModel& cam, double u, double v, double depth) {
  const Vec3 pc = cam.intrinsic.inverse() * Vec3{u * depth, v * depth, depth};
  return cam.extrinsic.rigid_inverse().apply(pc);
}

Box7 make_box(const Vec3& center, const Vec3& size, double heading) {
  if (!(size.x > 0.0 && size.y > 0.0 && size.z > 0.0))
    throw std::invalid_argument("box size must be positive");
  return Box7{center, size, normalize_angle(heading)};
}

Vec3 to_canonical(const Box7& b, const Vec3& p) {
  const Vec3 d = p - b.center;
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  return {c * d.x + s * d.y, -s * d.x + c * d.y, d.z};
}

Vec3 from_canonical(const Box7& b, const Vec3& q) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  return Vec3{c * q.x - s * q.y, s * q.x + c * q.y, q.z} + b.center;
}

bool box_contains(const Box7& b, const Vec3& p, double tol) {
  const Vec3 q = to_canonical(b, p);
  return std::abs(q.x) <= 0.5 * b.size.x + tol &&
         std::abs(q.y) <= 0.5 * b.size.y + tol &&
         std::abs(q.z) <= 0.5 * b.size.z + tol;
}

std::array<Vec3, 8> box_corners(const Box7& b) {
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i) {
    const Vec3 q{(i & 1 ? 0.5 : -0.5) * b.size.x,
                 (i & 2 ? 0.5 : -0.5) * b.size.y,
                 (i & 4 ? 0.5 : -0.5) * b.size.z};
    out[i] = from_canonical(b, q);
  }
  return out;
}

namespace {

// BEV rectangle as a CCW polygon.
using Poly = std::vector<Vec2>;

Poly bev_rectangle(const Box7& b) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double hl = 0.5 * b.size.x, hw = 0.5 * b.size.y;
  Poly poly(4);
  const double sx[4] = {+hl, -hl, -hl, +hl};
  const double sy[4] = {+hw, +hw, -hw, -hw};
  for (int i = 0; i < 4; ++i)
    poly[i] = {b.center.x + c * sx[i] - s * sy[i],
               b.center.y + s * sx[i] + c * sy[i]};
  return poly;
}

double polygon_area(const Poly& p) {
  double a = 0.0;
  for (size_t i = 0, n = p.size(); i < n; ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % n];
    a += u.x * v.y - v.x * u.y;
  }
  return 0.5 * a;
}

// Signed distance of p to the left of edge a->b (positive inside for CCW).
inline double edge_side(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

// Clips `subject` against one CCW edge of the clip polygon.
Poly clip_edge(const Poly& subject, const Vec2& a, const Vec2& b) {
  Poly out;
  out.reserve(subject.size() + 1);
  const size_t n = subject.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& cur = subject[i];
    const Vec2& prev = subject[(i + n - 1) % n];
    const double dc = edge_side(a, b, cur);
    const double dp = edge_side(a, b, prev);
    if (dc >= 0.0) {
      if (dp < 0.0) {
        const double t = dp / (dp - dc);
        out.push_back({prev.x + t * (cur.x - prev.x),
                       prev.y + t * (cur.y - prev.y)});
      }
      out.push_back(cur);
    } else if (dp >= 0.0) {
      const double t = dp / (dp - dc);
      out.push_back({prev.x + t * (cur.x - prev.x),
                     prev.y + t * (cur.y - prev.y)});
    }
  }
  return out;
}

// Orders the pair deterministically so the result is exactly symmetric.
bool box_before(const Box7& a, const Box7& b) {
  const double ka[7] = {a.center.x, a.center.y, a.center.z,
                        a.size.x, a.size.y, a.size.z, a.heading};
  const double kb[7] = {b.center.x, b.center.y, b.center.z,
                        b.size.x, b.size.y, b.size.z, b.heading};
  return std::lexicographical_compare(ka, ka + 7, kb, kb + 7);
}

double bev_intersection_area(const Box7& a, const Box7& b) {
  const Box7& subject = box_before(a, b) ? a : b;
  const Box7& clipper = box_before(a, b) ? b : a;
  Poly poly = bev_rectangle(subject);
  const Poly clip = bev_rectangle(clipper);
  for (size_t i = 0; i < clip.size() && !poly.empty(); ++i)
    poly = clip_edge(poly, clip[i], clip[(i + 1) % clip.size()]);
  if (poly.size() < 3) return 0.0;
  return std::abs(polygon_area(poly));
}

}  // namespace

double rotated_bev_iou(const Box7& a, const Box7& b) {
  const double area_a = a.size.x * a.size.y;
  const double area_b = b.size.x * b.size.y;
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box7& a, const Box7& b) {
  const double va = box_volume(a);
  const double vb = box_volume(b);
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  const double z_lo = std::max(a.center.z - 0.5 * a.size.z,
                               b.center.z - 0.5 * b.size.z);
  const double z_hi = std::min(a.center.z + 0.5 * a.size.z,
                               b.center.z + 0.5 * b.size.z);
  const double dz = z_hi - z_lo;
  if (dz <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dz;
  const double uni = va + vb - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

RoiGrid split_box_grid(const Box7& b, int u) {
  if (u < 1) throw std::invalid_argument("grid resolution must be >= 1");
  RoiGrid grid;
  grid.owner = b;
  grid.u = u;
  grid.centers.resize(size_t(u) * u * u);
  grid.local_offsets.resize(grid.centers.size());
  for (int ix = 0; ix < u; ++ix)
    for (int iy = 0; iy < u; ++iy)
      for (int iz = 0; iz < u; ++iz) {
        const Vec3 q{((ix + 0.5) / u - 0.5) * b.size.x,
                     ((iy + 0.5) / u - 0.5) * b.size.y,
                     ((iz + 0.5) / u - 0.5) * b.size.z};
        const size_t j = RoiGrid::flat_index(u, ix, iy, iz);
        grid.local_offsets[j] = q;
        grid.centers[j] = from_canonical(b, q);
      }
  return grid;
}

}  // namespace lcf
