// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#pragma once

#include <optional>
#include <vector>

#include "lcf/core.hpp"
#include "lcf/kernels.hpp"

namespace lcf {

// N points stored row-major as (x, y, z, extra...). Extra channels carry
// per-point measurements such as intensity and elongation.
struct PointCloud {
  size_t count = 0;
  int extra_channels = 0;
  std::vector<double> data;

  size_t row_stride() const { return 3 + size_t(extra_channels); }
  Vec3 point(size_t i) const {
    const double* r = &data[i * row_stride()];
    return {r[0], r[1], r[2]};
  }
  double extra(size_t i, int c) const {
    return data[i * row_stride() + 3 + c];
  }
  void append(const Vec3& p, std::span<const double> extras);
  void append(const Vec3& p, std::initializer_list<double> extras) {
    append(p, std::span<const double>(extras.begin(), extras.size()));
  }
};

struct VoxelConfig {
  Vec3 range_min;
  Vec3 range_max;
  Vec3 voxel_size;               // base (level 1) voxel edge lengths, meters
  std::vector<int> levels{1, 2, 4, 8};  // strictly increasing, first = 1
};

// Throws on inverted ranges, non-positive sizes, or bad level list.
void validate_voxel_config(const VoxelConfig& cfg);

struct VoxelEntry {
  std::vector<double> feature;
  Vec3 centroid;   // mean of the member points, always inside the voxel
  uint32_t count = 0;
};

// Sparse voxel grid at one stride level. Entries are stored densely in
// ascending linearized-index order (canonical regardless of input point
// order); lookup goes through an open-addressing table hashed with the
// SplitMix64 finalizer.
class SparseVoxelMap {
 public:
  SparseVoxelMap() = default;
  SparseVoxelMap(const VoxelConfig& cfg, int level);

  int level() const { return level_; }
  const std::array<int64_t, 3>& grid_dims() const { return dims_; }
  const Vec3& origin() const { return origin_; }
  const Vec3& cell_size() const { return cell_; }

  size_t size() const { return keys_.size(); }
  uint64_t key(size_t i) const { return keys_[i]; }
  const VoxelEntry& entry(size_t i) const { return entries_[i]; }
  VoxelEntry& entry(size_t i) { return entries_[i]; }

  std::array<int64_t, 3> decode(uint64_t key) const;
  uint64_t encode(int64_t ix, int64_t iy, int64_t iz) const {
    return (uint64_t(ix) * dims_[1] + uint64_t(iy)) * dims_[2] + uint64_t(iz);
  }
  // Voxel index of a point; absent outside the range.
  std::optional<uint64_t> key_of(const Vec3& p) const;
  Vec3 voxel_center(uint64_t key) const;

  std::optional<size_t> find(uint64_t key) const;
  // Hash-table association of a centroid with its voxel entry.
  const VoxelEntry* lookup(const Vec3& centroid) const;

  // Takes ownership of entries already sorted by key.
  void assign(std::vector<uint64_t> keys, std::vector<VoxelEntry> entries);

 private:
  int level_ = 1;
  std::array<int64_t, 3> dims_{0, 0, 0};
  Vec3 origin_;
  Vec3 cell_;
  std::vector<uint64_t> keys_;
  std::vector<VoxelEntry> entries_;
  std::vector<uint32_t> table_;  // power-of-two open addressing, EMPTY = ~0u
  uint64_t mask_ = 0;

  void rebuild_table();
};

// Arithmetic mean of the member positions. Throws on an empty list.
Vec3 compute_centroid(std::span<const Vec3> points);

// Drops out-of-range points, groups the rest by floor((p - range_min) /
// (voxel_size * level)), and fills count + centroid per entry. Accumulation
// runs in 64-bit over a canonically sorted point order, so the result is
// bit-identical under input permutation. Features are zero-initialized to
// `feature_channels` wide.
SparseVoxelMap voxelize(const PointCloud& points, const VoxelConfig& cfg,
                        int level, int feature_channels = 0);

// Identical to map.lookup but in free-function form.
inline const VoxelEntry* lookup_feature(const SparseVoxelMap& map,
                                        const Vec3& centroid) {
  return map.lookup(centroid);
}

// Deterministic stand-in for a learned voxel backbone. Per base voxel the
// statistics are (centroid - voxel_center, log1p(count), mean extras);
// coarser levels average the statistics of their base-level children, then
// every level applies its own seeded linear map + tanh. Requires
// "backbone.l<stride>.weight" (C_V x (4 + extras)) and ".bias" (C_V).
std::vector<SparseVoxelMap> surrogate_backbone(const PointCloud& points,
                                               const VoxelConfig& cfg,
                                               const ParamStore& params);

// Statistics width consumed by the surrogate's per-level linear map.
inline size_t surrogate_stat_width(int extra_channels) {
  return 4 + size_t(extra_channels);
}

}  // namespace lcf
