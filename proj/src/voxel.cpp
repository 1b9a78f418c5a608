// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#include "lcf/voxel.hpp"

#include <algorithm>
#include <cmath>

namespace lcf {

namespace {
constexpr uint32_t kEmptySlot = 0xFFFFFFFFu;
}

void PointCloud::append(const Vec3& p, std::span<const double> extras) {
  if (extras.size() != size_t(extra_channels))
    throw std::invalid_argument("point extra channel count mismatch");
  data.push_back(p.x);
  data.push_back(p.y);
  data.push_back(p.z);
  data.insert(data.end(), extras.begin(), extras.end());
  ++count;
}

void validate_voxel_config(const VoxelConfig& cfg) {
  if (!(cfg.range_max.x > cfg.range_min.x &&
        cfg.range_max.y > cfg.range_min.y &&
        cfg.range_max.z > cfg.range_min.z))
    throw std::invalid_argument("voxel range must be positive per axis");
  if (!(cfg.voxel_size.x > 0 && cfg.voxel_size.y > 0 && cfg.voxel_size.z > 0))
    throw std::invalid_argument("voxel size must be positive");
  if (cfg.levels.empty() || cfg.levels.front() != 1)
    throw std::invalid_argument("voxel levels must start at 1");
  for (size_t i = 1; i < cfg.levels.size(); ++i)
    if (cfg.levels[i] <= cfg.levels[i - 1])
      throw std::invalid_argument("voxel levels must be strictly increasing");
}

SparseVoxelMap::SparseVoxelMap(const VoxelConfig& cfg, int level)
    : level_(level), origin_(cfg.range_min),
      cell_(cfg.voxel_size * double(level)) {
  const Vec3 extent = cfg.range_max - cfg.range_min;
  dims_ = {int64_t(std::ceil(extent.x / cell_.x - 1e-9)),
           int64_t(std::ceil(extent.y / cell_.y - 1e-9)),
           int64_t(std::ceil(extent.z / cell_.z - 1e-9))};
  for (int64_t d : dims_)
    if (d < 1) throw std::invalid_argument("degenerate voxel grid");
  // Linearized keys must fit 62 bits with headroom for the empty sentinel.
  const long double total =
      (long double)dims_[0] * dims_[1] * dims_[2];
  if (total >= 0x1p62L)
    throw std::invalid_argument("voxel grid too large to index");
}

std::array<int64_t, 3> SparseVoxelMap::decode(uint64_t key) const {
  const int64_t iz = int64_t(key % uint64_t(dims_[2]));
  key /= uint64_t(dims_[2]);
  const int64_t iy = int64_t(key % uint64_t(dims_[1]));
  const int64_t ix = int64_t(key / uint64_t(dims_[1]));
  return {ix, iy, iz};
}

std::optional<uint64_t> SparseVoxelMap::key_of(const Vec3& p) const {
  const int64_t ix = int64_t(std::floor((p.x - origin_.x) / cell_.x));
  const int64_t iy = int64_t(std::floor((p.y - origin_.y) / cell_.y));
  const int64_t iz = int64_t(std::floor((p.z - origin_.z) / cell_.z));
  if (ix < 0 || ix >= dims_[0] || iy < 0 || iy >= dims_[1] || iz < 0 ||
      iz >= dims_[2])
    return std::nullopt;
  return encode(ix, iy, iz);
}

Vec3 SparseVoxelMap::voxel_center(uint64_t key) const {
  const auto [ix, iy, iz] = decode(key);
  return {origin_.x + (double(ix) + 0.5) * cell_.x,
          origin_.y + (double(iy) + 0.5) * cell_.y,
          origin_.z + (double(iz) + 0.5) * cell_.z};
}

void SparseVoxelMap::rebuild_table() {
  size_t cap = 16;
  while (cap < 2 * keys_.size()) cap <<= 1;
  table_.assign(cap, kEmptySlot);
  mask_ = cap - 1;
  for (size_t i = 0; i < keys_.size(); ++i) {
    uint64_t slot = mix64(keys_[i]) & mask_;
    while (table_[slot] != kEmptySlot) slot = (slot + 1) & mask_;
    table_[slot] = uint32_t(i);
  }
}

std::optional<size_t> SparseVoxelMap::find(uint64_t key) const {
  if (table_.empty()) return std::nullopt;
  uint64_t slot = mix64(key) & mask_;
  while (table_[slot] != kEmptySlot) {
    const uint32_t idx = table_[slot];
    if (keys_[idx] == key) return size_t(idx);
    slot = (slot + 1) & mask_;
  }
  return std::nullopt;
}

const VoxelEntry* SparseVoxelMap::lookup(const Vec3& centroid) const {
  const auto key = key_of(centroid);
  if (!key) return nullptr;
  const auto idx = find(*key);
  return idx ? &entries_[*idx] : nullptr;
}

void SparseVoxelMap::assign(std::vector<uint64_t> keys,
                            std::vector<VoxelEntry> entries) {
  if (keys.size() != entries.size())
    throw std::invalid_argument("key/entry count mismatch");
  keys_ = std::move(keys);
  entries_ = std::move(entries);
  rebuild_table();
}

Vec3 compute_centroid(std::span<const Vec3> points) {
  if (points.empty()) throw std::invalid_argument("empty voxel");
  Vec3 sum;
  for (const Vec3& p : points) sum += p;
  return sum / double(points.size());
}

namespace {

// Group-by skeleton shared between voxelize and the surrogate featurizer.
struct VoxelGroups {
  SparseVoxelMap map;                       // entries filled, features empty
  std::vector<std::vector<double>> extra_means;  // aligned with entries
};

VoxelGroups build_groups(const PointCloud& points, const VoxelConfig& cfg,
                         int level, bool want_extras, int feature_channels) {
  validate_voxel_config(cfg);
  VoxelGroups out;
  out.map = SparseVoxelMap(cfg, level);
  SparseVoxelMap& map = out.map;

  std::vector<std::pair<uint64_t, uint32_t>> tagged;
  tagged.reserve(points.count);
  for (size_t i = 0; i < points.count; ++i) {
    if (const auto key = map.key_of(points.point(i)))
      tagged.emplace_back(*key, uint32_t(i));
  }
  // Canonical accumulation order: voxel key first, then the full point row.
  // This makes the floating-point sums permutation-invariant bit for bit.
  const size_t stride = points.row_stride();
  std::sort(tagged.begin(), tagged.end(),
            [&](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first < b.first;
              const double* pa = &points.data[a.second * stride];
              const double* pb = &points.data[b.second * stride];
              return std::lexicographical_compare(pa, pa + stride, pb,
                                                  pb + stride);
            });

  std::vector<uint64_t> keys;
  std::vector<VoxelEntry> entries;
  const int extras = points.extra_channels;
  for (size_t i = 0; i < tagged.size();) {
    const uint64_t key = tagged[i].first;
    Vec3 sum;
    std::vector<double> extra_sum(want_extras ? extras : 0, 0.0);
    uint32_t n = 0;
    for (; i < tagged.size() && tagged[i].first == key; ++i, ++n) {
      const size_t idx = tagged[i].second;
      sum += points.point(idx);
      for (size_t c = 0; c < extra_sum.size(); ++c)
        extra_sum[c] += points.extra(idx, int(c));
    }
    VoxelEntry e;
    e.count = n;
    e.centroid = sum / double(n);
    e.feature.assign(size_t(feature_channels), 0.0);
    keys.push_back(key);
    entries.push_back(std::move(e));
    if (want_extras) {
      for (double& v : extra_sum) v /= double(n);
      out.extra_means.push_back(std::move(extra_sum));
    }
  }
  map.assign(std::move(keys), std::move(entries));
  return out;
}

}  // namespace

SparseVoxelMap voxelize(const PointCloud& points, const VoxelConfig& cfg,
                        int level, int feature_channels) {
  return build_groups(points, cfg, level, false, feature_channels).map;
}

std::vector<SparseVoxelMap> surrogate_backbone(const PointCloud& points,
                                               const VoxelConfig& cfg,
                                               const ParamStore& params) {
  validate_voxel_config(cfg);
  const size_t stat_w = surrogate_stat_width(points.extra_channels);

  // Base-level statistics feed every level; centroids and counts are still
  // recomputed from raw points per level by voxelize.
  const VoxelGroups base = build_groups(points, cfg, 1, true, 0);
  std::vector<std::vector<double>> base_stats(base.map.size());
  for (size_t i = 0; i < base.map.size(); ++i) {
    const VoxelEntry& e = base.map.entry(i);
    const Vec3 off = e.centroid - base.map.voxel_center(base.map.key(i));
    auto& s = base_stats[i];
    s = {off.x, off.y, off.z, std::log1p(double(e.count))};
    s.insert(s.end(), base.extra_means[i].begin(), base.extra_means[i].end());
  }

  std::vector<SparseVoxelMap> maps;
  maps.reserve(cfg.levels.size());
  for (const int level : cfg.levels) {
    const Tensor& w = params.at("backbone.l" + std::to_string(level) +
                                    ".weight");
    const Tensor& b = params.at("backbone.l" + std::to_string(level) +
                                    ".bias");
    if (w.shape.size() != 2 || w.shape[1] != stat_w ||
        w.shape[0] != b.numel())
      throw std::runtime_error("surrogate backbone parameter shape mismatch");
    const size_t c_v = w.shape[0];

    SparseVoxelMap map = voxelize(points, cfg, level, int(c_v));
    // Aggregate base-level children (base index / level per axis) into
    // their coarse voxel, base entries visited in canonical key order.
    std::vector<std::vector<double>> agg(map.size(),
                                         std::vector<double>(stat_w, 0.0));
    std::vector<uint32_t> child_count(map.size(), 0);
    for (size_t i = 0; i < base.map.size(); ++i) {
      const auto [bx, by, bz] = base.map.decode(base.map.key(i));
      const auto slot = map.find(map.encode(bx / level, by / level,
                                            bz / level));
      if (!slot)
        throw std::runtime_error("surrogate backbone: orphan child voxel");
      for (size_t c = 0; c < stat_w; ++c) agg[*slot][c] += base_stats[i][c];
      ++child_count[*slot];
    }
    for (size_t i = 0; i < map.size(); ++i) {
      auto& s = agg[i];
      for (double& v : s) v /= double(child_count[i]);
      std::vector<double> f = linear(s, w, b.data);
      for (double& v : f) v = quantize(std::tanh(v));
      map.entry(i).feature = std::move(f);
    }
    maps.push_back(std::move(map));
  }
  return maps;
}

}  // namespace lcf
