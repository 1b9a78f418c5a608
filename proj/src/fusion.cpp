// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#include "lcf/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace lcf {

void validate_fusion_config(const FusionConfig& cfg) {
  if (cfg.u < 1) throw std::invalid_argument("grid resolution must be >= 1");
  if (cfg.heads < 1 || cfg.samples < 1)
    throw std::invalid_argument("heads and samples must be >= 1");
  if (!(cfg.tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (cfg.alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
  if (cfg.pool_neighbors < 1)
    throw std::invalid_argument("pool_neighbors must be >= 1");
  if (cfg.c_voxel < 1 || cfg.c_image < 1 || cfg.head_hidden < 1)
    throw std::invalid_argument("channel widths must be positive");
  if (cfg.c_voxel % cfg.heads != 0)
    throw std::invalid_argument("c_voxel must divide by head count");
  if (cfg.gof_levels.empty())
    throw std::invalid_argument("gof_levels must not be empty");
  if (!(cfg.conf_ramp_hi > cfg.conf_ramp_lo))
    throw std::invalid_argument("confidence ramp must be increasing");
}

std::vector<ParamSpec> fusion_param_spec(const FusionConfig& cfg,
                                         std::span<const int> backbone_levels,
                                         int point_extra_channels) {
  validate_fusion_config(cfg);
  std::vector<ParamSpec> specs;
  const size_t c = size_t(cfg.c_voxel);
  const size_t ci = size_t(cfg.c_image);
  const size_t stats = surrogate_stat_width(point_extra_channels);

  for (const int level : backbone_levels) {
    const std::string p = "backbone.l" + std::to_string(level);
    specs.push_back({p + ".weight", {c, stats}});
    specs.push_back({p + ".bias", {c}});
  }

  for (const int level : cfg.gof_levels) {
    const std::string p = "gof.l" + std::to_string(level);
    deform_attn_param_spec(specs, p + ".attn", cfg.heads, cfg.samples, c, ci);
    ffn_param_spec(specs, p + ".reduce", 2 * c, c);
  }
  specs.push_back({"pool.weight", {c, cfg.gof_levels.size() * c}});
  specs.push_back({"pool.bias", {c}});

  ffn_param_spec(specs, "pie", pie_input_width(cfg.pie_mode), c);

  deform_attn_param_spec(specs, "lof.attn", cfg.heads, cfg.samples, c, ci);
  ffn_param_spec(specs, "lof.reduce", 2 * c, c);

  self_attn_param_spec(specs, "fda.attn", c);
  ffn_param_spec(specs, "fda.rcb", c, c);
  specs.push_back({"fda.rcb.ln.gamma", {c}});
  specs.push_back({"fda.rcb.ln.beta", {c}});

  const size_t flat = size_t(cfg.u) * cfg.u * cfg.u * c;
  const size_t hidden = size_t(cfg.head_hidden);
  specs.push_back({"refine.conf.fc1.weight", {hidden, flat}});
  specs.push_back({"refine.conf.fc1.bias", {hidden}});
  specs.push_back({"refine.conf.fc2.weight", {1, hidden}});
  specs.push_back({"refine.conf.fc2.bias", {1}});
  specs.push_back({"refine.reg.fc1.weight", {hidden, flat}});
  specs.push_back({"refine.reg.fc1.bias", {hidden}});
  // Bias-free and zero-initialized: a fresh head is an identity refinement.
  specs.push_back({"refine.reg.offset", {7, hidden}});
  return specs;
}

std::optional<CameraHit> select_camera(std::span<const CameraModel> cams,
                                       const Vec3& p) {
  std::optional<CameraHit> best;
  double best_off = 0.0;
  for (size_t i = 0; i < cams.size(); ++i) {
    const auto px = project_point(cams[i], p);
    if (!px) continue;
    const double off = std::abs(px->u - cams[i].principal_x());
    if (!best || off < best_off) {
      best = CameraHit{int(i), *px};
      best_off = off;
    }
  }
  return best;
}

namespace {

// Shared CDF/GDF step: deformable attention on the selected camera followed
// by the concat + FFN channel reduction. Out-of-view queries fuse against a
// zero image vector so the reduce path stays uniform.
std::vector<double> fuse_one(std::span<const double> query,
                             std::span<const FeatureMap> fms,
                             std::span<const CameraModel> cams, const Vec3& p,
                             const DeformAttnParams& attn,
                             const FfnParams& reduce) {
  std::vector<double> attended(query.size(), 0.0);
  if (const auto hit = select_camera(cams, p)) {
    attended = deform_attn(query, fms[hit->camera],
                           Vec2{hit->pixel.u, hit->pixel.v}, attn);
  }
  return concat_reduce(query, attended, reduce);
}

}  // namespace

std::vector<SparseVoxelMap> global_fuse(
    const std::vector<SparseVoxelMap>& maps,
    std::span<const FeatureMap> fms, std::span<const CameraModel> cams,
    const ParamStore& params, const FusionConfig& cfg) {
  if (fms.size() != cams.size())
    throw std::invalid_argument("global_fuse: camera/feature-map mismatch");
  std::vector<SparseVoxelMap> fused;
  fused.reserve(cfg.gof_levels.size());
  for (const int level : cfg.gof_levels) {
    const auto it = std::find_if(
        maps.begin(), maps.end(),
        [level](const SparseVoxelMap& m) { return m.level() == level; });
    if (it == maps.end())
      throw std::invalid_argument("global_fuse: missing voxel level " +
                                  std::to_string(level));
    const std::string prefix = "gof.l" + std::to_string(level);
    const DeformAttnParams attn = DeformAttnParams::bind(
        params, prefix + ".attn", cfg.heads, cfg.samples);
    const FfnParams reduce = FfnParams::bind(params, prefix + ".reduce");

    for (size_t i = 0; i < it->size(); ++i)
      if (it->entry(i).feature.size() != size_t(cfg.c_voxel))
        throw std::runtime_error("global_fuse: voxel features unset");

    SparseVoxelMap out = *it;
    parallel_for(out.size(), [&](size_t i) {
      const VoxelEntry& e = it->entry(i);
      out.entry(i).feature =
          fuse_one(e.feature, fms, cams, e.centroid, attn, reduce);
    });
    fused.push_back(std::move(out));
  }
  return fused;
}

PooledGrid roi_grid_pool(const std::vector<SparseVoxelMap>& fused,
                         const RoiGrid& grid, const ParamStore& params,
                         const FusionConfig& cfg) {
  const size_t c = size_t(cfg.c_voxel);
  const Tensor& w = params.at("pool.weight");
  const Tensor& b = params.at("pool.bias");
  if (w.shape[1] != fused.size() * c)
    throw std::runtime_error("roi_grid_pool: projection shape mismatch");

  PooledGrid out;
  out.features.assign(grid.centers.size() * c, 0.0);
  out.valid.assign(grid.centers.size(), 0);

  parallel_for(grid.centers.size(), [&](size_t j) {
    const Vec3& g = grid.centers[j];
    std::vector<double> cat(fused.size() * c, 0.0);
    bool any = false;
    for (size_t li = 0; li < fused.size(); ++li) {
      const SparseVoxelMap& map = fused[li];
      const Vec3 cell = map.cell_size();
      const double radius = cfg.pool_radius_factor * cell.norm();

      // Candidate voxels: every cell whose box intersects the query ball
      // (a centroid inside the ball always lies in such a cell).
      const auto lo = Vec3{g.x - radius, g.y - radius, g.z - radius};
      const auto hi = Vec3{g.x + radius, g.y + radius, g.z + radius};
      const auto& dims = map.grid_dims();
      const Vec3 org = map.origin();
      int64_t x0 = int64_t(std::floor((lo.x - org.x) / cell.x));
      int64_t y0 = int64_t(std::floor((lo.y - org.y) / cell.y));
      int64_t z0 = int64_t(std::floor((lo.z - org.z) / cell.z));
      int64_t x1 = int64_t(std::floor((hi.x - org.x) / cell.x));
      int64_t y1 = int64_t(std::floor((hi.y - org.y) / cell.y));
      int64_t z1 = int64_t(std::floor((hi.z - org.z) / cell.z));
      x0 = std::max<int64_t>(x0, 0);
      y0 = std::max<int64_t>(y0, 0);
      z0 = std::max<int64_t>(z0, 0);
      x1 = std::min(x1, dims[0] - 1);
      y1 = std::min(y1, dims[1] - 1);
      z1 = std::min(z1, dims[2] - 1);

      std::vector<std::pair<double, size_t>> hits;  // (distance, entry)
      for (int64_t ix = x0; ix <= x1; ++ix)
        for (int64_t iy = y0; iy <= y1; ++iy)
          for (int64_t iz = z0; iz <= z1; ++iz) {
            const auto idx = map.find(map.encode(ix, iy, iz));
            if (!idx) continue;
            const double d = (map.entry(*idx).centroid - g).norm();
            if (d <= radius) hits.emplace_back(d, *idx);
          }
      if (hits.empty()) continue;
      any = true;
      std::sort(hits.begin(), hits.end(),
                [&](const auto& a, const auto& b) {
                  if (a.first != b.first) return a.first < b.first;
                  return map.key(a.second) < map.key(b.second);
                });
      if (hits.size() > size_t(cfg.pool_neighbors))
        hits.resize(size_t(cfg.pool_neighbors));

      // Inverse-distance weights, normalized before accumulation so a lone
      // neighbor passes through with weight exactly 1.
      std::vector<double> weights(hits.size());
      double wsum = 0.0;
      for (size_t h = 0; h < hits.size(); ++h) {
        weights[h] = 1.0 / (hits[h].first + 1e-9);
        wsum += weights[h];
      }
      std::vector<double> acc(c, 0.0);
      for (size_t h = 0; h < hits.size(); ++h) {
        const double wgt = weights[h] / wsum;
        const std::vector<double>& f = map.entry(hits[h].second).feature;
        for (size_t ch = 0; ch < c; ++ch) acc[ch] += wgt * f[ch];
      }
      for (size_t ch = 0; ch < c; ++ch) cat[li * c + ch] = quantize(acc[ch]);
    }
    if (!any) return;  // zero feature, mask stays cleared
    out.valid[j] = 1;
    const std::vector<double> proj = linear(cat, w, b.data);
    std::copy(proj.begin(), proj.end(), out.features.begin() + j * c);
  });
  return out;
}

PieResult pie_encode(const Box7& box, const RoiGrid& grid,
                     const PointCloud& points, const ParamStore& params,
                     const FusionConfig& cfg) {
  const int u = grid.u;
  const size_t cells = grid.centers.size();
  PieResult out;
  out.counts.assign(cells, 0);
  out.rel_centroids.assign(cells, Vec3{});

  std::vector<Vec3> sums(cells, Vec3{});
  for (size_t i = 0; i < points.count; ++i) {
    const Vec3 p = points.point(i);
    if (!box_contains(box, p)) continue;
    const Vec3 q = to_canonical(box, p);
    const auto cell_of = [u](double t, double extent) {
      const int i = int(std::floor((t / extent + 0.5) * u));
      return std::clamp(i, 0, u - 1);
    };
    const size_t j = RoiGrid::flat_index(u, cell_of(q.x, box.size.x),
                                         cell_of(q.y, box.size.y),
                                         cell_of(q.z, box.size.z));
    ++out.counts[j];
    sums[j] += q;
  }

  const FfnParams mlp = FfnParams::bind(params, "pie");
  const size_t in_w = pie_input_width(cfg.pie_mode);
  const size_t c = size_t(cfg.c_voxel);
  out.features.assign(cells * c, 0.0);
  std::vector<double> input(in_w);
  for (size_t j = 0; j < cells; ++j) {
    if (out.counts[j] > 0)
      out.rel_centroids[j] =
          sums[j] / double(out.counts[j]) - grid.local_offsets[j];
    const Vec3& gamma = grid.local_offsets[j];
    input[0] = gamma.x;
    input[1] = gamma.y;
    input[2] = gamma.z;
    input[3] = box.center.x;
    input[4] = box.center.y;
    input[5] = box.center.z;
    input[6] = std::log(double(out.counts[j]) + cfg.tau);
    if (cfg.pie_mode == PieMode::XYZ_D_R) {
      input[7] = out.rel_centroids[j].x;
      input[8] = out.rel_centroids[j].y;
      input[9] = out.rel_centroids[j].z;
    }
    const std::vector<double> f = ffn(input, mlp);
    std::copy(f.begin(), f.end(), out.features.begin() + j * c);
  }
  return out;
}

std::vector<double> local_fuse(const RoiGrid& grid,
                               std::span<const double> pie_features,
                               std::span<const FeatureMap> fms,
                               std::span<const CameraModel> cams,
                               const ParamStore& params,
                               const FusionConfig& cfg) {
  if (fms.size() != cams.size())
    throw std::invalid_argument("local_fuse: camera/feature-map mismatch");
  const size_t c = size_t(cfg.c_voxel);
  if (pie_features.size() != grid.centers.size() * c)
    throw std::invalid_argument("local_fuse: PIE feature size mismatch");
  const DeformAttnParams attn =
      DeformAttnParams::bind(params, "lof.attn", cfg.heads, cfg.samples);
  const FfnParams reduce = FfnParams::bind(params, "lof.reduce");

  std::vector<double> out(pie_features.size(), 0.0);
  parallel_for(grid.centers.size(), [&](size_t j) {
    const std::span<const double> query = pie_features.subspan(j * c, c);
    const std::vector<double> fusedj =
        fuse_one(query, fms, cams, grid.centers[j], attn, reduce);
    std::copy(fusedj.begin(), fusedj.end(), out.begin() + j * c);
  });
  return out;
}

std::vector<double> fda_aggregate(ProposalFeatures& pf,
                                  const ParamStore& params,
                                  const FusionConfig& cfg) {
  const size_t n = pf.grid_size();
  const size_t c = size_t(pf.channels);
  if (pf.f_pie.size() != n * c || pf.f_local.size() != n * c ||
      pf.f_global.size() != n * c || pf.valid.size() != n)
    throw std::invalid_argument("fda_aggregate: feature size mismatch");

  pf.f_sum.resize(n * c);
  for (size_t i = 0; i < n * c; ++i)
    pf.f_sum[i] = pf.f_pie[i] + pf.f_local[i] + pf.f_global[i];

  const bool any_valid =
      std::any_of(pf.valid.begin(), pf.valid.end(), [](uint8_t v) { return v; });
  if (!cfg.enable_fda || !any_valid) {
    return pf.f_sum;  // degenerate proposal: flatten F_S directly
  }

  std::vector<std::vector<double>> tokens(n);
  for (size_t j = 0; j < n; ++j)
    tokens[j].assign(pf.f_sum.begin() + j * c, pf.f_sum.begin() + (j + 1) * c);
  const SelfAttnParams attn = SelfAttnParams::bind(params, "fda.attn");
  std::vector<std::vector<double>> mixed =
      self_attn_layer(tokens, pf.valid, attn);

  const FfnParams rcb = FfnParams::bind(params, "fda.rcb");
  const Tensor& ln_g = params.at("fda.rcb.ln.gamma");
  const Tensor& ln_b = params.at("fda.rcb.ln.beta");
  std::vector<double> flat(n * c);
  for (size_t j = 0; j < n; ++j) {
    if (pf.valid[j]) {
      const std::vector<double> f = ffn(mixed[j], rcb);
      std::vector<double> y(c);
      for (size_t ch = 0; ch < c; ++ch) y[ch] = mixed[j][ch] + f[ch];
      mixed[j] = layer_norm(y, ln_g.data, ln_b.data);
    }
    std::copy(mixed[j].begin(), mixed[j].end(), flat.begin() + j * c);
  }
  return flat;
}

namespace {

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

inline double bev_diagonal(const Box7& b) {
  return std::sqrt(b.size.x * b.size.x + b.size.y * b.size.y);
}

}  // namespace

Refinement refine(std::span<const double> flattened, const Box7& proposal,
                  const ParamStore& params) {
  for (double v : flattened)
    if (!std::isfinite(v))
      throw std::invalid_argument("refine: non-finite input feature");

  const std::vector<double> hc =
      relu(linear(flattened, params.at("refine.conf.fc1.weight"),
                  params.at("refine.conf.fc1.bias").data));
  const std::vector<double> logit =
      linear(hc, params.at("refine.conf.fc2.weight"),
             params.at("refine.conf.fc2.bias").data);

  const std::vector<double> hr =
      relu(linear(flattened, params.at("refine.reg.fc1.weight"),
                  params.at("refine.reg.fc1.bias").data));
  const std::vector<double> res =
      matvec(params.at("refine.reg.offset"), hr);

  Refinement out;
  out.confidence = quantize(sigmoid(logit[0]));
  std::copy(res.begin(), res.end(), out.residuals.begin());
  const double diag = bev_diagonal(proposal);
  const Vec3 center{proposal.center.x + res[0] * diag,
                    proposal.center.y + res[1] * diag,
                    proposal.center.z + res[2] * diag};
  const Vec3 size{proposal.size.x * std::exp(res[3]),
                  proposal.size.y * std::exp(res[4]),
                  proposal.size.z * std::exp(res[5])};
  out.box = make_box(center, size, proposal.heading + res[6]);
  return out;
}

std::array<double, 7> encode_box_residual(const Box7& base,
                                          const Box7& target) {
  const double diag = bev_diagonal(base);
  return {(target.center.x - base.center.x) / diag,
          (target.center.y - base.center.y) / diag,
          (target.center.z - base.center.z) / diag,
          std::log(target.size.x / base.size.x),
          std::log(target.size.y / base.size.y),
          std::log(target.size.z / base.size.z),
          normalize_angle(target.heading - base.heading)};
}

LossResult detection_loss(double confidence, const Box7& refined,
                          const Box7& target, double iou_with_gt,
                          const FusionConfig& cfg) {
  if (!std::isfinite(confidence) || !std::isfinite(iou_with_gt))
    throw std::invalid_argument("detection_loss: non-finite input");

  LossResult out;
  const double t = std::clamp(
      (iou_with_gt - cfg.conf_ramp_lo) / (cfg.conf_ramp_hi - cfg.conf_ramp_lo),
      0.0, 1.0);
  const double p = std::clamp(confidence, 1e-12, 1.0 - 1e-12);
  out.conf = -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));

  if (iou_with_gt > cfg.reg_gate) {
    const auto res = encode_box_residual(refined, target);
    double sum = 0.0;
    for (const double d : res) {
      const double a = std::abs(d);
      sum += a < 1.0 ? 0.5 * d * d : a - 0.5;  // smooth-L1, beta = 1
    }
    out.reg = sum / 7.0;
  }
  out.total = out.conf + cfg.alpha * out.reg;
  return out;
}

}  // namespace lcf
