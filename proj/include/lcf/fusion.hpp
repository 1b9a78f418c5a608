// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#pragma once

#include <optional>
#include <vector>

#include "lcf/attention.hpp"
#include "lcf/geometry.hpp"
#include "lcf/voxel.hpp"

namespace lcf {

enum class PieMode { XYZ_D, XYZ_D_R };

struct FusionConfig {
  int u = 6;        // proposal grid resolution per axis
  int heads = 4;    // M
  int samples = 4;  // K
  double tau = 1.0;    // count-log offset; log(0 + tau) = 0 for empty cells
  double alpha = 1.0;  // regression loss weight
  std::vector<int> gof_levels{4, 8};  // voxel strides fused by GoF
  bool enable_gof = true;
  bool enable_lof = true;
  bool enable_fda = true;
  PieMode pie_mode = PieMode::XYZ_D_R;
  int pool_neighbors = 8;            // kappa
  double pool_radius_factor = 2.0;   // radius = factor * level voxel diagonal
  int c_voxel = 32;        // C_V, also the grid-feature width C
  int c_image = 16;        // C_I
  int head_hidden = 256;   // refinement trunk width
  double conf_ramp_lo = 0.25;  // IoU -> confidence-target ramp start
  double conf_ramp_hi = 0.75;  // ramp end
  double reg_gate = 0.55;      // regression loss active above this IoU
};

void validate_fusion_config(const FusionConfig& cfg);

// PIE MLP input width: [gamma(3), c_B(3), D(1)] plus R(3) in XYZ_D_R mode.
inline size_t pie_input_width(PieMode mode) {
  return mode == PieMode::XYZ_D_R ? 10 : 7;
}

// Full parameter manifest for the fusion model, surrogate backbone included
// (one linear map per entry of `backbone_levels`).
std::vector<ParamSpec> fusion_param_spec(const FusionConfig& cfg,
                                         std::span<const int> backbone_levels,
                                         int point_extra_channels);

// Deterministic camera assignment: among cameras accepting the projection,
// the one whose |u - principal_x| is smallest wins; exact ties go to the
// lowest camera index, so duplicated cameras never change the outcome.
struct CameraHit {
  int camera = -1;
  PixelPoint pixel;
};
std::optional<CameraHit> select_camera(std::span<const CameraModel> cams,
                                       const Vec3& p);

// Centroid-anchored global fusion over the configured voxel levels: project
// each entry's point centroid, deform-attend on the accepting camera's
// feature map with the voxel feature as query, and reduce the concatenation
// back to C_V channels. Centroids no camera accepts fuse against a zero
// image vector. Returns the fused maps in gof_levels order.
std::vector<SparseVoxelMap> global_fuse(
    const std::vector<SparseVoxelMap>& maps,
    std::span<const FeatureMap> fms, std::span<const CameraModel> cams,
    const ParamStore& params, const FusionConfig& cfg);

struct PooledGrid {
  std::vector<double> features;  // u^3 x C, row-major grid order
  std::vector<uint8_t> valid;    // false where no level had neighbors
};

// Per grid point, gathers up to pool_neighbors nearest non-empty voxels
// (centroid distance, ties by voxel key) within the per-level radius,
// aggregates by inverse-distance weighted mean, concatenates the levels and
// projects to C channels.
PooledGrid roi_grid_pool(const std::vector<SparseVoxelMap>& fused,
                         const RoiGrid& grid, const ParamStore& params,
                         const FusionConfig& cfg);

struct PieResult {
  std::vector<double> features;      // u^3 x C
  std::vector<uint32_t> counts;      // points per grid cell
  std::vector<Vec3> rel_centroids;   // canonical cell centroid - cell center
};

// Position information encoder over the proposal grid (grid-cell membership
// evaluated in the box-canonical frame).
PieResult pie_encode(const Box7& box, const RoiGrid& grid,
                     const PointCloud& points, const ParamStore& params,
                     const FusionConfig& cfg);

// Grid-anchored local fusion: like global_fuse but with grid centers as
// reference points and the PIE features as queries.
std::vector<double> local_fuse(const RoiGrid& grid,
                               std::span<const double> pie_features,
                               std::span<const FeatureMap> fms,
                               std::span<const CameraModel> cams,
                               const ParamStore& params,
                               const FusionConfig& cfg);

struct ProposalFeatures {
  int u = 0;
  int channels = 0;
  std::vector<double> f_pie;     // F_B^p
  std::vector<double> f_local;   // F_B^l (zeros when LoF disabled)
  std::vector<double> f_global;  // F_B^g (zeros when GoF disabled)
  std::vector<double> f_sum;     // F_S, filled by fda_aggregate
  std::vector<uint8_t> valid;    // non-empty grid points

  size_t grid_size() const { return size_t(u) * u * u; }
};

// F_S = F_B^p + F_B^l + F_B^g, then masked self-attention plus a residual
// connection block over the valid grid tokens (skipped when FDA is disabled
// or no token is valid). Returns the row-major flattened feature.
std::vector<double> fda_aggregate(ProposalFeatures& pf,
                                  const ParamStore& params,
                                  const FusionConfig& cfg);

struct Refinement {
  double confidence = 0.0;
  Box7 box;
  std::array<double, 7> residuals{};  // raw regression branch output
};

// Two MLP branches over the flattened feature: a sigmoid confidence and a
// 7-DoF residual decoded as center deltas scaled by the proposal BEV
// diagonal, log-ratio sizes, and an additive heading renormalized to
// (-pi, pi]. The residual output projection is zero-initialized, so a fresh
// model refines to the proposal exactly.
Refinement refine(std::span<const double> flattened, const Box7& proposal,
                  const ParamStore& params);

// Residual encoding of `target` relative to `base` (exact inverse of the
// decode used by refine).
std::array<double, 7> encode_box_residual(const Box7& base,
                                          const Box7& target);

struct LossResult {
  double total = 0.0;
  double conf = 0.0;
  double reg = 0.0;
  double rpn = 0.0;          // no RPN exists in this artifact
  bool rpn_in_scope = false; // marker: the term above is a placeholder
};

// Confidence: binary cross-entropy against the clamped IoU ramp
// (iou - lo) / (hi - lo). Regression: mean smooth-L1 (beta = 1) over the 7
// residuals encoding the target against the refined box, active only above
// the IoU gate. total = conf + alpha * reg.
LossResult detection_loss(double confidence, const Box7& refined,
                          const Box7& target, double iou_with_gt,
                          const FusionConfig& cfg);

}  // namespace lcf
