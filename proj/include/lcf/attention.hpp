// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#pragma once

#include <string>
#include <vector>

#include "lcf/kernels.hpp"

namespace lcf {

// Multi-head deformable cross-attention from a query vector onto a feature
// map around a projected reference point. Offsets and attention logits come
// from bias-free linear projections of the query; offsets are expressed in
// feature-map cell units so their magnitude is stride-free.
struct DeformAttnParams {
  int heads = 1;    // M
  int samples = 1;  // K
  const Tensor* offset_proj = nullptr;  // (2*M*K, C), zero-initialized
  const Tensor* logit_proj = nullptr;   // (M*K, C)
  std::vector<const Tensor*> value_proj;  // per head (C_v, C_I)
  std::vector<const Tensor*> out_proj;    // per head (C, C_v)

  // Binds "<prefix>.offset", "<prefix>.logit", "<prefix>.head<m>.value"
  // and "<prefix>.head<m>.out".
  static DeformAttnParams bind(const ParamStore& store,
                               const std::string& prefix, int heads,
                               int samples);
  void validate(size_t query_dim, size_t image_channels) const;
};

// Appends the tensors for one deformable-attention block. Per-head value
// width is query_dim / heads (must divide).
void deform_attn_param_spec(std::vector<ParamSpec>& specs,
                            const std::string& prefix, int heads, int samples,
                            size_t query_dim, size_t image_channels);

// Per head m: sum_k A_mk * (W'_m * F(ref + dp_mk)); heads recombined through
// W_m. A_mk is the softmax over the K sampling points of head m.
std::vector<double> deform_attn(std::span<const double> query,
                                const FeatureMap& fm, Vec2 ref,
                                const DeformAttnParams& params);

// Analytic gradient of g . deform_attn(query) with respect to the query,
// chaining through offsets, attention weights, and the bilinear samples.
std::vector<double> deform_attn_query_vjp(std::span<const double> query,
                                          const FeatureMap& fm, Vec2 ref,
                                          const DeformAttnParams& params,
                                          std::span<const double> g);

// One standard post-norm transformer encoder layer with a single attention
// head: scaled dot-product attention over the valid tokens, residual + layer
// norm, position-wise FFN, residual + layer norm. Masked tokens neither
// attend nor are attended and are returned bitwise unchanged.
struct SelfAttnParams {
  const Tensor *wq = nullptr, *bq = nullptr;
  const Tensor *wk = nullptr, *bk = nullptr;
  const Tensor *wv = nullptr, *bv = nullptr;
  const Tensor *wo = nullptr, *bo = nullptr;
  const Tensor *ln1_gamma = nullptr, *ln1_beta = nullptr;
  FfnParams ffn;
  const Tensor *ln2_gamma = nullptr, *ln2_beta = nullptr;

  static SelfAttnParams bind(const ParamStore& store,
                             const std::string& prefix);
};

void self_attn_param_spec(std::vector<ParamSpec>& specs,
                          const std::string& prefix, size_t dim);

std::vector<std::vector<double>> self_attn_layer(
    const std::vector<std::vector<double>>& tokens,
    const std::vector<uint8_t>& valid, const SelfAttnParams& params);

}  // namespace lcf
