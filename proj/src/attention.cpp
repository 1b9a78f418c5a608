// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#include "lcf/attention.hpp"

#include <cmath>

namespace lcf {

DeformAttnParams DeformAttnParams::bind(const ParamStore& store,
                                        const std::string& prefix, int heads,
                                        int samples) {
  DeformAttnParams p;
  p.heads = heads;
  p.samples = samples;
  p.offset_proj = &store.at(prefix + ".offset");
  p.logit_proj = &store.at(prefix + ".logit");
  for (int m = 0; m < heads; ++m) {
    const std::string head = prefix + ".head" + std::to_string(m);
    p.value_proj.push_back(&store.at(head + ".value"));
    p.out_proj.push_back(&store.at(head + ".out"));
  }
  return p;
}

void DeformAttnParams::validate(size_t query_dim,
                                size_t image_channels) const {
  const size_t mk = size_t(heads) * samples;
  if (offset_proj->shape.size() != 2 || offset_proj->shape[0] != 2 * mk ||
      offset_proj->shape[1] != query_dim)
    throw std::runtime_error("deform_attn: offset projection shape mismatch");
  if (logit_proj->shape.size() != 2 || logit_proj->shape[0] != mk ||
      logit_proj->shape[1] != query_dim)
    throw std::runtime_error("deform_attn: logit projection shape mismatch");
  for (int m = 0; m < heads; ++m) {
    const Tensor& wv = *value_proj[m];
    const Tensor& wo = *out_proj[m];
    if (wv.shape.size() != 2 || wv.shape[1] != image_channels)
      throw std::runtime_error("deform_attn: value projection shape mismatch");
    if (wo.shape.size() != 2 || wo.shape[0] != query_dim ||
        wo.shape[1] != wv.shape[0])
      throw std::runtime_error("deform_attn: output projection shape mismatch");
  }
}

void deform_attn_param_spec(std::vector<ParamSpec>& specs,
                            const std::string& prefix, int heads, int samples,
                            size_t query_dim, size_t image_channels) {
  if (query_dim % size_t(heads) != 0)
    throw std::invalid_argument("query dim must divide by head count");
  const size_t mk = size_t(heads) * samples;
  const size_t c_v = query_dim / size_t(heads);
  specs.push_back({prefix + ".offset", {2 * mk, query_dim}});
  specs.push_back({prefix + ".logit", {mk, query_dim}});
  for (int m = 0; m < heads; ++m) {
    const std::string head = prefix + ".head" + std::to_string(m);
    specs.push_back({head + ".value", {c_v, image_channels}});
    specs.push_back({head + ".out", {query_dim, c_v}});
  }
}

std::vector<double> deform_attn(std::span<const double> query,
                                const FeatureMap& fm, Vec2 ref,
                                const DeformAttnParams& params) {
  params.validate(query.size(), size_t(fm.channels));
  const int heads = params.heads, samples = params.samples;
  const std::vector<double> offsets = matvec(*params.offset_proj, query);
  const std::vector<double> logits = matvec(*params.logit_proj, query);

  std::vector<double> out(query.size(), 0.0);
  std::vector<double> sampled(fm.channels);
  for (int m = 0; m < heads; ++m) {
    const std::span<const double> head_logits(&logits[size_t(m) * samples],
                                              size_t(samples));
    const std::vector<double> weights = softmax(head_logits);
    const size_t c_v = params.value_proj[m]->shape[0];
    std::vector<double> head(c_v, 0.0);
    for (int k = 0; k < samples; ++k) {
      const size_t o = 2 * (size_t(m) * samples + k);
      // Offsets are in cell units; sampling positions are pixels.
      const double su = ref.x + offsets[o] * fm.stride;
      const double sv = ref.y + offsets[o + 1] * fm.stride;
      bilinear_sample_into(fm, su, sv, sampled);
      const std::vector<double> value = matvec(*params.value_proj[m], sampled);
      for (size_t c = 0; c < c_v; ++c) head[c] += weights[k] * value[c];
    }
    quantize(std::span<double>(head));
    const std::vector<double> recombined = matvec(*params.out_proj[m], head);
    for (size_t c = 0; c < out.size(); ++c) out[c] += recombined[c];
  }
  quantize(std::span<double>(out));
  return out;
}

std::vector<double> deform_attn_query_vjp(std::span<const double> query,
                                          const FeatureMap& fm, Vec2 ref,
                                          const DeformAttnParams& params,
                                          std::span<const double> g) {
  params.validate(query.size(), size_t(fm.channels));
  const int heads = params.heads, samples = params.samples;
  const size_t mk = size_t(heads) * samples;
  const std::vector<double> offsets = matvec(*params.offset_proj, query);
  const std::vector<double> logits = matvec(*params.logit_proj, query);

  std::vector<double> d_offsets(2 * mk, 0.0);
  std::vector<double> d_logits(mk, 0.0);
  std::vector<double> value(fm.channels), du(fm.channels), dv(fm.channels);
  for (int m = 0; m < heads; ++m) {
    const std::span<const double> head_logits(&logits[size_t(m) * samples],
                                              size_t(samples));
    const std::vector<double> weights = softmax(head_logits);
    // dL/d(head_m) = W_m^T g.
    const std::vector<double> g_head = linear_vjp_x(*params.out_proj[m], g);
    std::vector<double> g_weights(samples, 0.0);
    for (int k = 0; k < samples; ++k) {
      const size_t o = 2 * (size_t(m) * samples + k);
      const double su = ref.x + offsets[o] * fm.stride;
      const double sv = ref.y + offsets[o + 1] * fm.stride;
      bilinear_sample_grad(fm, su, sv, value, du, dv);
      const std::vector<double> v = matvec(*params.value_proj[m], value);
      for (int c = 0; c < int(v.size()); ++c) g_weights[k] += g_head[c] * v[c];
      // dL/dF_k = W'_m^T (A_mk * g_head), then chain through the sample
      // position; position moves by `stride` pixels per offset unit.
      std::vector<double> g_value(g_head.size());
      for (size_t c = 0; c < g_value.size(); ++c)
        g_value[c] = weights[k] * g_head[c];
      const std::vector<double> g_sample =
          linear_vjp_x(*params.value_proj[m], g_value);
      double gu = 0.0, gv = 0.0;
      for (int c = 0; c < fm.channels; ++c) {
        gu += g_sample[c] * du[c];
        gv += g_sample[c] * dv[c];
      }
      d_offsets[o] = gu * fm.stride;
      d_offsets[o + 1] = gv * fm.stride;
    }
    const std::vector<double> g_logit = softmax_vjp(weights, g_weights);
    for (int k = 0; k < samples; ++k)
      d_logits[size_t(m) * samples + k] = g_logit[k];
  }

  std::vector<double> grad = linear_vjp_x(*params.offset_proj, d_offsets);
  const std::vector<double> via_logits =
      linear_vjp_x(*params.logit_proj, d_logits);
  for (size_t i = 0; i < grad.size(); ++i) grad[i] += via_logits[i];
  return grad;
}

SelfAttnParams SelfAttnParams::bind(const ParamStore& store,
                                    const std::string& prefix) {
  SelfAttnParams p;
  p.wq = &store.at(prefix + ".q.weight");
  p.bq = &store.at(prefix + ".q.bias");
  p.wk = &store.at(prefix + ".k.weight");
  p.bk = &store.at(prefix + ".k.bias");
  p.wv = &store.at(prefix + ".v.weight");
  p.bv = &store.at(prefix + ".v.bias");
  p.wo = &store.at(prefix + ".o.weight");
  p.bo = &store.at(prefix + ".o.bias");
  p.ln1_gamma = &store.at(prefix + ".ln1.gamma");
  p.ln1_beta = &store.at(prefix + ".ln1.beta");
  p.ffn = FfnParams::bind(store, prefix + ".ffn");
  p.ln2_gamma = &store.at(prefix + ".ln2.gamma");
  p.ln2_beta = &store.at(prefix + ".ln2.beta");
  return p;
}

void self_attn_param_spec(std::vector<ParamSpec>& specs,
                          const std::string& prefix, size_t dim) {
  for (const char* name : {"q", "k", "v", "o"}) {
    specs.push_back({prefix + "." + name + ".weight", {dim, dim}});
    specs.push_back({prefix + "." + name + ".bias", {dim}});
  }
  specs.push_back({prefix + ".ln1.gamma", {dim}});
  specs.push_back({prefix + ".ln1.beta", {dim}});
  ffn_param_spec(specs, prefix + ".ffn", dim, dim);
  specs.push_back({prefix + ".ln2.gamma", {dim}});
  specs.push_back({prefix + ".ln2.beta", {dim}});
}

std::vector<std::vector<double>> self_attn_layer(
    const std::vector<std::vector<double>>& tokens,
    const std::vector<uint8_t>& valid, const SelfAttnParams& params) {
  if (tokens.size() != valid.size())
    throw std::invalid_argument("self_attn_layer: mask size mismatch");
  std::vector<size_t> idx;
  for (size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) idx.push_back(i);
  if (idx.empty()) throw std::runtime_error("no valid tokens");

  const size_t dim = tokens[idx[0]].size();
  const double scale = 1.0 / std::sqrt(double(dim));
  std::vector<std::vector<double>> q, k, v;
  for (const size_t i : idx) {
    q.push_back(linear(tokens[i], *params.wq, params.bq->data));
    k.push_back(linear(tokens[i], *params.wk, params.bk->data));
    v.push_back(linear(tokens[i], *params.wv, params.bv->data));
  }

  std::vector<std::vector<double>> out(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i)
    if (!valid[i]) out[i] = tokens[i];

  std::vector<double> scores(idx.size());
  for (size_t a = 0; a < idx.size(); ++a) {
    for (size_t b = 0; b < idx.size(); ++b) {
      double s = 0.0;
      for (size_t c = 0; c < dim; ++c) s += q[a][c] * k[b][c];
      scores[b] = quantize(s * scale);
    }
    const std::vector<double> attn = softmax(scores);
    std::vector<double> ctx(dim, 0.0);
    for (size_t b = 0; b < idx.size(); ++b)
      for (size_t c = 0; c < dim; ++c) ctx[c] += attn[b] * v[b][c];
    quantize(std::span<double>(ctx));
    const std::vector<double> attended =
        linear(ctx, *params.wo, params.bo->data);

    const std::vector<double>& t = tokens[idx[a]];
    std::vector<double> x(dim);
    for (size_t c = 0; c < dim; ++c) x[c] = t[c] + attended[c];
    x = layer_norm(x, params.ln1_gamma->data, params.ln1_beta->data);
    const std::vector<double> f = ffn(x, params.ffn);
    std::vector<double> y(dim);
    for (size_t c = 0; c < dim; ++c) y[c] = x[c] + f[c];
    out[idx[a]] = layer_norm(y, params.ln2_gamma->data, params.ln2_beta->data);
  }
  return out;
}

}  // namespace lcf
