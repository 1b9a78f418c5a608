// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#include "lcf/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace lcf {

Tensor Tensor::zeros(std::vector<size_t> s) {
  Tensor t;
  t.shape = std::move(s);
  t.data.assign(t.numel(), 0.0);
  return t;
}

void ParamStore::add(const std::string& name, Tensor t) {
  if (t.numel() != t.data.size())
    throw std::invalid_argument("tensor data does not match shape: " + name);
  if (!tensors_.emplace(name, std::move(t)).second)
    throw std::invalid_argument("duplicate parameter name: " + name);
}

const Tensor& ParamStore::at(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw std::runtime_error("uninitialized parameters: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name,
                             std::span<const size_t> expect_shape) const {
  const Tensor& t = at(name);
  const bool ok = t.shape.size() == expect_shape.size() &&
                  std::equal(t.shape.begin(), t.shape.end(),
                             expect_shape.begin());
  if (!ok) throw std::runtime_error("parameter shape mismatch: " + name);
  return t;
}

ParamStore init_params(std::span<const ParamSpec> specs, uint64_t seed) {
  ParamStore store(seed);
  for (const ParamSpec& spec : specs) {
    if (spec.shape.empty())
      throw std::invalid_argument("empty shape for parameter " + spec.name);
    for (size_t d : spec.shape)
      if (d == 0)
        throw std::invalid_argument("zero dimension in parameter " + spec.name);
    Tensor t = Tensor::zeros(spec.shape);
    if (!spec.name.ends_with(".offset")) {
      const double fan_out = double(spec.shape.front());
      const double fan_in = double(spec.shape.back());
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      SplitMix64 rng(seed, spec.name);
      for (double& v : t.data) v = rng.uniform(-bound, bound);
    }
    store.add(spec.name, std::move(t));
  }
  return store;
}

FeatureMap FeatureMap::zeros(int h, int w, int c, int stride) {
  if (h <= 0 || w <= 0 || c <= 0 || stride < 1)
    throw std::invalid_argument("invalid feature map dimensions");
  FeatureMap fm;
  fm.height = h;
  fm.width = w;
  fm.channels = c;
  fm.stride = stride;
  fm.data.assign(size_t(h) * w * c, 0.0);
  return fm;
}

namespace {

struct BilinearCell {
  int x0, y0;
  double wx, wy;  // fractional offsets within [x0, x0+1) x [y0, y0+1)
};

inline BilinearCell bilinear_locate(const FeatureMap& fm, double u, double v) {
  // Cell centers live at integer cell coordinates.
  const double xc = u / fm.stride - 0.5;
  const double yc = v / fm.stride - 0.5;
  const double xf = std::floor(xc);
  const double yf = std::floor(yc);
  return {int(xf), int(yf), xc - xf, yc - yf};
}

inline const double* cell_or_null(const FeatureMap& fm, int y, int x) {
  if (x < 0 || x >= fm.width || y < 0 || y >= fm.height) return nullptr;
  return &fm.data[(size_t(y) * fm.width + x) * fm.channels];
}

}  // namespace

void bilinear_sample_into(const FeatureMap& fm, double u, double v,
                          std::span<double> out) {
  const BilinearCell c = bilinear_locate(fm, u, v);
  const double* p00 = cell_or_null(fm, c.y0, c.x0);
  const double* p01 = cell_or_null(fm, c.y0, c.x0 + 1);
  const double* p10 = cell_or_null(fm, c.y0 + 1, c.x0);
  const double* p11 = cell_or_null(fm, c.y0 + 1, c.x0 + 1);
  const double w00 = (1 - c.wy) * (1 - c.wx), w01 = (1 - c.wy) * c.wx;
  const double w10 = c.wy * (1 - c.wx), w11 = c.wy * c.wx;
  for (int ch = 0; ch < fm.channels; ++ch) {
    double s = 0.0;
    if (p00) s += w00 * p00[ch];
    if (p01) s += w01 * p01[ch];
    if (p10) s += w10 * p10[ch];
    if (p11) s += w11 * p11[ch];
    out[ch] = quantize(s);
  }
}

std::vector<double> bilinear_sample(const FeatureMap& fm, double u, double v) {
  std::vector<double> out(fm.channels);
  bilinear_sample_into(fm, u, v, out);
  return out;
}

void bilinear_sample_grad(const FeatureMap& fm, double u, double v,
                          std::span<double> value, std::span<double> du,
                          std::span<double> dv) {
  const BilinearCell c = bilinear_locate(fm, u, v);
  const double* p00 = cell_or_null(fm, c.y0, c.x0);
  const double* p01 = cell_or_null(fm, c.y0, c.x0 + 1);
  const double* p10 = cell_or_null(fm, c.y0 + 1, c.x0);
  const double* p11 = cell_or_null(fm, c.y0 + 1, c.x0 + 1);
  const double inv_stride = 1.0 / fm.stride;
  for (int ch = 0; ch < fm.channels; ++ch) {
    const double v00 = p00 ? p00[ch] : 0.0;
    const double v01 = p01 ? p01[ch] : 0.0;
    const double v10 = p10 ? p10[ch] : 0.0;
    const double v11 = p11 ? p11[ch] : 0.0;
    const double top = v00 + c.wx * (v01 - v00);
    const double bot = v10 + c.wx * (v11 - v10);
    value[ch] = quantize(top + c.wy * (bot - top));
    // d/dxc and d/dyc of the blend, then chain through xc = u/stride - 0.5.
    const double dxc = (1 - c.wy) * (v01 - v00) + c.wy * (v11 - v10);
    const double dyc = bot - top;
    du[ch] = dxc * inv_stride;
    dv[ch] = dyc * inv_stride;
  }
}

std::vector<double> linear(std::span<const double> x, const Tensor& w,
                           std::span<const double> b) {
  if (w.shape.size() != 2)
    throw std::invalid_argument("linear: weight must be 2-D");
  const size_t m = w.shape[0], n = w.shape[1];
  if (x.size() != n) throw std::invalid_argument("linear: input size mismatch");
  if (!b.empty() && b.size() != m)
    throw std::invalid_argument("linear: bias size mismatch");
  std::vector<double> out(m);
  const double* row = w.data.data();
  for (size_t i = 0; i < m; ++i, row += n) {
    double s = b.empty() ? 0.0 : b[i];
    for (size_t j = 0; j < n; ++j) s += row[j] * x[j];
    out[i] = quantize(s);
  }
  return out;
}

std::vector<double> linear_vjp_x(const Tensor& w, std::span<const double> g) {
  const size_t m = w.shape[0], n = w.shape[1];
  if (g.size() != m) throw std::invalid_argument("linear_vjp_x: size mismatch");
  std::vector<double> out(n, 0.0);
  const double* row = w.data.data();
  for (size_t i = 0; i < m; ++i, row += n)
    for (size_t j = 0; j < n; ++j) out[j] += row[j] * g[i];
  return out;
}

Tensor linear_vjp_w(std::span<const double> x, std::span<const double> g) {
  Tensor grad = Tensor::zeros({g.size(), x.size()});
  for (size_t i = 0; i < g.size(); ++i)
    for (size_t j = 0; j < x.size(); ++j) grad.at(i, j) = g[i] * x[j];
  return grad;
}

std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("softmax: empty input");
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v = quantize(v / sum);
  return out;
}

std::vector<double> softmax_vjp(std::span<const double> p,
                                std::span<const double> g) {
  double dot = 0.0;
  for (size_t i = 0; i < p.size(); ++i) dot += p[i] * g[i];
  std::vector<double> out(p.size());
  for (size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (g[i] - dot);
  return out;
}

std::vector<double> relu(std::span<const double> x) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

std::vector<double> layer_norm(std::span<const double> x,
                               std::span<const double> gamma,
                               std::span<const double> beta) {
  const size_t n = x.size();
  if (gamma.size() != n || beta.size() != n)
    throw std::invalid_argument("layer_norm: parameter size mismatch");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= double(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= double(n);
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i)
    out[i] = quantize((x[i] - mean) * inv * gamma[i] + beta[i]);
  return out;
}

FfnParams FfnParams::bind(const ParamStore& store, const std::string& prefix) {
  FfnParams p;
  p.w1 = &store.at(prefix + ".fc1.weight");
  p.b1 = &store.at(prefix + ".fc1.bias");
  p.w2 = &store.at(prefix + ".fc2.weight");
  p.b2 = &store.at(prefix + ".fc2.bias");
  return p;
}

void ffn_param_spec(std::vector<ParamSpec>& specs, const std::string& prefix,
                    size_t in, size_t out) {
  const size_t hidden = 2 * in;
  specs.push_back({prefix + ".fc1.weight", {hidden, in}});
  specs.push_back({prefix + ".fc1.bias", {hidden}});
  specs.push_back({prefix + ".fc2.weight", {out, hidden}});
  specs.push_back({prefix + ".fc2.bias", {out}});
}

std::vector<double> ffn(std::span<const double> x, const FfnParams& p) {
  const std::vector<double> h = relu(linear(x, *p.w1, p.b1->data));
  return linear(h, *p.w2, p.b2->data);
}

std::vector<double> ffn_vjp_x(std::span<const double> x, const FfnParams& p,
                              std::span<const double> g) {
  const std::vector<double> pre = linear(x, *p.w1, p.b1->data);
  std::vector<double> gh = linear_vjp_x(*p.w2, g);
  for (size_t i = 0; i < gh.size(); ++i)
    if (pre[i] <= 0.0) gh[i] = 0.0;
  return linear_vjp_x(*p.w1, gh);
}

std::vector<double> concat_reduce(std::span<const double> a,
                                  std::span<const double> b,
                                  const FfnParams& p) {
  if (a.size() != b.size())
    throw std::invalid_argument("concat_reduce: operand size mismatch");
  std::vector<double> cat;
  cat.reserve(a.size() + b.size());
  cat.insert(cat.end(), a.begin(), a.end());
  cat.insert(cat.end(), b.begin(), b.end());
  return ffn(cat, p);
}

}  // namespace lcf
