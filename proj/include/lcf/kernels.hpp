// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "lcf/core.hpp"

namespace lcf {

struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {}
  static Tensor zeros(std::vector<size_t> s);

  size_t numel() const {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
  }
  size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& at(size_t r, size_t c) { return data[r * cols() + c]; }
  double at(size_t r, size_t c) const { return data[r * cols() + c]; }
};

// Named, shape-tagged tensors. Names are unique; shapes are fixed once added.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(uint64_t seed) : seed_(seed) {}

  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  // Throws "uninitialized parameters: <name>" when absent.
  const Tensor& at(const std::string& name) const;
  const Tensor& at(const std::string& name,
                   std::span<const size_t> expect_shape) const;

  uint64_t seed() const { return seed_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::map<std::string, Tensor>& tensors() { return tensors_; }

 private:
  std::map<std::string, Tensor> tensors_;  // ordered for stable serialization
  uint64_t seed_ = 0;
};

struct ParamSpec {
  std::string name;
  std::vector<size_t> shape;
};

// Xavier-uniform per tensor with bounds +-sqrt(6 / (fan_in + fan_out)),
// drawn from a SplitMix64 stream keyed by (seed, name). fan_in is the last
// dimension, fan_out the first (equal for 1-D tensors). Tensors whose name
// ends in ".offset" are initialized to exactly zero.
ParamStore init_params(std::span<const ParamSpec> specs, uint64_t seed);

// Dense H x W x C image-feature grid. Cell (ix, iy) covers source pixels
// [ix*stride, (ix+1)*stride) x [iy*stride, ...); its center maps to
// continuous cell coordinate ix.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  int stride = 1;  // source-image pixels per cell
  std::vector<double> data;  // row-major H x W x C

  static FeatureMap zeros(int h, int w, int c, int stride);
  double at(int y, int x, int c) const {
    return data[(size_t(y) * width + x) * channels + c];
  }
  double& at(int y, int x, int c) {
    return data[(size_t(y) * width + x) * channels + c];
  }
};

// Bilinear blend of the four cells around the continuous pixel (u, v);
// cells outside the map contribute zeros.
std::vector<double> bilinear_sample(const FeatureMap& fm, double u, double v);
void bilinear_sample_into(const FeatureMap& fm, double u, double v,
                          std::span<double> out);
// Value plus per-channel derivatives with respect to u and v (pixel units).
void bilinear_sample_grad(const FeatureMap& fm, double u, double v,
                          std::span<double> value, std::span<double> du,
                          std::span<double> dv);

// W x + b with W of shape (m, n). Pass b = {} for a bias-free map.
std::vector<double> linear(std::span<const double> x, const Tensor& w,
                           std::span<const double> b);
inline std::vector<double> matvec(const Tensor& w, std::span<const double> x) {
  return linear(x, w, {});
}
// VJPs for the probe scalar g . (W x + b).
std::vector<double> linear_vjp_x(const Tensor& w, std::span<const double> g);
Tensor linear_vjp_w(std::span<const double> x, std::span<const double> g);

std::vector<double> softmax(std::span<const double> x);
// VJP through softmax given its output p: p (x) (g - <p, g>).
std::vector<double> softmax_vjp(std::span<const double> p,
                                std::span<const double> g);

std::vector<double> relu(std::span<const double> x);

inline constexpr double kLayerNormEps = 1e-5;
std::vector<double> layer_norm(std::span<const double> x,
                               std::span<const double> gamma,
                               std::span<const double> beta);

// Two-layer feed-forward block: linear -> ReLU -> linear. Seeded models use
// hidden width 2x the input width.
struct FfnParams {
  const Tensor* w1 = nullptr;
  const Tensor* b1 = nullptr;
  const Tensor* w2 = nullptr;
  const Tensor* b2 = nullptr;

  // Binds "<prefix>.fc1.weight" / ".fc1.bias" / ".fc2.weight" / ".fc2.bias".
  static FfnParams bind(const ParamStore& store, const std::string& prefix);
};
// Appends the four tensors of an FFN mapping `in` -> 2*in -> `out`.
void ffn_param_spec(std::vector<ParamSpec>& specs, const std::string& prefix,
                    size_t in, size_t out);

std::vector<double> ffn(std::span<const double> x, const FfnParams& p);
std::vector<double> ffn_vjp_x(std::span<const double> x, const FfnParams& p,
                              std::span<const double> g);

// FFN over the concatenation [a; b], reducing 2n channels back to n.
std::vector<double> concat_reduce(std::span<const double> a,
                                  std::span<const double> b,
                                  const FfnParams& p);

}  // namespace lcf
