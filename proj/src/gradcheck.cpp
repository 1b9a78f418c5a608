// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#include "lcf/gradcheck.hpp"

#include <cmath>

#include "lcf/attention.hpp"
#include "lcf/kernels.hpp"

namespace lcf {

std::vector<double> numeric_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double fp = f(probe);
    probe[i] = saved - h;
    const double fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("non-finite function value in gradient probe");
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

namespace {

struct ErrorTracker {
  double max_rel = 0.0;
  double max_abs = 0.0;

  void update(std::span<const double> analytic,
              std::span<const double> numeric) {
    for (size_t i = 0; i < analytic.size(); ++i) {
      if (!std::isfinite(analytic[i]))
        throw std::runtime_error("non-finite analytic gradient");
      const double abs_err = std::abs(analytic[i] - numeric[i]);
      const double denom =
          std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
      max_abs = std::max(max_abs, abs_err);
      max_rel = std::max(max_rel, abs_err / denom);
    }
  }
};

std::vector<double> random_vector(SplitMix64& rng, size_t n, double lo = -1.0,
                                  double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

Tensor random_tensor(SplitMix64& rng, std::vector<size_t> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& x : t.data) x = rng.uniform(-1.0, 1.0);
  return t;
}

FeatureMap random_feature_map(SplitMix64& rng, int h, int w, int c,
                              int stride) {
  FeatureMap fm = FeatureMap::zeros(h, w, c, stride);
  for (double& x : fm.data) x = rng.uniform(-1.0, 1.0);
  return fm;
}

// Continuous cell coordinate at least `margin` cells away from lattice lines.
double off_lattice(SplitMix64& rng, int cells, double margin) {
  const int base = int(rng.next_below(uint64_t(cells - 1)));
  return base + rng.uniform(margin, 1.0 - margin);
}

GradReport check_bilinear(uint64_t seed, double tol, int probes, double h) {
  ErrorTracker err;
  SplitMix64 rng(seed, "gradcheck.bilinear");
  for (int p = 0; p < probes; ++p) {
    const int stride = 1 + int(rng.next_below(4));
    const FeatureMap fm = random_feature_map(rng, 7, 9, 5, stride);
    const std::vector<double> g = random_vector(rng, 5);
    const double margin = 1e-2;  // > 1e-3 cells plus finite-difference room
    const double u = (off_lattice(rng, fm.width, margin) + 0.5) * stride;
    const double v = (off_lattice(rng, fm.height, margin) + 0.5) * stride;

    std::vector<double> value(5), du(5), dv(5);
    bilinear_sample_grad(fm, u, v, value, du, dv);
    double analytic[2] = {0.0, 0.0};
    for (int c = 0; c < 5; ++c) {
      analytic[0] += g[c] * du[c];
      analytic[1] += g[c] * dv[c];
    }
    const std::vector<double> x{u, v};
    const auto numeric = numeric_gradient(
        [&](std::span<const double> q) {
          const std::vector<double> s = bilinear_sample(fm, q[0], q[1]);
          double acc = 0.0;
          for (int c = 0; c < 5; ++c) acc += g[c] * s[c];
          return acc;
        },
        x, h);
    err.update(std::span<const double>(analytic, 2), numeric);
  }
  return {"bilinear_sample", err.max_rel, err.max_abs, probes, tol,
          err.max_rel < tol};
}

GradReport check_linear(uint64_t seed, double tol, int probes, double h) {
  ErrorTracker err;
  SplitMix64 rng(seed, "gradcheck.linear");
  for (int p = 0; p < probes; ++p) {
    const size_t m = 3 + rng.next_below(8);
    const size_t n = 3 + rng.next_below(8);
    const Tensor w = random_tensor(rng, {m, n});
    const std::vector<double> b = random_vector(rng, m);
    const std::vector<double> x = random_vector(rng, n);
    const std::vector<double> g = random_vector(rng, m);
    const auto probe_scalar = [&](std::span<const double> xx,
                                  const Tensor& ww) {
      const std::vector<double> y = linear(xx, ww, b);
      double acc = 0.0;
      for (size_t i = 0; i < m; ++i) acc += g[i] * y[i];
      return acc;
    };

    const std::vector<double> ax = linear_vjp_x(w, g);
    const auto nx = numeric_gradient(
        [&](std::span<const double> q) { return probe_scalar(q, w); }, x, h);
    err.update(ax, nx);

    const Tensor aw = linear_vjp_w(x, g);
    const auto nw = numeric_gradient(
        [&](std::span<const double> q) {
          Tensor wq = w;
          wq.data.assign(q.begin(), q.end());
          return probe_scalar(x, wq);
        },
        w.data, h);
    err.update(aw.data, nw);
  }
  return {"linear", err.max_rel, err.max_abs, probes, tol, err.max_rel < tol};
}

GradReport check_softmax(uint64_t seed, double tol, int probes, double h) {
  ErrorTracker err;
  SplitMix64 rng(seed, "gradcheck.softmax");
  for (int p = 0; p < probes; ++p) {
    const size_t n = 2 + rng.next_below(15);
    const std::vector<double> x = random_vector(rng, n, -3.0, 3.0);
    const std::vector<double> g = random_vector(rng, n);
    const std::vector<double> sm = softmax(x);
    const std::vector<double> analytic = softmax_vjp(sm, g);
    const auto numeric = numeric_gradient(
        [&](std::span<const double> q) {
          const std::vector<double> y = softmax(q);
          double acc = 0.0;
          for (size_t i = 0; i < n; ++i) acc += g[i] * y[i];
          return acc;
        },
        x, h);
    err.update(analytic, numeric);
  }
  return {"softmax", err.max_rel, err.max_abs, probes, tol, err.max_rel < tol};
}

GradReport check_ffn(uint64_t seed, double tol, int probes, double h) {
  ErrorTracker err;
  SplitMix64 rng(seed, "gradcheck.ffn");
  for (int p = 0; p < probes; ++p) {
    const size_t n = 4 + rng.next_below(8);
    const size_t hidden = 2 * n;
    const size_t out = 3 + rng.next_below(6);
    const Tensor w1 = random_tensor(rng, {hidden, n});
    const Tensor b1 = random_tensor(rng, {hidden});
    const Tensor w2 = random_tensor(rng, {out, hidden});
    const Tensor b2 = random_tensor(rng, {out});
    const FfnParams params{&w1, &b1, &w2, &b2};
    const std::vector<double> x = random_vector(rng, n);
    const std::vector<double> g = random_vector(rng, out);

    const std::vector<double> analytic = ffn_vjp_x(x, params, g);
    const auto numeric = numeric_gradient(
        [&](std::span<const double> q) {
          const std::vector<double> y = ffn(q, params);
          double acc = 0.0;
          for (size_t i = 0; i < out; ++i) acc += g[i] * y[i];
          return acc;
        },
        x, h);
    err.update(analytic, numeric);
  }
  return {"ffn", err.max_rel, err.max_abs, probes, tol, err.max_rel < tol};
}

GradReport check_deform_attn(uint64_t seed, double tol, int probes, double h) {
  ErrorTracker err;
  SplitMix64 rng(seed, "gradcheck.deform_attn");
  for (int p = 0; p < probes; ++p) {
    const int heads = 2, samples = 2;
    const size_t c = 8, ci = 6;
    std::vector<ParamSpec> specs;
    deform_attn_param_spec(specs, "attn", heads, samples, c, ci);
    ParamStore store = init_params(specs, rng.next_u64());
    // The offset projection is zero by the init rule; perturb it so the
    // chain through the sampling positions carries signal.
    {
      Tensor& off = store.tensors().at("attn.offset");
      SplitMix64 orng(rng.next_u64());
      for (double& v : off.data) v = orng.uniform(-0.4, 0.4);
    }
    const DeformAttnParams params =
        DeformAttnParams::bind(store, "attn", heads, samples);

    const int stride = 2;
    const FeatureMap fm = random_feature_map(rng, 9, 11, int(ci), stride);
    const Vec2 ref{(2.5 + rng.uniform(0.1, 3.8)) * stride,
                   (2.5 + rng.uniform(0.1, 2.8)) * stride};
    const std::vector<double> g = random_vector(rng, c);

    // The sampling positions move with the query; redraw until every one
    // sits at least 1e-3 cells away from an interpolation lattice line.
    std::vector<double> query;
    for (int attempt = 0; attempt < 256; ++attempt) {
      query = random_vector(rng, c);
      const std::vector<double> offs = matvec(*params.offset_proj, query);
      bool clear = true;
      for (size_t i = 0; i < offs.size() && clear; i += 2) {
        const double xc = (ref.x + offs[i] * stride) / stride - 0.5;
        const double yc = (ref.y + offs[i + 1] * stride) / stride - 0.5;
        for (const double t : {xc, yc}) {
          const double frac = t - std::floor(t);
          if (frac < 1e-3 || frac > 1.0 - 1e-3) clear = false;
        }
      }
      if (clear) break;
    }

    const std::vector<double> analytic =
        deform_attn_query_vjp(query, fm, ref, params, g);
    const auto numeric = numeric_gradient(
        [&](std::span<const double> q) {
          const std::vector<double> y = deform_attn(q, fm, ref, params);
          double acc = 0.0;
          for (size_t i = 0; i < c; ++i) acc += g[i] * y[i];
          return acc;
        },
        query, h);
    err.update(analytic, numeric);
  }
  return {"deform_attn", err.max_rel, err.max_abs, probes, tol,
          err.max_rel < tol};
}

}  // namespace

std::vector<GradReport> check_gradients(uint64_t seed, double tol, int probes,
                                        double h) {
  PrecisionGuard guard(Precision::f64);
  std::vector<GradReport> reports;
  reports.push_back(check_bilinear(seed, tol, probes, h));
  reports.push_back(check_linear(seed, tol, probes, h));
  reports.push_back(check_softmax(seed, tol, probes, h));
  reports.push_back(check_ffn(seed, tol, probes, h));
  reports.push_back(check_deform_attn(seed, tol, probes, h));
  return reports;
}

}  // namespace lcf
