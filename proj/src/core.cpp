// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#include "lcf/core.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

namespace lcf {

Mat3 Mat3::inverse() const {
  const double d = det();
  if (std::abs(d) < 1e-300) throw std::runtime_error("singular 3x3 matrix");
  const double inv = 1.0 / d;
  Mat3 r;
  r.m[0] = (m[4] * m[8] - m[5] * m[7]) * inv;
  r.m[1] = (m[2] * m[7] - m[1] * m[8]) * inv;
  r.m[2] = (m[1] * m[5] - m[2] * m[4]) * inv;
  r.m[3] = (m[5] * m[6] - m[3] * m[8]) * inv;
  r.m[4] = (m[0] * m[8] - m[2] * m[6]) * inv;
  r.m[5] = (m[2] * m[3] - m[0] * m[5]) * inv;
  r.m[6] = (m[3] * m[7] - m[4] * m[6]) * inv;
  r.m[7] = (m[1] * m[6] - m[0] * m[7]) * inv;
  r.m[8] = (m[0] * m[4] - m[1] * m[3]) * inv;
  return r;
}

namespace {
std::atomic<Precision> g_precision{Precision::f64};
}  // namespace

Precision precision() { return g_precision.load(std::memory_order_relaxed); }
void set_precision(Precision p) {
  g_precision.store(p, std::memory_order_relaxed);
}

void quantize(std::span<double> values) {
  if (precision() != Precision::f32) return;
  for (double& v : values) v = double(float(v));
}

int thread_count() {
  static const int n = [] {
    const char* env = std::getenv("LCFUSION_THREADS");
    if (!env) return 1;
    const long v = std::strtol(env, nullptr, 10);
    if (v < 1) return 1;
    const long hw = std::max(1u, std::thread::hardware_concurrency());
    return int(std::min(v, hw * 4));
  }();
  return n;
}

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  const int threads = thread_count();
  if (threads <= 1 || n < 2) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const size_t workers = std::min<size_t>(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const size_t chunk = (n + workers - 1) / workers;
  for (size_t w = 0; w < workers; ++w) {
    const size_t lo = w * chunk;
    const size_t hi = std::min(n, lo + chunk);
    pool.emplace_back([&fn, lo, hi] {
      for (size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace lcf
