#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcf/attention.hpp"

using namespace lcf;

namespace {

FeatureMap random_map(int h, int w, int c, int stride, uint64_t seed) {
  FeatureMap fm = FeatureMap::zeros(h, w, c, stride);
  SplitMix64 rng(seed);
  for (double& v : fm.data) v = rng.uniform(-1.0, 1.0);
  return fm;
}

ParamStore attn_store(int heads, int samples, size_t c, size_t ci,
                      uint64_t seed, bool random_offsets) {
  std::vector<ParamSpec> specs;
  deform_attn_param_spec(specs, "attn", heads, samples, c, ci);
  ParamStore store = init_params(specs, seed);
  if (random_offsets) {
    SplitMix64 rng(seed, "offsets");
    for (double& v : store.tensors().at("attn.offset").data)
      v = rng.uniform(-1.5, 1.5);
  }
  return store;
}

// Naive term-by-term evaluation of the fusion attention: for each head m and
// sample k, A_mk * W'_m * F(ref + dp_mk), recombined with W_m.
std::vector<double> naive_deform_attn(std::span<const double> query,
                                      const FeatureMap& fm, Vec2 ref,
                                      const ParamStore& store, int heads,
                                      int samples) {
  const size_t c = query.size();
  const Tensor& w_off = store.at("attn.offset");
  const Tensor& w_logit = store.at("attn.logit");
  std::vector<double> out(c, 0.0);
  for (int m = 0; m < heads; ++m) {
    // softmax over this head's logits
    std::vector<double> logits(samples);
    for (int k = 0; k < samples; ++k) {
      double z = 0;
      for (size_t j = 0; j < c; ++j)
        z += w_logit.at(size_t(m * samples + k), j) * query[j];
      logits[k] = z;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0;
    for (double& z : logits) {
      z = std::exp(z - mx);
      denom += z;
    }
    const Tensor& wv = store.at("attn.head" + std::to_string(m) + ".value");
    const Tensor& wo = store.at("attn.head" + std::to_string(m) + ".out");
    const size_t cv = wv.shape[0];
    std::vector<double> head(cv, 0.0);
    for (int k = 0; k < samples; ++k) {
      double du = 0, dv = 0;
      for (size_t j = 0; j < c; ++j) {
        du += w_off.at(size_t(2 * (m * samples + k)), j) * query[j];
        dv += w_off.at(size_t(2 * (m * samples + k) + 1), j) * query[j];
      }
      const std::vector<double> sample =
          bilinear_sample(fm, ref.x + du * fm.stride, ref.y + dv * fm.stride);
      for (size_t r = 0; r < cv; ++r) {
        double v = 0;
        for (size_t col = 0; col < sample.size(); ++col)
          v += wv.at(r, col) * sample[col];
        head[r] += (logits[k] / denom) * v;
      }
    }
    for (size_t r = 0; r < c; ++r) {
      double v = 0;
      for (size_t col = 0; col < cv; ++col) v += wo.at(r, col) * head[col];
      out[r] += v;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("deform_attn with one head, one sample, zero offsets") {
  const size_t c = 6, ci = 4;
  const ParamStore store = attn_store(1, 1, c, ci, 10, false);
  const DeformAttnParams params = DeformAttnParams::bind(store, "attn", 1, 1);
  const FeatureMap fm = random_map(5, 5, int(ci), 2, 3);
  const Vec2 ref{5.0, 5.0};
  SplitMix64 rng(4);
  std::vector<double> query(c);
  for (double& v : query) v = rng.uniform(-1, 1);

  // Offsets are zero-initialized, softmax over one logit is 1:
  // out = W_0 * (W'_0 * F(ref)).
  const auto out = deform_attn(query, fm, ref, params);
  const auto expect = matvec(store.at("attn.head0.out"),
                             matvec(store.at("attn.head0.value"),
                                    bilinear_sample(fm, ref.x, ref.y)));
  REQUIRE(out.size() == expect.size());
  for (size_t i = 0; i < out.size(); ++i)
    CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("deform_attn on an all-zero map is zero") {
  const ParamStore store = attn_store(2, 3, 8, 5, 9, true);
  const DeformAttnParams params = DeformAttnParams::bind(store, "attn", 2, 3);
  const FeatureMap fm = FeatureMap::zeros(6, 6, 5, 1);
  SplitMix64 rng(2);
  std::vector<double> query(8);
  for (double& v : query) v = rng.uniform(-1, 1);
  for (const double v : deform_attn(query, fm, {3.0, 3.0}, params))
    CHECK(v == 0.0);
}

TEST_CASE("deform_attn matches the naive triple loop") {
  SplitMix64 rng(123);
  for (int trial = 0; trial < 25; ++trial) {
    const int heads = 1 + int(rng.next_below(4));
    const int samples = 1 + int(rng.next_below(4));
    const size_t cv = 2 + rng.next_below(4);
    const size_t c = size_t(heads) * cv;
    const size_t ci = 3 + rng.next_below(6);
    ParamStore store = attn_store(heads, samples, c, ci, rng.next_u64(), true);
    const DeformAttnParams params =
        DeformAttnParams::bind(store, "attn", heads, samples);
    const int stride = 1 + int(rng.next_below(4));
    const FeatureMap fm = random_map(7, 9, int(ci), stride, rng.next_u64());
    const Vec2 ref{rng.uniform(0, 9.0 * stride), rng.uniform(0, 7.0 * stride)};
    std::vector<double> query(c);
    for (double& v : query) v = rng.uniform(-1, 1);

    const auto got = deform_attn(query, fm, ref, params);
    const auto want =
        naive_deform_attn(query, fm, ref, store, heads, samples);
    for (size_t i = 0; i < c; ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-10));
  }
}

TEST_CASE("deform_attn weights are normalized per head") {
  // Shifting every logit of one head by the same constant must not change
  // the output (softmax normalization over K). The shift is injected with a
  // rank-1 update c * q^T / |q|^2 on that head's logit rows.
  const size_t c = 8, ci = 4;
  ParamStore store = attn_store(2, 4, c, ci, 31, true);
  const FeatureMap fm = random_map(6, 8, int(ci), 2, 5);
  SplitMix64 rng(6);
  std::vector<double> query(c);
  for (double& v : query) v = rng.uniform(-1, 1);
  double qq = 0.0;
  for (const double v : query) qq += v * v;

  const DeformAttnParams params = DeformAttnParams::bind(store, "attn", 2, 4);
  const auto base = deform_attn(query, fm, {4.0, 4.0}, params);

  ParamStore shifted = store;
  Tensor& logit = shifted.tensors().at("attn.logit");
  for (int k = 0; k < 4; ++k)  // head 0 rows
    for (size_t j = 0; j < c; ++j)
      logit.at(size_t(k), j) += 0.37 * query[j] / qq;
  const DeformAttnParams shifted_params =
      DeformAttnParams::bind(shifted, "attn", 2, 4);
  const auto moved = deform_attn(query, fm, {4.0, 4.0}, shifted_params);
  for (size_t i = 0; i < c; ++i)
    CHECK(moved[i] == doctest::Approx(base[i]).epsilon(1e-9));
}

TEST_CASE("deform_attn is continuous in the reference point") {
  const size_t c = 8, ci = 5;
  ParamStore store = attn_store(2, 2, c, ci, 77, true);
  const DeformAttnParams params = DeformAttnParams::bind(store, "attn", 2, 2);
  const FeatureMap fm = random_map(9, 9, int(ci), 2, 8);
  SplitMix64 rng(15);
  std::vector<double> query(c);
  for (double& v : query) v = rng.uniform(-1, 1);
  const Vec2 ref{7.3, 6.7};  // off-lattice
  const auto base = deform_attn(query, fm, ref, params);
  double slope_1e3 = 0.0;
  for (const double eps : {1e-3, 1e-4, 1e-5}) {
    const auto moved = deform_attn(query, fm, {ref.x + eps, ref.y}, params);
    double diff = 0;
    for (size_t i = 0; i < c; ++i) diff = std::max(diff, std::abs(moved[i] - base[i]));
    const double slope = diff / eps;
    if (eps == 1e-3) slope_1e3 = slope;
    // O(eps): difference quotient stays bounded by a fixed local slope.
    CHECK(slope <= 4.0 * slope_1e3 + 1e-6);
  }
}

TEST_CASE("deform_attn shape validation") {
  const ParamStore store = attn_store(2, 2, 8, 4, 3, false);
  const DeformAttnParams params = DeformAttnParams::bind(store, "attn", 2, 2);
  const FeatureMap fm = FeatureMap::zeros(4, 4, 4, 1);
  const std::vector<double> bad_query(5, 0.0);
  CHECK_THROWS(deform_attn(bad_query, fm, {1, 1}, params));
  const FeatureMap bad_map = FeatureMap::zeros(4, 4, 3, 1);
  const std::vector<double> query(8, 0.0);
  CHECK_THROWS(deform_attn(query, bad_map, {1, 1}, params));
}

namespace {
ParamStore self_attn_store(size_t dim, uint64_t seed) {
  std::vector<ParamSpec> specs;
  self_attn_param_spec(specs, "sa", dim);
  return init_params(specs, seed);
}
}  // namespace

TEST_CASE("self_attn_layer single token closed form") {
  const size_t dim = 6;
  const ParamStore store = self_attn_store(dim, 20);
  const SelfAttnParams p = SelfAttnParams::bind(store, "sa");
  SplitMix64 rng(21);
  std::vector<double> t(dim);
  for (double& v : t) v = rng.uniform(-1, 1);

  const auto out = self_attn_layer({t}, {1}, p);

  // Attention over one token is that token's value projection.
  const auto attended =
      linear(linear(t, *p.wv, p.bv->data), *p.wo, p.bo->data);
  std::vector<double> x(dim);
  for (size_t i = 0; i < dim; ++i) x[i] = t[i] + attended[i];
  x = layer_norm(x, p.ln1_gamma->data, p.ln1_beta->data);
  const auto f = ffn(x, p.ffn);
  std::vector<double> y(dim);
  for (size_t i = 0; i < dim; ++i) y[i] = x[i] + f[i];
  const auto expect = layer_norm(y, p.ln2_gamma->data, p.ln2_beta->data);
  for (size_t i = 0; i < dim; ++i)
    CHECK(out[0][i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("self_attn_layer identical tokens get identical outputs") {
  const size_t dim = 5;
  const ParamStore store = self_attn_store(dim, 30);
  const SelfAttnParams p = SelfAttnParams::bind(store, "sa");
  const std::vector<double> t{0.4, -0.2, 1.0, 0.0, -0.7};
  const auto out = self_attn_layer({t, t}, {1, 1}, p);
  CHECK(out[0] == out[1]);
}

TEST_CASE("self_attn_layer masked tokens pass through bitwise") {
  const size_t dim = 4;
  const ParamStore store = self_attn_store(dim, 40);
  const SelfAttnParams p = SelfAttnParams::bind(store, "sa");
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> b{-0.123456789, 9.87, 0.5, 0.25};
  const auto out = self_attn_layer({a, b}, {1, 0}, p);
  CHECK(out[1] == b);
  CHECK(out[0] != a);
}

TEST_CASE("self_attn_layer rejects an all-masked input") {
  const ParamStore store = self_attn_store(3, 50);
  const SelfAttnParams p = SelfAttnParams::bind(store, "sa");
  CHECK_THROWS_WITH(self_attn_layer({{1, 2, 3}}, {0}, p), "no valid tokens");
}

TEST_CASE("self_attn_layer is permutation-equivariant over valid tokens") {
  const size_t dim = 8;
  const ParamStore store = self_attn_store(dim, 60);
  const SelfAttnParams p = SelfAttnParams::bind(store, "sa");
  SplitMix64 rng(61);
  std::vector<std::vector<double>> tokens(7, std::vector<double>(dim));
  std::vector<uint8_t> mask{1, 0, 1, 1, 0, 1, 1};
  for (auto& t : tokens)
    for (double& v : t) v = rng.uniform(-1, 1);
  const auto out = self_attn_layer(tokens, mask, p);

  const std::vector<size_t> perm{3, 6, 0, 2, 5, 1, 4};
  std::vector<std::vector<double>> ptokens(7);
  std::vector<uint8_t> pmask(7);
  for (size_t i = 0; i < 7; ++i) {
    ptokens[i] = tokens[perm[i]];
    pmask[i] = mask[perm[i]];
  }
  const auto pout = self_attn_layer(ptokens, pmask, p);
  // Equivariant up to accumulation-order rounding in the context sums.
  for (size_t i = 0; i < 7; ++i)
    for (size_t ch = 0; ch < dim; ++ch)
      CHECK(pout[i][ch] == doctest::Approx(out[perm[i]][ch]).epsilon(1e-12));
}
