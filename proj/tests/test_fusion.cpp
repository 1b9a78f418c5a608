#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcf/fusion.hpp"

using namespace lcf;

namespace {

struct Fixture {
  VoxelConfig voxel;
  FusionConfig fusion;
  ParamStore params;
  CameraModel camera;
  FeatureMap fmap;

  explicit Fixture(uint64_t seed = 404, int c_voxel = 8, int c_image = 4) {
    voxel.range_min = {-8, -8, -2};
    voxel.range_max = {8, 8, 4};
    voxel.voxel_size = {0.4, 0.4, 0.4};
    voxel.levels = {1, 2};

    fusion.u = 2;
    fusion.heads = 2;
    fusion.samples = 2;
    fusion.gof_levels = {1, 2};
    fusion.c_voxel = c_voxel;
    fusion.c_image = c_image;
    fusion.head_hidden = 16;
    params = init_params(fusion_param_spec(fusion, voxel.levels, 2), seed);

    camera.intrinsic = Mat3::identity();
    camera.intrinsic(0, 0) = 80.0;
    camera.intrinsic(1, 1) = 80.0;
    camera.intrinsic(0, 2) = 32.0;
    camera.intrinsic(1, 2) = 32.0;
    camera.image_width = 64;
    camera.image_height = 64;
    // Camera at y = -12 looking along +y.
    Mat3 rot;
    rot.m = {1, 0, 0, 0, 0, -1, 0, 1, 0};
    camera.extrinsic = Mat4::from_rt(rot, rot * Vec3{0, -12, 0} * -1.0);
    validate_camera(camera);

    fmap = FeatureMap::zeros(16, 16, c_image, 4);
    SplitMix64 rng(seed, "fmap");
    for (double& v : fmap.data) v = rng.uniform(-1, 1);
  }

  PointCloud cloud_around(std::span<const Vec3> centers, int per_center,
                          uint64_t seed) const {
    PointCloud cloud;
    cloud.extra_channels = 2;
    SplitMix64 rng(seed);
    for (const Vec3& c : centers)
      for (int i = 0; i < per_center; ++i)
        cloud.append(c + Vec3{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                              rng.uniform(-0.1, 0.1)},
                     {rng.next_double(), rng.next_double()});
    return cloud;
  }

  std::vector<SparseVoxelMap> featurized(const PointCloud& cloud) const {
    return surrogate_backbone(cloud, voxel, params);
  }
};

std::vector<double> slice(std::span<const double> data, size_t j, size_t c) {
  return {data.begin() + j * c, data.begin() + (j + 1) * c};
}

}  // namespace

TEST_CASE("global_fuse falls back when nothing projects") {
  const Fixture fx;
  const std::vector<Vec3> centers{{0, 0, 0}, {1, 1, 1}, {-2, 3, 0.5}};
  const PointCloud cloud = fx.cloud_around(centers, 20, 1);
  const auto maps = fx.featurized(cloud);

  // Camera looking away: flip its forward axis so all centroids project
  // behind it.
  CameraModel away = fx.camera;
  Mat3 rot;
  rot.m = {1, 0, 0, 0, 0, 1, 0, -1, 0};  // looks along -y from y = -12
  away.extrinsic = Mat4::from_rt(rot, rot * Vec3{0, -12, 0} * -1.0);
  const std::vector<FeatureMap> fms{fx.fmap};
  const std::vector<CameraModel> cams{away};
  const auto fused = global_fuse(maps, fms, cams, fx.params, fx.fusion);

  REQUIRE(fused.size() == 2);
  const std::vector<double> zeros(size_t(fx.fusion.c_voxel), 0.0);
  for (size_t li = 0; li < fused.size(); ++li) {
    const std::string prefix =
        "gof.l" + std::to_string(fused[li].level()) + ".reduce";
    const FfnParams reduce = FfnParams::bind(fx.params, prefix);
    for (size_t i = 0; i < fused[li].size(); ++i) {
      const auto expect =
          concat_reduce(maps[li].entry(i).feature, zeros, reduce);
      CHECK(fused[li].entry(i).feature == expect);
    }
  }
}

TEST_CASE("global_fuse with a zero feature map reduces against zeros") {
  const Fixture fx;
  const std::vector<Vec3> centers{{0, 0, 0}, {2, -1, 1}};
  const PointCloud cloud = fx.cloud_around(centers, 15, 2);
  const auto maps = fx.featurized(cloud);
  const std::vector<FeatureMap> fms{
      FeatureMap::zeros(16, 16, fx.fusion.c_image, 4)};
  const std::vector<CameraModel> cams{fx.camera};
  const auto fused = global_fuse(maps, fms, cams, fx.params, fx.fusion);
  const std::vector<double> zeros(size_t(fx.fusion.c_voxel), 0.0);
  for (size_t li = 0; li < fused.size(); ++li) {
    const FfnParams reduce = FfnParams::bind(
        fx.params, "gof.l" + std::to_string(fused[li].level()) + ".reduce");
    for (size_t i = 0; i < fused[li].size(); ++i)
      CHECK(fused[li].entry(i).feature ==
            concat_reduce(maps[li].entry(i).feature, zeros, reduce));
  }
}

TEST_CASE("global_fuse matches the scripted op composition") {
  const Fixture fx;
  const std::vector<Vec3> centers{{0, 0, 0}, {1.5, 0.5, 0.5}, {-1, 2, 0},
                                  {3, -2, 1}, {-2.5, -1.5, 0.2}};
  const PointCloud cloud = fx.cloud_around(centers, 12, 3);
  const auto maps = fx.featurized(cloud);
  const std::vector<FeatureMap> fms{fx.fmap};
  const std::vector<CameraModel> cams{fx.camera};
  const auto fused = global_fuse(maps, fms, cams, fx.params, fx.fusion);

  for (size_t li = 0; li < fused.size(); ++li) {
    const std::string prefix = "gof.l" + std::to_string(fused[li].level());
    const DeformAttnParams attn = DeformAttnParams::bind(
        fx.params, prefix + ".attn", fx.fusion.heads, fx.fusion.samples);
    const FfnParams reduce = FfnParams::bind(fx.params, prefix + ".reduce");
    REQUIRE(fused[li].size() == maps[li].size());
    for (size_t i = 0; i < fused[li].size(); ++i) {
      const VoxelEntry& e = maps[li].entry(i);
      std::vector<double> attended(size_t(fx.fusion.c_voxel), 0.0);
      if (const auto px = project_point(fx.camera, e.centroid))
        attended = deform_attn(e.feature, fx.fmap, {px->u, px->v}, attn);
      const auto expect = concat_reduce(e.feature, attended, reduce);
      CHECK(fused[li].entry(i).feature == expect);
    }
  }
}

TEST_CASE("camera selection prefers the most-centered view and duplicates") {
  const Fixture fx;
  // A camera translated sideways sees the same point away from its center.
  CameraModel off = fx.camera;
  const Mat3 rot = off.extrinsic.rotation();
  off.extrinsic = Mat4::from_rt(rot, rot * Vec3{3.0, -12.0, 0.0} * -1.0);
  const std::vector<CameraModel> cams{off, fx.camera, off};
  const Vec3 p{0, 0, 0};
  const auto hit = select_camera(cams, p);
  REQUIRE(hit.has_value());
  CHECK(hit->camera == 1);

  // Duplicating the winning camera keeps the selection on the first copy.
  const std::vector<CameraModel> dup{fx.camera, fx.camera, off};
  const auto hit2 = select_camera(dup, p);
  REQUIRE(hit2.has_value());
  CHECK(hit2->camera == 0);
  CHECK(hit2->pixel.u == hit->pixel.u);
}

TEST_CASE("roi_grid_pool copies a lone neighbor through the projection") {
  Fixture fx;
  fx.fusion.gof_levels = {1};
  fx.fusion.pool_neighbors = 1;
  ParamStore params =
      init_params(fusion_param_spec(fx.fusion, fx.voxel.levels, 2), 11);

  PointCloud cloud;
  cloud.extra_channels = 2;
  cloud.append({0.21, 0.17, 0.33}, {0.5, 0.5});
  auto maps = surrogate_backbone(cloud, fx.voxel, params);
  std::vector<SparseVoxelMap> fused{maps[0]};
  const Vec3 centroid = fused[0].entry(0).centroid;

  // A grid whose first cell center is exactly the voxel centroid.
  const Box7 box = make_box(
      centroid + Vec3{0.05, 0.05, 0.05}, {0.2, 0.2, 0.2}, 0.0);
  const RoiGrid grid = split_box_grid(box, 2);
  const PooledGrid pooled = roi_grid_pool(fused, grid, params, fx.fusion);

  REQUIRE((grid.centers[0] - centroid).norm() < 1e-12);
  const auto expect = linear(fused[0].entry(0).feature, params.at("pool.weight"),
                             params.at("pool.bias").data);
  CHECK(slice(pooled.features, 0, 8) == expect);
  for (const uint8_t v : pooled.valid) CHECK(v == 1);
}

TEST_CASE("roi_grid_pool empty neighborhood clears the mask") {
  const Fixture fx;
  PointCloud cloud;
  cloud.extra_channels = 2;
  cloud.append({6, 6, 3}, {0.1, 0.2});  // far corner
  const auto maps = fx.featurized(cloud);
  const auto fused =
      global_fuse(maps, std::vector<FeatureMap>{fx.fmap},
                  std::vector<CameraModel>{fx.camera}, fx.params, fx.fusion);
  const Box7 box = make_box({-6, -6, 0}, {1, 1, 1}, 0.3);
  const PooledGrid pooled =
      roi_grid_pool(fused, split_box_grid(box, 2), fx.params, fx.fusion);
  for (size_t j = 0; j < pooled.valid.size(); ++j) {
    CHECK(pooled.valid[j] == 0);
    CHECK(slice(pooled.features, j, 8) == std::vector<double>(8, 0.0));
  }
}

TEST_CASE("roi_grid_pool matches the exhaustive neighbor scan") {
  const Fixture fx;
  SplitMix64 rng(17);
  std::vector<Vec3> centers;
  for (int i = 0; i < 40; ++i)
    centers.push_back(
        {rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-1, 2)});
  const PointCloud cloud = fx.cloud_around(centers, 6, 18);
  const auto maps = fx.featurized(cloud);
  const auto fused =
      global_fuse(maps, std::vector<FeatureMap>{fx.fmap},
                  std::vector<CameraModel>{fx.camera}, fx.params, fx.fusion);

  const Box7 box = make_box({0.3, -0.4, 0.5}, {3.0, 2.0, 1.5}, 0.7);
  const RoiGrid grid = split_box_grid(box, 3);
  FusionConfig cfg = fx.fusion;
  cfg.u = 3;
  const PooledGrid pooled = roi_grid_pool(fused, grid, fx.params, cfg);

  const size_t c = size_t(cfg.c_voxel);
  for (size_t j = 0; j < grid.centers.size(); ++j) {
    std::vector<double> cat(fused.size() * c, 0.0);
    bool any = false;
    for (size_t li = 0; li < fused.size(); ++li) {
      const SparseVoxelMap& map = fused[li];
      const double radius = cfg.pool_radius_factor * map.cell_size().norm();
      // Exhaustive scan over every entry, no spatial index.
      std::vector<std::pair<double, size_t>> hits;
      for (size_t e = 0; e < map.size(); ++e) {
        const double d = (map.entry(e).centroid - grid.centers[j]).norm();
        if (d <= radius) hits.emplace_back(d, e);
      }
      if (hits.empty()) continue;
      any = true;
      std::sort(hits.begin(), hits.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return map.key(a.second) < map.key(b.second);
      });
      if (hits.size() > size_t(cfg.pool_neighbors))
        hits.resize(size_t(cfg.pool_neighbors));
      std::vector<double> weights(hits.size());
      double wsum = 0;
      for (size_t hh = 0; hh < hits.size(); ++hh) {
        weights[hh] = 1.0 / (hits[hh].first + 1e-9);
        wsum += weights[hh];
      }
      std::vector<double> acc(c, 0.0);
      for (size_t hh = 0; hh < hits.size(); ++hh)
        for (size_t ch = 0; ch < c; ++ch)
          acc[ch] += (weights[hh] / wsum) * map.entry(hits[hh].second).feature[ch];
      for (size_t ch = 0; ch < c; ++ch) cat[li * c + ch] = acc[ch];
    }
    if (!any) {
      CHECK(pooled.valid[j] == 0);
      continue;
    }
    const auto expect =
        linear(cat, fx.params.at("pool.weight"), fx.params.at("pool.bias").data);
    CHECK(pooled.valid[j] == 1);
    CHECK(slice(pooled.features, j, c) == expect);
  }
}

TEST_CASE("pie_encode empty cell has D = 0 and R = 0 with tau = 1") {
  const Fixture fx;
  const PointCloud empty;
  const Box7 box = make_box({1, 1, 1}, {2, 2, 2}, 0.5);
  const RoiGrid grid = split_box_grid(box, 2);
  const PieResult pie = pie_encode(box, grid, empty, fx.params, fx.fusion);

  const FfnParams mlp = FfnParams::bind(fx.params, "pie");
  for (size_t j = 0; j < grid.centers.size(); ++j) {
    CHECK(pie.counts[j] == 0);
    CHECK(pie.rel_centroids[j].norm() == 0.0);
    const Vec3& g = grid.local_offsets[j];
    const std::vector<double> input{g.x, g.y, g.z,         box.center.x,
                                    box.center.y, box.center.z, 0.0,
                                    0.0,  0.0, 0.0};
    CHECK(slice(pie.features, j, 8) == ffn(input, mlp));
  }
}

TEST_CASE("pie_encode center cell has zero offset") {
  const Fixture fx;
  FusionConfig cfg = fx.fusion;
  cfg.u = 3;  // odd: middle cell center coincides with the box center
  const Box7 box = make_box({0.5, -0.5, 0.25}, {3, 3, 3}, 1.2);
  const RoiGrid grid = split_box_grid(box, 3);
  const size_t mid = RoiGrid::flat_index(3, 1, 1, 1);
  CHECK(grid.local_offsets[mid].norm() < 1e-12);
  CHECK((grid.centers[mid] - box.center).norm() < 1e-12);
}

TEST_CASE("pie_encode counts and centroids match a brute-force scan") {
  const Fixture fx;
  SplitMix64 rng(55);
  for (int trial = 0; trial < 10; ++trial) {
    const Box7 box = make_box({rng.uniform(-3, 3), rng.uniform(-3, 3),
                               rng.uniform(-0.5, 1.5)},
                              {rng.uniform(1, 4), rng.uniform(1, 3),
                               rng.uniform(1, 2)},
                              rng.uniform(-kPi, kPi));
    PointCloud cloud;
    cloud.extra_channels = 2;
    for (int i = 0; i < 400; ++i)
      cloud.append({rng.uniform(-5, 5), rng.uniform(-5, 5),
                    rng.uniform(-2, 3)},
                   {0.0, 0.0});
    const int u = 3;
    FusionConfig cfg = fx.fusion;
    cfg.u = u;
    const RoiGrid grid = split_box_grid(box, u);
    const PieResult pie = pie_encode(box, grid, cloud, fx.params, cfg);

    std::vector<uint32_t> counts(grid.centers.size(), 0);
    std::vector<Vec3> sums(grid.centers.size(), Vec3{});
    size_t inside_total = 0;
    for (size_t i = 0; i < cloud.count; ++i) {
      const Vec3 p = cloud.point(i);
      if (!box_contains(box, p)) continue;
      ++inside_total;
      const Vec3 q = to_canonical(box, p);
      // Independent binning: scan the cell edges per axis.
      const auto bin = [u](double t, double extent) {
        for (int k = 0; k < u - 1; ++k)
          if (t < ((k + 1.0) / u - 0.5) * extent) return k;
        return u - 1;
      };
      const size_t j = RoiGrid::flat_index(u, bin(q.x, box.size.x),
                                           bin(q.y, box.size.y),
                                           bin(q.z, box.size.z));
      ++counts[j];
      sums[j] += q;
    }
    size_t pie_total = 0;
    for (size_t j = 0; j < counts.size(); ++j) {
      CHECK(pie.counts[j] == counts[j]);
      pie_total += pie.counts[j];
      if (counts[j] > 0) {
        const Vec3 rel = sums[j] / double(counts[j]) - grid.local_offsets[j];
        CHECK((pie.rel_centroids[j] - rel).norm() < 1e-12);
      }
    }
    CHECK(pie_total == inside_total);
  }
}

TEST_CASE("pie_encode mode selects the input width") {
  const Fixture fx;
  FusionConfig cfg = fx.fusion;
  cfg.pie_mode = PieMode::XYZ_D;
  ParamStore params =
      init_params(fusion_param_spec(cfg, fx.voxel.levels, 2), 5);
  const Box7 box = make_box({0, 0, 0}, {2, 2, 2}, 0.0);
  const RoiGrid grid = split_box_grid(box, 2);
  PointCloud cloud;
  cloud.extra_channels = 2;
  cloud.append({0.5, 0.5, 0.5}, {0.3, 0.1});
  const PieResult pie = pie_encode(box, grid, cloud, params, cfg);
  const FfnParams mlp = FfnParams::bind(params, "pie");
  const size_t j = RoiGrid::flat_index(2, 1, 1, 1);
  const Vec3& g = grid.local_offsets[j];
  const std::vector<double> input{g.x, g.y, g.z, 0.0, 0.0, 0.0,
                                  std::log(1.0 + cfg.tau)};
  CHECK(slice(pie.features, j, 8) == ffn(input, mlp));
}

TEST_CASE("local_fuse zero image features reduce against zeros") {
  const Fixture fx;
  const Box7 box = make_box({0, 0, 0.5}, {2, 1.5, 1}, 0.4);
  const RoiGrid grid = split_box_grid(box, 2);
  PointCloud cloud;
  cloud.extra_channels = 2;
  cloud.append({0.1, 0.1, 0.6}, {0.2, 0.4});
  const PieResult pie = pie_encode(box, grid, cloud, fx.params, fx.fusion);
  const std::vector<FeatureMap> fms{
      FeatureMap::zeros(16, 16, fx.fusion.c_image, 4)};
  const std::vector<CameraModel> cams{fx.camera};
  const auto local =
      local_fuse(grid, pie.features, fms, cams, fx.params, fx.fusion);
  const FfnParams reduce = FfnParams::bind(fx.params, "lof.reduce");
  const std::vector<double> zeros(8, 0.0);
  for (size_t j = 0; j < grid.centers.size(); ++j)
    CHECK(slice(local, j, 8) ==
          concat_reduce(slice(pie.features, j, 8), zeros, reduce));
}

TEST_CASE("local_fuse matches the scripted chain per cell") {
  const Fixture fx;
  const Box7 box = make_box({0.5, 1.0, 0.5}, {2, 2, 1.5}, -0.6);
  const RoiGrid grid = split_box_grid(box, 2);
  const PointCloud cloud = fx.cloud_around(
      std::vector<Vec3>{box.center}, 30, 77);
  const PieResult pie = pie_encode(box, grid, cloud, fx.params, fx.fusion);
  const std::vector<FeatureMap> fms{fx.fmap};
  const std::vector<CameraModel> cams{fx.camera};
  const auto local =
      local_fuse(grid, pie.features, fms, cams, fx.params, fx.fusion);

  const DeformAttnParams attn = DeformAttnParams::bind(
      fx.params, "lof.attn", fx.fusion.heads, fx.fusion.samples);
  const FfnParams reduce = FfnParams::bind(fx.params, "lof.reduce");
  for (size_t j = 0; j < grid.centers.size(); ++j) {
    const std::vector<double> query = slice(pie.features, j, 8);
    std::vector<double> attended(8, 0.0);
    if (const auto px = project_point(fx.camera, grid.centers[j]))
      attended = deform_attn(query, fx.fmap, {px->u, px->v}, attn);
    CHECK(slice(local, j, 8) == concat_reduce(query, attended, reduce));
  }
}

TEST_CASE("fda_aggregate sums enabled streams exactly") {
  const Fixture fx;
  SplitMix64 rng(31);
  ProposalFeatures pf;
  pf.u = 2;
  pf.channels = 8;
  const size_t n = pf.grid_size() * 8;
  pf.f_pie.resize(n);
  pf.f_local.resize(n);
  pf.f_global.resize(n);
  pf.valid.assign(pf.grid_size(), 1);
  for (size_t i = 0; i < n; ++i) {
    pf.f_pie[i] = rng.uniform(-1, 1);
    pf.f_local[i] = rng.uniform(-1, 1);
    pf.f_global[i] = rng.uniform(-1, 1);
  }
  fda_aggregate(pf, fx.params, fx.fusion);
  for (size_t i = 0; i < n; ++i)
    CHECK(pf.f_sum[i] == pf.f_pie[i] + pf.f_local[i] + pf.f_global[i]);

  // Disabled streams contribute exact zeros upstream: with the other two
  // zeroed, F_S must equal F_B^p bitwise.
  ProposalFeatures only_pie = pf;
  std::fill(only_pie.f_local.begin(), only_pie.f_local.end(), 0.0);
  std::fill(only_pie.f_global.begin(), only_pie.f_global.end(), 0.0);
  FusionConfig cfg = fx.fusion;
  cfg.enable_fda = false;
  const auto flat = fda_aggregate(only_pie, fx.params, cfg);
  CHECK(only_pie.f_sum == only_pie.f_pie);
  CHECK(flat == only_pie.f_pie);
}

TEST_CASE("fda_aggregate with no valid tokens bypasses attention") {
  const Fixture fx;
  ProposalFeatures pf;
  pf.u = 2;
  pf.channels = 8;
  const size_t n = pf.grid_size() * 8;
  pf.f_pie.assign(n, 0.25);
  pf.f_local.assign(n, 0.5);
  pf.f_global.assign(n, -0.125);
  pf.valid.assign(pf.grid_size(), 0);
  const auto flat = fda_aggregate(pf, fx.params, fx.fusion);
  CHECK(flat == pf.f_sum);
  for (const double v : flat) CHECK(v == 0.625);
}

TEST_CASE("fda_aggregate single valid token matches self_attn + RCB") {
  const Fixture fx;
  SplitMix64 rng(41);
  ProposalFeatures pf;
  pf.u = 2;
  pf.channels = 8;
  pf.f_pie.assign(pf.grid_size() * 8, 0.0);
  pf.f_local.assign(pf.grid_size() * 8, 0.0);
  pf.f_global.assign(pf.grid_size() * 8, 0.0);
  pf.valid.assign(pf.grid_size(), 0);
  pf.valid[3] = 1;
  for (size_t i = 0; i < 8; ++i) pf.f_pie[3 * 8 + i] = rng.uniform(-1, 1);

  const auto flat = fda_aggregate(pf, fx.params, fx.fusion);

  const std::vector<double> token = slice(pf.f_sum, 3, 8);
  const SelfAttnParams attn = SelfAttnParams::bind(fx.params, "fda.attn");
  const auto mixed = self_attn_layer({token}, {1}, attn);
  const FfnParams rcb = FfnParams::bind(fx.params, "fda.rcb");
  const auto f = ffn(mixed[0], rcb);
  std::vector<double> y(8);
  for (size_t i = 0; i < 8; ++i) y[i] = mixed[0][i] + f[i];
  const auto expect = layer_norm(y, fx.params.at("fda.rcb.ln.gamma").data,
                                 fx.params.at("fda.rcb.ln.beta").data);
  CHECK(slice(flat, 3, 8) == expect);
  // Invalid tokens flatten to their (zero) F_S rows.
  CHECK(slice(flat, 0, 8) == std::vector<double>(8, 0.0));
}

TEST_CASE("refine with a zero residual branch is the identity") {
  const Fixture fx;  // "refine.reg.offset" is zero-initialized by the rule
  SplitMix64 rng(71);
  std::vector<double> flat(size_t(fx.fusion.u) * fx.fusion.u * fx.fusion.u *
                           size_t(fx.fusion.c_voxel));
  for (double& v : flat) v = rng.uniform(-1, 1);
  const Box7 proposal = make_box({3, -2, 0.5}, {4.2, 1.9, 1.6}, 0.8);
  const Refinement r = refine(flat, proposal, fx.params);
  CHECK(r.box.center.x == proposal.center.x);
  CHECK(r.box.center.y == proposal.center.y);
  CHECK(r.box.center.z == proposal.center.z);
  CHECK(r.box.size.x == proposal.size.x);
  CHECK(r.box.size.y == proposal.size.y);
  CHECK(r.box.size.z == proposal.size.z);
  CHECK(r.box.heading == proposal.heading);
  for (const double v : r.residuals) CHECK(v == 0.0);
  CHECK(r.confidence > 0.0);
  CHECK(r.confidence < 1.0);
}

TEST_CASE("refine confidence is 0.5 at logit zero") {
  Fixture fx;
  // Zero the confidence head: logit = 0 regardless of features.
  for (const char* name : {"refine.conf.fc2.weight", "refine.conf.fc2.bias"})
    for (double& v : fx.params.tensors().at(name).data) v = 0.0;
  std::vector<double> flat(size_t(fx.fusion.u) * fx.fusion.u * fx.fusion.u *
                           size_t(fx.fusion.c_voxel), 0.3);
  const Box7 proposal = make_box({0, 0, 0}, {1, 1, 1}, 0.0);
  CHECK(refine(flat, proposal, fx.params).confidence == 0.5);
}

TEST_CASE("refine decode matches the closed-form formulas") {
  Fixture fx;
  SplitMix64 rng(81);
  std::vector<double> flat(size_t(fx.fusion.u) * fx.fusion.u * fx.fusion.u *
                           size_t(fx.fusion.c_voxel));
  for (double& v : flat) v = rng.uniform(-1, 1);
  // Give the residual branch real weights.
  for (double& v : fx.params.tensors().at("refine.reg.offset").data)
    v = rng.uniform(-0.05, 0.05);

  const Box7 proposal = make_box({-1, 4, 0.2}, {3.5, 1.8, 1.5}, -2.9);
  const Refinement r = refine(flat, proposal, fx.params);

  const double diag = std::sqrt(3.5 * 3.5 + 1.8 * 1.8);
  CHECK(r.box.center.x ==
        doctest::Approx(proposal.center.x + r.residuals[0] * diag).epsilon(1e-12));
  CHECK(r.box.center.y ==
        doctest::Approx(proposal.center.y + r.residuals[1] * diag).epsilon(1e-12));
  CHECK(r.box.center.z ==
        doctest::Approx(proposal.center.z + r.residuals[2] * diag).epsilon(1e-12));
  CHECK(r.box.size.x ==
        doctest::Approx(proposal.size.x * std::exp(r.residuals[3])).epsilon(1e-12));
  CHECK(r.box.size.y ==
        doctest::Approx(proposal.size.y * std::exp(r.residuals[4])).epsilon(1e-12));
  CHECK(r.box.size.z ==
        doctest::Approx(proposal.size.z * std::exp(r.residuals[5])).epsilon(1e-12));
  CHECK(r.box.heading ==
        doctest::Approx(normalize_angle(proposal.heading + r.residuals[6]))
            .epsilon(1e-12));
  // The decode is the exact inverse of the residual encoding.
  const auto re = encode_box_residual(proposal, r.box);
  for (int i = 0; i < 7; ++i)
    CHECK(re[size_t(i)] == doctest::Approx(r.residuals[size_t(i)]).epsilon(1e-9));
}

TEST_CASE("detection_loss on a perfect prediction") {
  const Fixture fx;
  const Box7 gt = make_box({1, 2, 0.5}, {4, 2, 1.5}, 0.3);
  const LossResult loss =
      detection_loss(1.0 - 1e-9, gt, gt, 1.0, fx.fusion);
  CHECK(loss.reg == 0.0);
  CHECK(loss.conf < 1e-6);
  CHECK(loss.total == loss.conf);
  CHECK(loss.rpn == 0.0);
  CHECK_FALSE(loss.rpn_in_scope);
}

TEST_CASE("detection_loss BCE at the center is ln 2") {
  const Fixture fx;
  const Box7 gt = make_box({0, 0, 0}, {1, 1, 1}, 0.0);
  // iou = 0.5 -> target (0.5 - 0.25) / 0.5 = 0.5; conf 0.5 -> BCE = ln 2.
  const LossResult loss = detection_loss(0.5, gt, gt, 0.5, fx.fusion);
  CHECK(loss.conf == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(loss.reg == 0.0);  // gated: iou 0.5 <= 0.55
}

TEST_CASE("detection_loss matches a term-by-term oracle") {
  const Fixture fx;
  SplitMix64 rng(91);
  for (int trial = 0; trial < 20; ++trial) {
    const Box7 refined = make_box(
        {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-1, 1)},
        {rng.uniform(1, 4), rng.uniform(1, 3), rng.uniform(1, 2)},
        rng.uniform(-kPi, kPi));
    const Box7 target = make_box(
        refined.center + Vec3{rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                              rng.uniform(-0.2, 0.2)},
        cwise_mul(refined.size, {rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2),
                                 rng.uniform(0.8, 1.2)}),
        refined.heading + rng.uniform(-0.3, 0.3));
    const double conf = rng.uniform(0.01, 0.99);
    const double iou = rng.next_double();
    const LossResult loss =
        detection_loss(conf, refined, target, iou, fx.fusion);

    const double t = std::clamp((iou - 0.25) / 0.5, 0.0, 1.0);
    const double bce = -(t * std::log(conf) + (1 - t) * std::log(1 - conf));
    CHECK(loss.conf == doctest::Approx(bce).epsilon(1e-12));
    double reg = 0.0;
    if (iou > 0.55) {
      const double diag = std::sqrt(refined.size.x * refined.size.x +
                                    refined.size.y * refined.size.y);
      const double res[7] = {
          (target.center.x - refined.center.x) / diag,
          (target.center.y - refined.center.y) / diag,
          (target.center.z - refined.center.z) / diag,
          std::log(target.size.x / refined.size.x),
          std::log(target.size.y / refined.size.y),
          std::log(target.size.z / refined.size.z),
          normalize_angle(target.heading - refined.heading)};
      for (const double d : res)
        reg += std::abs(d) < 1 ? 0.5 * d * d : std::abs(d) - 0.5;
      reg /= 7.0;
    }
    CHECK(loss.reg == doctest::Approx(reg).epsilon(1e-12));
    CHECK(loss.total ==
          doctest::Approx(loss.conf + fx.fusion.alpha * loss.reg));
  }
}

TEST_CASE("detection_loss rejects non-finite inputs") {
  const Fixture fx;
  const Box7 b = make_box({0, 0, 0}, {1, 1, 1}, 0.0);
  CHECK_THROWS(detection_loss(std::nan(""), b, b, 0.5, fx.fusion));
}
