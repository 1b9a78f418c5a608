// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#include "lcf/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "artifact files are little-endian");

namespace lcf::io {

namespace {

constexpr std::array<uint8_t, 4> kMagic{'L', 'C', 'F', 'A'};
constexpr uint32_t kVersion = 1;

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) { raw(&v, 2); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void f64s(std::span<const double> v) { raw(v.data(), 8 * v.size()); }
  void str(const std::string& s) {
    if (s.size() > 0xFFFF) throw IoError(IoErrorKind::corrupt, "name too long");
    u16(uint16_t(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<uint8_t> take() { return std::move(buf_); }

 private:
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}
  uint8_t u8() { return *take(1); }
  uint16_t u16() { return read_as<uint16_t>(); }
  uint32_t u32() { return read_as<uint32_t>(); }
  uint64_t u64() { return read_as<uint64_t>(); }
  double f64() { return read_as<double>(); }
  void f64s(std::span<double> out) {
    std::memcpy(out.data(), take(8 * out.size()), 8 * out.size());
  }
  std::string str() {
    const uint16_t n = u16();
    const uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  template <typename T>
  T read_as() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const uint8_t* take(size_t n) {
    if (pos_ + n > data_.size())
      throw IoError(IoErrorKind::truncated, "section payload truncated");
    const uint8_t* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

}  // namespace

void ArtifactWriter::add_section(const std::string& name,
                                 std::vector<uint8_t> payload) {
  for (const auto& [n, p] : sections_)
    if (n == name)
      throw IoError(IoErrorKind::corrupt, "duplicate section: " + name);
  sections_.emplace_back(name, std::move(payload));
}

void ArtifactWriter::write(const std::string& path) const {
  ByteWriter header;
  for (uint8_t b : kMagic) header.u8(b);
  header.u32(kVersion);
  header.u64(sections_.size());
  size_t table_bytes = 0;
  for (const auto& [name, payload] : sections_)
    table_bytes += 2 + name.size() + 16;
  size_t offset = 16 + table_bytes;
  for (const auto& [name, payload] : sections_) {
    header.str(name);
    header.u64(offset);
    header.u64(payload.size());
    offset += payload.size();
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrorKind::open_failure, "cannot open " + path);
  const std::vector<uint8_t> bytes = header.take();
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  for (const auto& [name, payload] : sections_)
    out.write(reinterpret_cast<const char*>(payload.data()),
              std::streamsize(payload.size()));
  if (!out) throw IoError(IoErrorKind::open_failure, "write failed: " + path);
}

ArtifactReader::ArtifactReader(const std::string& path,
                               std::span<const std::string> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::open_failure, "cannot open " + path);
  blob_.assign(std::istreambuf_iterator<char>(in),
               std::istreambuf_iterator<char>());
  if (blob_.size() < 16)
    throw IoError(IoErrorKind::truncated, "file shorter than header");
  if (!std::equal(kMagic.begin(), kMagic.end(), blob_.begin()))
    throw IoError(IoErrorKind::bad_magic, "bad magic");
  uint32_t version;
  std::memcpy(&version, blob_.data() + 4, 4);
  if (version != kVersion)
    throw IoError(IoErrorKind::version_mismatch,
                  "unsupported format version " + std::to_string(version));
  uint64_t count;
  std::memcpy(&count, blob_.data() + 8, 8);

  size_t pos = 16;
  const auto need = [&](size_t n) {
    if (pos + n > blob_.size())
      throw IoError(IoErrorKind::truncated, "section table truncated");
  };
  for (uint64_t i = 0; i < count; ++i) {
    need(2);
    uint16_t len;
    std::memcpy(&len, blob_.data() + pos, 2);
    pos += 2;
    need(len);
    std::string name(reinterpret_cast<const char*>(blob_.data() + pos), len);
    pos += len;
    need(16);
    uint64_t offset, length;
    std::memcpy(&offset, blob_.data() + pos, 8);
    std::memcpy(&length, blob_.data() + pos + 8, 8);
    pos += 16;
    if (offset + length > blob_.size() || offset < pos)
      throw IoError(IoErrorKind::truncated,
                    "section '" + name + "' exceeds file size");
    if (has(name))
      throw IoError(IoErrorKind::corrupt, "duplicate section: " + name);
    table_.emplace_back(name, std::make_pair(offset, length));
  }
  for (const auto& [name, span] : table_) {
    if (std::find(expected.begin(), expected.end(), name) == expected.end())
      std::cerr << "warning: ignoring unknown section '" << name << "' in "
                << path << "\n";
  }
}

bool ArtifactReader::has(const std::string& name) const {
  for (const auto& [n, span] : table_)
    if (n == name) return true;
  return false;
}

std::span<const uint8_t> ArtifactReader::section(
    const std::string& name) const {
  for (const auto& [n, span] : table_)
    if (n == name) return {blob_.data() + span.first, span.second};
  throw IoError(IoErrorKind::corrupt, "missing section: " + name);
}

// ---------------------------------------------------------------------------
// Artifact payloads.

void save_params(const std::string& path, const ParamStore& params) {
  ByteWriter meta;
  meta.u64(params.seed());
  ByteWriter body;
  body.u64(params.tensors().size());
  for (const auto& [name, tensor] : params.tensors()) {
    body.str(name);
    body.u32(uint32_t(tensor.shape.size()));
    for (size_t d : tensor.shape) body.u64(d);
    body.f64s(tensor.data);
  }
  ArtifactWriter writer;
  writer.add_section("meta", meta.take());
  writer.add_section("params", body.take());
  writer.write(path);
}

ParamStore load_params(const std::string& path) {
  const std::vector<std::string> expected{"meta", "params"};
  const ArtifactReader reader(path, expected);
  ByteReader meta(reader.section("meta"));
  ParamStore store(meta.u64());
  ByteReader body(reader.section("params"));
  const uint64_t count = body.u64();
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = body.str();
    const uint32_t ndim = body.u32();
    std::vector<size_t> shape(ndim);
    for (auto& d : shape) d = body.u64();
    Tensor t = Tensor::zeros(std::move(shape));
    body.f64s(t.data);
    store.add(name, std::move(t));
  }
  return store;
}

namespace {

void write_box(ByteWriter& w, const Box7& b) {
  w.f64(b.center.x);
  w.f64(b.center.y);
  w.f64(b.center.z);
  w.f64(b.size.x);
  w.f64(b.size.y);
  w.f64(b.size.z);
  w.f64(b.heading);
}

Box7 read_box(ByteReader& r) {
  Box7 b;
  b.center = {r.f64(), r.f64(), r.f64()};
  b.size = {r.f64(), r.f64(), r.f64()};
  b.heading = r.f64();
  return b;
}

}  // namespace

void save_scene(const std::string& path, const Scene& scene) {
  ByteWriter meta;
  meta.u64(scene.seed);
  const SynthConfig& m = scene.meta;
  meta.u32(uint32_t(m.n_objects));
  meta.u32(uint32_t(m.n_cameras));
  meta.u32(uint32_t(m.points_per_object));
  meta.f64(m.clutter_ratio);
  meta.f64(m.noise_center);
  meta.f64(m.noise_size_log);
  meta.f64(m.noise_heading);
  meta.u32(uint32_t(m.image_width));
  meta.u32(uint32_t(m.image_height));
  meta.u32(uint32_t(m.image_stride));
  meta.u32(uint32_t(m.image_channels));
  meta.f64(m.focal);

  ByteWriter pts;
  pts.u64(scene.points.count);
  pts.u32(uint32_t(scene.points.extra_channels));
  pts.f64s(scene.points.data);

  ByteWriter boxes;
  boxes.u64(scene.gt_boxes.size());
  for (const GtBox& g : scene.gt_boxes) {
    write_box(boxes, g.box);
    boxes.u32(uint32_t(g.cls));
  }

  ByteWriter cams;
  cams.u64(scene.cameras.size());
  for (const CameraModel& c : scene.cameras) {
    cams.f64s(c.intrinsic.m);
    cams.f64s(c.extrinsic.m);
    cams.u32(uint32_t(c.image_width));
    cams.u32(uint32_t(c.image_height));
  }

  ByteWriter maps;
  maps.u64(scene.feature_maps.size());
  for (const FeatureMap& fm : scene.feature_maps) {
    maps.u32(uint32_t(fm.height));
    maps.u32(uint32_t(fm.width));
    maps.u32(uint32_t(fm.channels));
    maps.u32(uint32_t(fm.stride));
    maps.f64s(fm.data);
  }

  ArtifactWriter writer;
  writer.add_section("meta", meta.take());
  writer.add_section("points", pts.take());
  writer.add_section("boxes", boxes.take());
  writer.add_section("cameras", cams.take());
  writer.add_section("fmaps", maps.take());
  writer.write(path);
}

Scene load_scene(const std::string& path) {
  const std::vector<std::string> expected{"meta", "points", "boxes", "cameras",
                                          "fmaps"};
  const ArtifactReader reader(path, expected);
  Scene scene;

  ByteReader meta(reader.section("meta"));
  scene.seed = meta.u64();
  SynthConfig& m = scene.meta;
  m.n_objects = int(meta.u32());
  m.n_cameras = int(meta.u32());
  m.points_per_object = int(meta.u32());
  m.clutter_ratio = meta.f64();
  m.noise_center = meta.f64();
  m.noise_size_log = meta.f64();
  m.noise_heading = meta.f64();
  m.image_width = int(meta.u32());
  m.image_height = int(meta.u32());
  m.image_stride = int(meta.u32());
  m.image_channels = int(meta.u32());
  m.focal = meta.f64();

  ByteReader pts(reader.section("points"));
  scene.points.count = pts.u64();
  scene.points.extra_channels = int(pts.u32());
  scene.points.data.resize(scene.points.count * scene.points.row_stride());
  pts.f64s(scene.points.data);

  ByteReader boxes(reader.section("boxes"));
  const uint64_t n_boxes = boxes.u64();
  for (uint64_t i = 0; i < n_boxes; ++i) {
    GtBox g;
    g.box = read_box(boxes);
    g.cls = int(boxes.u32());
    scene.gt_boxes.push_back(g);
  }

  ByteReader cams(reader.section("cameras"));
  const uint64_t n_cams = cams.u64();
  for (uint64_t i = 0; i < n_cams; ++i) {
    CameraModel c;
    cams.f64s(c.intrinsic.m);
    cams.f64s(c.extrinsic.m);
    c.image_width = int(cams.u32());
    c.image_height = int(cams.u32());
    scene.cameras.push_back(c);
  }

  ByteReader maps(reader.section("fmaps"));
  const uint64_t n_maps = maps.u64();
  for (uint64_t i = 0; i < n_maps; ++i) {
    const int h = int(maps.u32());
    const int w = int(maps.u32());
    const int c = int(maps.u32());
    const int stride = int(maps.u32());
    FeatureMap fm = FeatureMap::zeros(h, w, c, stride);
    maps.f64s(fm.data);
    scene.feature_maps.push_back(std::move(fm));
  }
  if (scene.cameras.size() != scene.feature_maps.size())
    throw IoError(IoErrorKind::corrupt, "camera/feature-map count mismatch");
  return scene;
}

void save_detections(const std::string& path,
                     std::span<const Detection> detections) {
  ByteWriter body;
  body.u64(detections.size());
  for (const Detection& d : detections) {
    body.u32(uint32_t(d.frame));
    body.u32(uint32_t(d.cls));
    write_box(body, d.box);
    body.f64(d.confidence);
  }
  ArtifactWriter writer;
  writer.add_section("dets", body.take());
  writer.write(path);
}

std::vector<Detection> load_detections(const std::string& path) {
  const std::vector<std::string> expected{"dets"};
  const ArtifactReader reader(path, expected);
  ByteReader body(reader.section("dets"));
  const uint64_t count = body.u64();
  std::vector<Detection> out;
  out.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    Detection d;
    d.frame = int(body.u32());
    d.cls = int(body.u32());
    d.box = read_box(body);
    d.confidence = body.f64();
    out.push_back(d);
  }
  return out;
}

void save_detections_text(const std::string& path,
                          std::span<const Detection> detections) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(IoErrorKind::open_failure, "cannot open " + path);
  char line[512];
  for (const Detection& d : detections) {
    std::snprintf(line, sizeof(line),
                  "%d %d %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  d.frame, d.cls, d.box.center.x, d.box.center.y,
                  d.box.center.z, d.box.size.x, d.box.size.y, d.box.size.z,
                  d.box.heading, d.confidence);
    out << line;
  }
  if (!out) throw IoError(IoErrorKind::open_failure, "write failed: " + path);
}

void save_grad_reports(const std::string& path,
                       std::span<const GradReport> reports) {
  ByteWriter body;
  body.u64(reports.size());
  for (const GradReport& r : reports) {
    body.str(r.op);
    body.f64(r.max_rel_err);
    body.f64(r.max_abs_err);
    body.u32(uint32_t(r.probes));
    body.f64(r.tolerance);
    body.u8(r.pass ? 1 : 0);
  }
  ArtifactWriter writer;
  writer.add_section("grad", body.take());
  writer.write(path);
}

std::vector<GradReport> load_grad_reports(const std::string& path) {
  const std::vector<std::string> expected{"grad"};
  const ArtifactReader reader(path, expected);
  ByteReader body(reader.section("grad"));
  const uint64_t count = body.u64();
  std::vector<GradReport> out;
  for (uint64_t i = 0; i < count; ++i) {
    GradReport r;
    r.op = body.str();
    r.max_rel_err = body.f64();
    r.max_abs_err = body.f64();
    r.probes = int(body.u32());
    r.tolerance = body.f64();
    r.pass = body.u8() != 0;
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text configuration.

Config default_config(Profile profile) {
  Config cfg;
  cfg.profile = profile;
  if (profile == Profile::wod) {
    cfg.voxel.voxel_size = {0.1, 0.1, 0.15};
    cfg.voxel.range_min = {-75.2, -75.2, -2.0};
    cfg.voxel.range_max = {75.2, 75.2, 4.0};
  } else {
    cfg.voxel.voxel_size = {0.05, 0.05, 0.1};
    cfg.voxel.range_min = {0.0, -40.0, -3.0};
    cfg.voxel.range_max = {70.4, 40.0, 1.0};
  }
  cfg.voxel.levels = {1, 2, 4, 8};
  cfg.fusion.gof_levels = {4, 8};  // last two voxel layers
  return cfg;
}

namespace {

double parse_double(const std::string& v) {
  size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters");
  return d;
}

int parse_int(const std::string& v) {
  size_t used = 0;
  const int i = std::stoi(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters");
  return i;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::invalid_argument("expected boolean");
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(item));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

std::string int_list_to_text(std::span<const int> v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string double_to_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using Setter = std::function<void(Config&, const std::string&)>;

const std::map<std::string, Setter>& key_table() {
  static const std::map<std::string, Setter> table = {
      {"profile", [](Config&, const std::string&) { /* applied in pass 1 */ }},
      {"voxel_size_x", [](Config& c, const std::string& v) { c.voxel.voxel_size.x = parse_double(v); }},
      {"voxel_size_y", [](Config& c, const std::string& v) { c.voxel.voxel_size.y = parse_double(v); }},
      {"voxel_size_z", [](Config& c, const std::string& v) { c.voxel.voxel_size.z = parse_double(v); }},
      {"range_min_x", [](Config& c, const std::string& v) { c.voxel.range_min.x = parse_double(v); }},
      {"range_min_y", [](Config& c, const std::string& v) { c.voxel.range_min.y = parse_double(v); }},
      {"range_min_z", [](Config& c, const std::string& v) { c.voxel.range_min.z = parse_double(v); }},
      {"range_max_x", [](Config& c, const std::string& v) { c.voxel.range_max.x = parse_double(v); }},
      {"range_max_y", [](Config& c, const std::string& v) { c.voxel.range_max.y = parse_double(v); }},
      {"range_max_z", [](Config& c, const std::string& v) { c.voxel.range_max.z = parse_double(v); }},
      {"levels", [](Config& c, const std::string& v) { c.voxel.levels = parse_int_list(v); }},
      {"u", [](Config& c, const std::string& v) { c.fusion.u = parse_int(v); }},
      {"heads", [](Config& c, const std::string& v) { c.fusion.heads = parse_int(v); }},
      {"samples", [](Config& c, const std::string& v) { c.fusion.samples = parse_int(v); }},
      {"tau", [](Config& c, const std::string& v) { c.fusion.tau = parse_double(v); }},
      {"alpha", [](Config& c, const std::string& v) { c.fusion.alpha = parse_double(v); }},
      {"gof_levels", [](Config& c, const std::string& v) { c.fusion.gof_levels = parse_int_list(v); }},
      {"enable_gof", [](Config& c, const std::string& v) { c.fusion.enable_gof = parse_bool(v); }},
      {"enable_lof", [](Config& c, const std::string& v) { c.fusion.enable_lof = parse_bool(v); }},
      {"enable_fda", [](Config& c, const std::string& v) { c.fusion.enable_fda = parse_bool(v); }},
      {"pie_mode",
       [](Config& c, const std::string& v) {
         if (v == "xyz_d") c.fusion.pie_mode = PieMode::XYZ_D;
         else if (v == "xyz_d_r") c.fusion.pie_mode = PieMode::XYZ_D_R;
         else throw std::invalid_argument("expected xyz_d or xyz_d_r");
       }},
      {"pool_k", [](Config& c, const std::string& v) { c.fusion.pool_neighbors = parse_int(v); }},
      {"pool_radius_factor", [](Config& c, const std::string& v) { c.fusion.pool_radius_factor = parse_double(v); }},
      {"c_voxel", [](Config& c, const std::string& v) { c.fusion.c_voxel = parse_int(v); }},
      {"c_image",
       [](Config& c, const std::string& v) {
         c.fusion.c_image = parse_int(v);
         c.synth.image_channels = c.fusion.c_image;
       }},
      {"head_hidden", [](Config& c, const std::string& v) { c.fusion.head_hidden = parse_int(v); }},
      {"conf_ramp_lo", [](Config& c, const std::string& v) { c.fusion.conf_ramp_lo = parse_double(v); }},
      {"conf_ramp_hi", [](Config& c, const std::string& v) { c.fusion.conf_ramp_hi = parse_double(v); }},
      {"reg_gate", [](Config& c, const std::string& v) { c.fusion.reg_gate = parse_double(v); }},
      {"precision",
       [](Config& c, const std::string& v) {
         if (v == "f32") c.run_precision = Precision::f32;
         else if (v == "f64") c.run_precision = Precision::f64;
         else throw std::invalid_argument("expected f32 or f64");
       }},
      {"iou_vehicle", [](Config& c, const std::string& v) { c.eval.iou_thresholds[0] = parse_double(v); }},
      {"iou_pedestrian", [](Config& c, const std::string& v) { c.eval.iou_thresholds[1] = parse_double(v); }},
      {"iou_cyclist", [](Config& c, const std::string& v) { c.eval.iou_thresholds[2] = parse_double(v); }},
      {"objects", [](Config& c, const std::string& v) { c.synth.n_objects = parse_int(v); }},
      {"cameras", [](Config& c, const std::string& v) { c.synth.n_cameras = parse_int(v); }},
      {"points_per_object", [](Config& c, const std::string& v) { c.synth.points_per_object = parse_int(v); }},
      {"clutter_ratio", [](Config& c, const std::string& v) { c.synth.clutter_ratio = parse_double(v); }},
      {"noise_center", [](Config& c, const std::string& v) { c.synth.noise_center = parse_double(v); }},
      {"noise_size_log", [](Config& c, const std::string& v) { c.synth.noise_size_log = parse_double(v); }},
      {"noise_heading", [](Config& c, const std::string& v) { c.synth.noise_heading = parse_double(v); }},
      {"image_width", [](Config& c, const std::string& v) { c.synth.image_width = parse_int(v); }},
      {"image_height", [](Config& c, const std::string& v) { c.synth.image_height = parse_int(v); }},
      {"image_stride", [](Config& c, const std::string& v) { c.synth.image_stride = parse_int(v); }},
      {"focal", [](Config& c, const std::string& v) { c.synth.focal = parse_double(v); }},
  };
  return table;
}

struct ConfigLine {
  int number;
  std::string key;
  std::string value;
};

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<ConfigLine> tokenize_config(const std::string& text) {
  std::vector<ConfigLine> lines;
  std::stringstream ss(text);
  std::string raw;
  int number = 0;
  while (std::getline(ss, raw)) {
    ++number;
    const size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    raw = trim(raw);
    if (raw.empty()) continue;
    const size_t eq = raw.find('=');
    if (eq == std::string::npos)
      throw ConfigError(number, "line " + std::to_string(number) +
                                    ": expected key = value");
    ConfigLine line{number, trim(raw.substr(0, eq)), trim(raw.substr(eq + 1))};
    if (line.key.empty() || line.value.empty())
      throw ConfigError(number, "line " + std::to_string(number) +
                                    ": empty key or value");
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace

Config parse_config(const std::string& text) {
  const std::vector<ConfigLine> lines = tokenize_config(text);

  // Keys are order-insensitive: resolve the profile first, reject
  // duplicates, then apply every other key onto the profile defaults.
  Profile profile = Profile::wod;
  std::map<std::string, int> seen;
  for (const ConfigLine& line : lines) {
    if (const auto it = seen.find(line.key); it != seen.end())
      throw ConfigError(line.number,
                        "line " + std::to_string(line.number) +
                            ": duplicate key '" + line.key +
                            "' (first on line " + std::to_string(it->second) +
                            ")");
    seen[line.key] = line.number;
    if (line.key == "profile") {
      if (line.value == "wod") profile = Profile::wod;
      else if (line.value == "kitti") profile = Profile::kitti;
      else
        throw ConfigError(line.number, "line " + std::to_string(line.number) +
                                           ": unknown profile '" + line.value +
                                           "'");
    }
  }

  Config cfg = default_config(profile);
  const auto& table = key_table();
  for (const ConfigLine& line : lines) {
    const auto it = table.find(line.key);
    if (it == table.end())
      throw ConfigError(line.number, "line " + std::to_string(line.number) +
                                         ": unknown key '" + line.key + "'");
    try {
      it->second(cfg, line.value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(line.number, "line " + std::to_string(line.number) +
                                         ": bad value for '" + line.key +
                                         "': " + e.what());
    }
  }
  validate_voxel_config(cfg.voxel);
  validate_fusion_config(cfg.fusion);
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::open_failure, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(Config& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError(0, "override must be key=value: " + assignment);
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (key == "profile")
    throw ConfigError(0, "profile must be set via --profile or config file");
  const auto& table = key_table();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError(0, "unknown key '" + key + "'");
  try {
    it->second(cfg, value);
  } catch (const std::exception& e) {
    throw ConfigError(0, "bad value for '" + key + "': " + e.what());
  }
  validate_voxel_config(cfg.voxel);
  validate_fusion_config(cfg.fusion);
}

std::string config_to_text(const Config& cfg) {
  std::ostringstream out;
  out << "profile = " << (cfg.profile == Profile::wod ? "wod" : "kitti")
      << "\n";
  const auto d = [&](const char* key, double v) {
    out << key << " = " << double_to_text(v) << "\n";
  };
  const auto i = [&](const char* key, int v) {
    out << key << " = " << v << "\n";
  };
  const auto b = [&](const char* key, bool v) {
    out << key << " = " << (v ? 1 : 0) << "\n";
  };
  d("voxel_size_x", cfg.voxel.voxel_size.x);
  d("voxel_size_y", cfg.voxel.voxel_size.y);
  d("voxel_size_z", cfg.voxel.voxel_size.z);
  d("range_min_x", cfg.voxel.range_min.x);
  d("range_min_y", cfg.voxel.range_min.y);
  d("range_min_z", cfg.voxel.range_min.z);
  d("range_max_x", cfg.voxel.range_max.x);
  d("range_max_y", cfg.voxel.range_max.y);
  d("range_max_z", cfg.voxel.range_max.z);
  out << "levels = " << int_list_to_text(cfg.voxel.levels) << "\n";
  i("u", cfg.fusion.u);
  i("heads", cfg.fusion.heads);
  i("samples", cfg.fusion.samples);
  d("tau", cfg.fusion.tau);
  d("alpha", cfg.fusion.alpha);
  out << "gof_levels = " << int_list_to_text(cfg.fusion.gof_levels) << "\n";
  b("enable_gof", cfg.fusion.enable_gof);
  b("enable_lof", cfg.fusion.enable_lof);
  b("enable_fda", cfg.fusion.enable_fda);
  out << "pie_mode = "
      << (cfg.fusion.pie_mode == PieMode::XYZ_D_R ? "xyz_d_r" : "xyz_d")
      << "\n";
  i("pool_k", cfg.fusion.pool_neighbors);
  d("pool_radius_factor", cfg.fusion.pool_radius_factor);
  i("c_voxel", cfg.fusion.c_voxel);
  i("c_image", cfg.fusion.c_image);
  i("head_hidden", cfg.fusion.head_hidden);
  d("conf_ramp_lo", cfg.fusion.conf_ramp_lo);
  d("conf_ramp_hi", cfg.fusion.conf_ramp_hi);
  d("reg_gate", cfg.fusion.reg_gate);
  out << "precision = "
      << (cfg.run_precision == Precision::f32 ? "f32" : "f64") << "\n";
  d("iou_vehicle", cfg.eval.iou_thresholds[0]);
  d("iou_pedestrian", cfg.eval.iou_thresholds[1]);
  d("iou_cyclist", cfg.eval.iou_thresholds[2]);
  i("objects", cfg.synth.n_objects);
  i("cameras", cfg.synth.n_cameras);
  i("points_per_object", cfg.synth.points_per_object);
  d("clutter_ratio", cfg.synth.clutter_ratio);
  d("noise_center", cfg.synth.noise_center);
  d("noise_size_log", cfg.synth.noise_size_log);
  d("noise_heading", cfg.synth.noise_heading);
  i("image_width", cfg.synth.image_width);
  i("image_height", cfg.synth.image_height);
  i("image_stride", cfg.synth.image_stride);
  d("focal", cfg.synth.focal);
  return out.str();
}

}  // namespace lcf::io
