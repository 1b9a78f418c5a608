// Copyright (c) 2026 the lcfusion authors.
// Licensed under the Apache License, Version 2.0 [see LICENSE for details].

#pragma once

#include <string>
#include <vector>

#include "lcf/eval.hpp"
#include "lcf/fusion.hpp"
#include "lcf/gradcheck.hpp"
#include "lcf/synth.hpp"
#include "lcf/voxel.hpp"

namespace lcf::io {

// All binary artifacts share one little-endian container: a 4-byte magic
// tag, a format version, a section table (name, offset, length), and raw
// payload sections. Numeric payloads are IEEE-754 doubles.
enum class IoErrorKind {
  open_failure,
  truncated,
  bad_magic,
  version_mismatch,
  corrupt,
};

struct IoError : std::runtime_error {
  IoErrorKind kind;
  IoError(IoErrorKind k, const std::string& msg)
      : std::runtime_error(msg), kind(k) {}
};

struct ConfigError : std::runtime_error {
  int line;
  ConfigError(int line_number, const std::string& msg)
      : std::runtime_error(msg), line(line_number) {}
};

class ArtifactWriter {
 public:
  void add_section(const std::string& name, std::vector<uint8_t> payload);
  void write(const std::string& path) const;

 private:
  std::vector<std::pair<std::string, std::vector<uint8_t>>> sections_;
};

class ArtifactReader {
 public:
  // Validates magic, version, and section-table consistency. Sections not in
  // `expected` are ignored with a warning on stderr.
  ArtifactReader(const std::string& path,
                 std::span<const std::string> expected);
  bool has(const std::string& name) const;
  std::span<const uint8_t> section(const std::string& name) const;

 private:
  std::vector<uint8_t> blob_;
  std::vector<std::pair<std::string, std::pair<uint64_t, uint64_t>>> table_;
};

void save_params(const std::string& path, const ParamStore& params);
ParamStore load_params(const std::string& path);

void save_scene(const std::string& path, const Scene& scene);
Scene load_scene(const std::string& path);

void save_detections(const std::string& path,
                     std::span<const Detection> detections);
std::vector<Detection> load_detections(const std::string& path);
// Line-oriented export for diffing: frame, class, 7 box numbers, confidence.
void save_detections_text(const std::string& path,
                          std::span<const Detection> detections);

void save_grad_reports(const std::string& path,
                       std::span<const GradReport> reports);
std::vector<GradReport> load_grad_reports(const std::string& path);

// ---------------------------------------------------------------------------
// Experiment configuration: flat "key = value" text with '#' comments.
// Unspecified keys fall back to the active profile's defaults.

enum class Profile { wod, kitti };

struct EvalConfig {
  std::array<double, kNumClasses> iou_thresholds{0.7, 0.5, 0.5};
};

struct Config {
  Profile profile = Profile::wod;
  VoxelConfig voxel;       // profile defaults applied
  FusionConfig fusion;
  SynthConfig synth;
  EvalConfig eval;
  Precision run_precision = Precision::f32;
};

Config default_config(Profile profile);
// Parses config text; unknown keys, duplicates, and unparsable values throw
// ConfigError with the offending line number. Key order does not matter.
Config parse_config(const std::string& text);
Config load_config(const std::string& path);
// Applies "key=value" overrides (CLI flags) on top of a parsed config.
void apply_override(Config& cfg, const std::string& assignment);
// Full key-value snapshot in parse_config syntax (round-trips exactly).
std::string config_to_text(const Config& cfg);

}  // namespace lcf::io
