#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seldiff/datasets.hpp"
#include "seldiff/denoiser.hpp"
#include "seldiff/metrics.hpp"
#include "seldiff/objectives.hpp"
#include "seldiff/schedule.hpp"
#include "seldiff/selective.hpp"

namespace seldiff {

struct TrainConfig {
  /// Upper bound on optimiser steps.
  long steps = 6000;
  double lr = 2e-3;
  std::size_t batch_size = 256;
  /// Stop once the mean loss of a window improves on the previous window by
  /// less than plateau_tol (relative). 0 disables the check.
  long plateau_window = 200;
  double plateau_tol = 1e-3;
  /// Plateau checks start after this many steps.
  long min_steps = 4000;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct UnlearnConfig {
  long steps = 50;
  double lr = 1e-4;
  double clip_norm = 1.0;
  /// Forget rows per step; 0 uses the whole forget set.
  std::size_t forget_batch = 0;
  /// Retain rows per step, drawn with replacement from the descent pool.
  std::size_t retain_batch = 64;
  /// Size of the retain pool used for descent; 0 uses every retain row.
  std::size_t retain_anchors = 0;

  friend bool operator==(const UnlearnConfig&, const UnlearnConfig&) = default;
};

/// Time window in fractions of T.
struct WindowConfig {
  bool enabled = false;
  double k = 0.0;
  double lo = 0.25;
  double hi = 0.75;

  friend bool operator==(const WindowConfig&, const WindowConfig&) = default;
};

struct FilterConfig {
  bool enabled = false;
  double r_t = 0.15;
  double s = 0.0;
  FilterTarget apply_to = FilterTarget::forget_only;
  TargetMode target_mode = TargetMode::input_only;

  friend bool operator==(const FilterConfig&, const FilterConfig&) = default;
};

struct EvalConfig {
  /// denoise_from starting points as fractions of T.
  std::vector<double> t_start{0.25, 0.5};
  /// Metric families; empty selects the defaults for the data kind.
  std::vector<std::string> metrics;
  /// Evaluate every `cadence` unlearning steps (0: only before and after).
  long cadence = 0;
  std::size_t n_samples = 1000;
  double radius = 0.1;
  std::string embedding = "flatten-cosine";
  std::size_t psd_bins = 8;
  int grad_draws = 16;
  double freq_cutoff = 0.1;
  /// 0 selects the size-scaled default.
  double sscd_rho = 0.0;
  SscdDenominator sscd_denominator = SscdDenominator::squared_norm;
  /// Retain-eval rows probed per evaluation in the image track.
  std::size_t retain_probe = 6;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

/// Default point-data denoiser: 64x64 SiLU MLP with five input octaves.
inline DenoiserArch point_arch() {
  DenoiserArch a;
  a.input_octaves = 5;
  return a;
}

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  DenoiserArch arch = point_arch();
  int T = 200;
  double beta_start = 5e-4;
  double beta_end = 0.1;
  ObjectiveConfig objective;
  TrainConfig train;
  UnlearnConfig unlearn;
  WindowConfig window;
  FilterConfig filter;
  EvalConfig eval;

  /// Throws std::invalid_argument naming the first invalid key.
  void validate() const;
  NoiseSchedule schedule() const;
  /// Time/frequency policy for unlearning.
  NoisingPolicy policy(std::size_t image_h, std::size_t image_w) const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Preset for the image track: 16x16 textures, random forget set.
RunConfig image_defaults();

/// Applies one "key = value" assignment. Unknown keys and malformed values throw
/// std::invalid_argument naming the key.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Flat text: one "section.key = value" line per field, '#' comments allowed.
/// Keys absent from the text keep their defaults.
RunConfig parse_config(const std::string& text, RunConfig base = {});
std::string serialize_config(const RunConfig& cfg);

/// Reads a config file; throws std::runtime_error naming the path when missing.
RunConfig load_config(const std::string& path);

/// Applies "key=value" overrides in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

/// 64-bit FNV-1a of the serialised config.
std::uint64_t config_hash(const RunConfig& cfg);

/// "<16 hex digits of config_hash>-s<seed>".
std::string run_id(const RunConfig& cfg);

}  // namespace seldiff
