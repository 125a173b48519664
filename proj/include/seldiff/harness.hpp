#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seldiff/config.hpp"
#include "seldiff/datasets.hpp"
#include "seldiff/metrics.hpp"

namespace seldiff {

/// Outcome record of one pipeline phase.
struct RunRecord {
  std::string run_id;
  std::string config_snapshot;
  std::vector<std::string> checkpoints;
  std::vector<MetricRow> metrics;
  /// Wall-clock seconds per phase ("train", "unlearn", "eval").
  std::map<std::string, double> phase_seconds;
  std::vector<double> loss_history;
  long steps_run = 0;
};

/// Thrown when training produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Denoiser model;
  RunRecord record;
};

/// Epsilon-matching training on every row of the dataset. Stops at
/// cfg.train.steps or on a loss plateau. With out_dir, writes
/// out_dir/checkpoints/base.ckpt.
TrainResult train_base(const RunConfig& cfg, const Dataset& data,
                       const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct UnlearnResult {
  Denoiser model;
  RunRecord record;
};

/// cfg.unlearn.steps unlearning updates from `base`, evaluated before the
/// first step, at the configured cadence and after the last step. With
/// out_dir, writes out_dir/checkpoints/unlearned.ckpt.
UnlearnResult run_unlearn(const RunConfig& cfg, const Dataset& data, const Denoiser& base,
                          const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Metric families evaluated for this data kind when cfg.eval.metrics is empty.
std::vector<std::string> default_metrics(const Dataset& data);

/// Metric rows comparing `model` against `base`. All randomness derives from
/// cfg.seed, so equal inputs give equal rows and base-vs-base deltas are 0.
std::vector<MetricRow> eval_suite(const Denoiser& model, const Denoiser& base, const Dataset& data,
                                  const RunConfig& cfg, long step);

/// Indices of the retain rows used for descent during unlearning.
std::vector<std::size_t> retain_pool(const RunConfig& cfg, const Dataset& data);

// ---------------------------------------------------------------------------
// Toy three-window study

struct WindowOutcome {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
  double hit_rate = 0.0;
  double coverage = 0.0;
  Tensor samples;
};

struct ToyFigResult {
  double base_hit_rate = 0.0;
  double base_coverage = 0.0;
  Tensor base_samples;
  std::vector<WindowOutcome> windows;
};

/// Preset for the toy study: two-moons, clustered forget set, GA with a few
/// retain anchors.
RunConfig toy_defaults();

/// Trains one base model, then runs the objective restricted to the early
/// [0, 0.25), middle [0.25, 0.75) and late [0.75, 1) windows. With out_dir,
/// writes samples/{base,early,middle,late}.f64 and summary.csv.
ToyFigResult toyfig(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Same study from an existing base model.
ToyFigResult toyfig_from(const RunConfig& cfg, const Dataset& data, const Denoiser& base);

void write_toyfig(const std::filesystem::path& out_dir, const ToyFigResult& result);

// ---------------------------------------------------------------------------
// Run directories

/// Writes config.snapshot and metrics.csv for a record.
void write_run_files(const std::filesystem::path& out_dir, const RunRecord& record);

}  // namespace seldiff
