#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "seldiff/ddpm.hpp"
#include "seldiff/rng.hpp"

namespace seldiff {

// ---------------------------------------------------------------------------
// Embeddings

/// Deterministic map from an image (any shape) to a unit-norm feature vector.
struct Embedding {
  std::string name;
  std::function<std::vector<double>(const Tensor&)> fn;

  std::vector<double> operator()(const Tensor& x) const { return fn(x); }
};

/// Mean-centred pixels scaled to unit norm. A constant input maps to the
/// uniform unit vector.
Embedding flatten_cosine();

/// Intensity histograms of non-overlapping patch x patch tiles of an (H, W)
/// image over [lo, hi] (values clamped), concatenated and scaled to unit norm.
Embedding patch_histogram(std::size_t H, std::size_t W, std::size_t patch = 8, std::size_t bins = 8, double lo = -1.0,
                          double hi = 1.0);

/// Embedding by descriptor ("flatten-cosine" or "patch-histogram"). Images are (H, W).
Embedding make_embedding(const std::string& name, std::size_t H, std::size_t W);

/// Cosine similarity clamped to [-1, 1]. Equal vectors give exactly 1.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// SSCD-style similarity

enum class SscdDenominator { squared_norm, norm };

std::string to_string(SscdDenominator d);
SscdDenominator sscd_denominator_from_string(const std::string& s);

struct SscdNormConfig {
  double rho = 100.0;
  double eps_div = 1e-8;
  SscdDenominator denominator = SscdDenominator::squared_norm;

  void validate() const;
  /// rho = 100 rescaled so the per-pixel perturbation of a 3x256x256 image is
  /// preserved for an image with `numel` values.
  static double scaled_rho(std::size_t numel);

  friend bool operator==(const SscdNormConfig&, const SscdNormConfig&) = default;
};

/// x0 + rho * (x0_hat - x0) / (||x0_hat - x0||^2 + eps), or with ||.|| in the norm mode.
Tensor sscd_perturbed_input(const Tensor& x0, const Tensor& x0_hat, const SscdNormConfig& cfg);

/// Similarity of x0 to its projected perturbation toward x0_hat.
double sscd_norm(const Tensor& x0, const Tensor& x0_hat, const Embedding& embed, const SscdNormConfig& cfg = {});

/// Similarity of the embeddings of x0 and x0_hat.
double sscd_plain(const Tensor& x0, const Tensor& x0_hat, const Embedding& embed);

// ---------------------------------------------------------------------------
// Power spectral density

/// Radially averaged power spectrum. Bin 0 holds DC alone; bins 1..n-1 split
/// normalised radius (0, 1] into equal-width annuli.
struct PsdCurve {
  /// Upper radius of each bin (0 for the DC bin).
  std::vector<double> radius;
  /// Mean |F|^2 over the bins' frequencies.
  std::vector<double> power;
  std::vector<std::size_t> count;

  /// Sum of |F|^2 over all frequencies.
  double total() const;
};

/// PSD of an (H, W) image. `subtract_mean` removes the pixel mean first.
PsdCurve psd_radial(const Tensor& image, std::size_t n_bins, bool subtract_mean = false);

// ---------------------------------------------------------------------------
// Gradient-norm diagnostics

/// Half-open timestep range [lo, hi).
struct TimestepRange {
  int lo = 0;
  int hi = 0;
};

/// ||grad_theta epsilon_loss(x0)||^2 averaged over n_draws (t, eps) draws. Each
/// draw takes t (uniform over the range, default [0, T)) then eps.
double grad_norm_of(const Denoiser& model, const Tensor& x0, const NoiseSchedule& sched, int n_draws, Rng& rng,
                    std::optional<TimestepRange> range = std::nullopt);

/// grad_norm_of over `n_bins` equal consecutive timestep ranges.
std::vector<double> grad_norm_curve(const Denoiser& model, const Tensor& x0, const NoiseSchedule& sched,
                                    std::size_t n_bins, int draws_per_bin, Rng& rng);

/// Complementary split of image rows: low = low_pass(x, cutoff, 0), high = x - low.
struct FrequencySplit {
  Tensor low;
  Tensor high;
};
FrequencySplit decompose(const Tensor& rows, std::size_t H, std::size_t W, double cutoff);

struct FrequencyGradNorm {
  double low = 0.0;
  double high = 0.0;
};

/// grad_norm_of with the low and the high part of x_t fed to the model in
/// place of x_t. Both parts share each (t, eps) draw; targets stay eps.
FrequencyGradNorm freq_decomposed_grad_norm(const Denoiser& model, const Tensor& x0, std::size_t H, std::size_t W,
                                            const NoiseSchedule& sched, double cutoff, int n_draws, Rng& rng);

// ---------------------------------------------------------------------------
// Embedding-similarity trajectory

struct SimilarityPoint {
  /// Noise level: 0 is clean data, level l is timestep index l - 1.
  int level = 0;
  double to_x0 = 0.0;
  double to_nn = 0.0;
};

/// Nearest row of `dataset` to x0 in L2, skipping rows equal to x0.
std::size_t nearest_neighbor(const Tensor& x0, const Tensor& dataset);

/// For each level, mean similarity of embed(x_t) to embed(x0) and to the
/// embedding of x0's nearest neighbour, over n_draws noise draws. Rows are
/// reshaped to (H, W) before embedding.
std::vector<SimilarityPoint> similarity_trajectory(const Tensor& x0, const Tensor& dataset, std::size_t H,
                                                   std::size_t W, const NoiseSchedule& sched, const Embedding& embed,
                                                   const std::vector<int>& levels, int n_draws, Rng& rng);

// ---------------------------------------------------------------------------
// Toy coverage

/// Fraction of samples within L2 `radius` of some forget point.
double forget_hit_rate(const Tensor& samples, const Tensor& forget_points, double radius);

/// Fraction of reference points with some sample within L2 `radius`.
double retain_coverage(const Tensor& samples, const Tensor& retain_manifold, double radius);

// ---------------------------------------------------------------------------
// Serialisation

struct MetricRow {
  std::string run_id;
  long step = 0;
  std::string sample_id;
  std::string metric;
  double value = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

/// CSV with header run_id,step,sample_id,metric,value; values printed with 17 significant digits.
void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(std::istream& is);

}  // namespace seldiff
