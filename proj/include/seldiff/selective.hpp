#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seldiff/rng.hpp"
#include "seldiff/tensor.hpp"

namespace seldiff {

// ---------------------------------------------------------------------------
// Time selection

/// Non-uniform timestep distribution concentrating mass 1-k on the window
/// [t1, t2) and spreading k over the remaining indices of [0, T).
///
/// The window is half-open so that it holds exactly t2 - t1 indices and the
/// outside holds T - (t2 - t1); the probabilities (1-k)/(t2-t1) and
/// k/(T-(t2-t1)) are then exact pmf values. When the window covers all of
/// [0, T) there is no outside and the distribution is uniform.
struct TimeWindowConfig {
  double k = 0.0;
  int t1 = 0;
  int t2 = 0;
  int T = 0;

  void validate() const;
  bool covers_all() const noexcept { return t1 == 0 && t2 == T; }
  bool contains(int t) const noexcept { return t >= t1 && t < t2; }

  /// Window from fractions of T, rounded to the nearest index.
  static TimeWindowConfig from_fractions(double k, double lo, double hi, int T);

  friend bool operator==(const TimeWindowConfig&, const TimeWindowConfig&) = default;
};

/// Probability mass of timestep t.
double pdf(const TimeWindowConfig& cfg, int t);

/// Draws one timestep by inverting the cdf with a single uniform draw. For a
/// window covering [0, T) this is floor(u * T), identical to uniform sampling.
int sample_timestep(const TimeWindowConfig& cfg, Rng& rng);

/// Uniform timestep with the same uniform consumption as sample_timestep.
int sample_uniform_timestep(int T, Rng& rng);

// ---------------------------------------------------------------------------
// Frequency selection

/// Complex 2-D spectrum with unshifted indexing: bin (u, v) holds frequency
/// (u, v) and DC sits at (0, 0); negative frequencies wrap to the high indices.
struct Spectrum {
  std::size_t H = 0;
  std::size_t W = 0;
  std::vector<double> re;
  std::vector<double> im;

  double power(std::size_t u, std::size_t v) const {
    const double a = re[u * W + v], b = im[u * W + v];
    return a * a + b * b;
  }
};

/// T(u,v) = sum_{x,y} img(x,y) exp(-2 pi j (u x / H + v y / W)) for an (H, W) tensor.
Spectrum dft2(const Tensor& image);
/// Inverse with 1/(HW) normalisation; returns the real part.
Tensor idft2(const Spectrum& spec);
/// Inverse keeping the imaginary plane, as a Spectrum-shaped pair.
Spectrum idft2_complex(const Spectrum& spec);

/// Radial cutoff r_t with high-frequency weight s.
///
/// r is the distance of a bin from DC on centred coordinates divided by the
/// corner radius sqrt(floor(H/2)^2 + floor(W/2)^2), so r lies in [0, 1].
struct FrequencyFilterConfig {
  double r_t = 0.15;
  double s = 0.0;
  /// Optional per-timestep cutoffs; when non-empty, entry t overrides r_t.
  std::vector<double> r_by_t;

  void validate() const;
  double cutoff_at(int t) const;

  friend bool operator==(const FrequencyFilterConfig&, const FrequencyFilterConfig&) = default;
};

/// Normalised centred radius of bin (u, v).
double normalized_radius(std::size_t u, std::size_t v, std::size_t H, std::size_t W);

/// Mask on unshifted bins: 1 where radius <= r_t, s elsewhere.
Tensor radial_mask(std::size_t H, std::size_t W, double r_t, double s);
Tensor radial_mask(std::size_t H, std::size_t W, const FrequencyFilterConfig& cfg);

/// idft2(dft2(image) * mask). Returns the input unchanged when the mask is all ones.
/// Throws std::logic_error if the inverse has an imaginary residue above 1e-6.
Tensor low_pass(const Tensor& image, double r_t, double s);
Tensor low_pass(const Tensor& image, const FrequencyFilterConfig& cfg);

/// Applies low_pass to each row of a (batch, H*W) matrix.
Tensor low_pass_rows(const Tensor& rows, std::size_t H, std::size_t W, double r_t, double s);

// ---------------------------------------------------------------------------
// Composition

enum class FilterTarget { forget_only, forget_and_retain };
enum class TargetMode { input_only, input_and_target };

std::string to_string(FilterTarget f);
std::string to_string(TargetMode m);
FilterTarget filter_target_from_string(const std::string& s);
TargetMode target_mode_from_string(const std::string& s);

/// How an objective draws timesteps and transforms its noisy inputs.
///
/// The default policy samples t uniformly and leaves inputs untouched. Frequency
/// filtering only applies to image rows (image_h * image_w == data width); for
/// point data it is the identity.
struct NoisingPolicy {
  std::optional<TimeWindowConfig> time;
  std::optional<FrequencyFilterConfig> freq;
  FilterTarget apply_to = FilterTarget::forget_only;
  TargetMode target_mode = TargetMode::input_only;
  std::size_t image_h = 0;
  std::size_t image_w = 0;

  int draw_timestep(int T, Rng& rng) const;
  bool filters(bool forget_branch) const;
  /// Filters row i of `rows` with the cutoff for t[i]; identity when not filtering.
  Tensor filter(const Tensor& rows, std::span<const int> t, bool forget_branch) const;
  /// Same as filter() but only when targets are filtered too.
  Tensor filter_target(const Tensor& rows, std::span<const int> t, bool forget_branch) const;
};

}  // namespace seldiff
