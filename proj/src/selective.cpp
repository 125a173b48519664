#include "seldiff/selective.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

namespace seldiff {

// ---------------------------------------------------------------------------
// Time selection

void TimeWindowConfig::validate() const {
  if (T < 1) throw std::invalid_argument("time window needs T >= 1");
  if (!(k >= 0.0 && k <= 1.0)) throw std::invalid_argument("time window k must lie in [0, 1], got " + std::to_string(k));
  if (!(0 <= t1 && t1 < t2 && t2 <= T)) {
    throw std::invalid_argument("time window needs 0 <= t1 < t2 <= T, got t1=" + std::to_string(t1) +
                                " t2=" + std::to_string(t2) + " T=" + std::to_string(T));
  }
}

TimeWindowConfig TimeWindowConfig::from_fractions(double k, double lo, double hi, int T) {
  TimeWindowConfig c{k, static_cast<int>(std::lround(lo * T)), static_cast<int>(std::lround(hi * T)), T};
  c.validate();
  return c;
}

namespace {

// Probability that a draw lands inside the window.
double inside_mass(const TimeWindowConfig& cfg) { return cfg.covers_all() ? 1.0 : 1.0 - cfg.k; }

}  // namespace

double pdf(const TimeWindowConfig& cfg, int t) {
  cfg.validate();
  if (t < 0 || t >= cfg.T) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(cfg.T) + ")");
  }
  const int n_in = cfg.t2 - cfg.t1;
  const int n_out = cfg.T - n_in;
  if (cfg.contains(t)) return inside_mass(cfg) / n_in;
  return cfg.k / n_out;
}

int sample_timestep(const TimeWindowConfig& cfg, Rng& rng) {
  const int n_in = cfg.t2 - cfg.t1;
  const int n_out = cfg.T - n_in;
  const double m_in = inside_mass(cfg);
  const double u = rng.uniform();
  if (u < m_in) {
    const int i = std::min(n_in - 1, static_cast<int>(u / m_in * n_in));
    return cfg.t1 + i;
  }
  // outside indices are [0, t1) followed by [t2, T)
  const int j = std::min(n_out - 1, static_cast<int>((u - m_in) / (1.0 - m_in) * n_out));
  return j < cfg.t1 ? j : cfg.t2 + (j - cfg.t1);
}

int sample_uniform_timestep(int T, Rng& rng) {
  return std::min(T - 1, static_cast<int>(rng.uniform() * T));
}

// ---------------------------------------------------------------------------
// FFT

namespace {

using cd = std::complex<double>;

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

// In-place 1-D transform with sign -1 (forward) or +1 (inverse, unnormalised).
void fft1d(std::vector<cd>& a, int sign) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  if (is_pow2(n)) {
    for (std::size_t i = 1, j = 0; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
      for (std::size_t i = 0; i < n; i += len) {
        for (std::size_t k = 0; k < len / 2; ++k) {
          const cd w = std::polar(1.0, ang * static_cast<double>(k));
          const cd x = a[i + k];
          const cd y = a[i + k + len / 2] * w;
          a[i + k] = x + y;
          a[i + k + len / 2] = x - y;
        }
      }
    }
    return;
  }
  // Direct O(n^2) transform for other lengths, twiddles indexed mod n.
  std::vector<cd> tw(n);
  for (std::size_t k = 0; k < n; ++k) {
    tw[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
  }
  std::vector<cd> out(n);
  for (std::size_t u = 0; u < n; ++u) {
    cd s = 0.0;
    for (std::size_t x = 0; x < n; ++x) s += a[x] * tw[(u * x) % n];
    out[u] = s;
  }
  a.swap(out);
}

// Row then column transforms over an H x W complex plane.
void fft2d(std::vector<cd>& plane, std::size_t H, std::size_t W, int sign) {
  std::vector<cd> line(W);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) line[c] = plane[r * W + c];
    fft1d(line, sign);
    for (std::size_t c = 0; c < W; ++c) plane[r * W + c] = line[c];
  }
  line.resize(H);
  for (std::size_t c = 0; c < W; ++c) {
    for (std::size_t r = 0; r < H; ++r) line[r] = plane[r * W + c];
    fft1d(line, sign);
    for (std::size_t r = 0; r < H; ++r) plane[r * W + c] = line[r];
  }
}

std::pair<std::size_t, std::size_t> image_dims(const Tensor& image) {
  if (image.rank() != 2) throw ShapeError("expected an (H, W) image, got " + shape_string(image.shape()));
  return {image.shape()[0], image.shape()[1]};
}

}  // namespace

Spectrum dft2(const Tensor& image) {
  const auto [H, W] = image_dims(image);
  std::vector<cd> plane(H * W);
  for (std::size_t i = 0; i < H * W; ++i) plane[i] = image[i];
  fft2d(plane, H, W, -1);
  Spectrum s{H, W, std::vector<double>(H * W), std::vector<double>(H * W)};
  for (std::size_t i = 0; i < H * W; ++i) {
    s.re[i] = plane[i].real();
    s.im[i] = plane[i].imag();
  }
  return s;
}

Spectrum idft2_complex(const Spectrum& spec) {
  const std::size_t n = spec.H * spec.W;
  std::vector<cd> plane(n);
  for (std::size_t i = 0; i < n; ++i) plane[i] = cd(spec.re[i], spec.im[i]);
  fft2d(plane, spec.H, spec.W, +1);
  const double inv = 1.0 / static_cast<double>(n);
  Spectrum out{spec.H, spec.W, std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.re[i] = plane[i].real() * inv;
    out.im[i] = plane[i].imag() * inv;
  }
  return out;
}

Tensor idft2(const Spectrum& spec) {
  Spectrum c = idft2_complex(spec);
  return Tensor(Shape{spec.H, spec.W}, std::move(c.re));
}

// ---------------------------------------------------------------------------
// Radial low-pass

void FrequencyFilterConfig::validate() const {
  auto check_r = [](double r) {
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("cutoff r_t must lie in (0, 1], got " + std::to_string(r));
  };
  check_r(r_t);
  for (double r : r_by_t) check_r(r);
  if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("high-frequency weight s must lie in [0, 1], got " + std::to_string(s));
}

double FrequencyFilterConfig::cutoff_at(int t) const {
  if (r_by_t.empty()) return r_t;
  if (t < 0 || static_cast<std::size_t>(t) >= r_by_t.size()) {
    throw std::out_of_range("no cutoff for timestep " + std::to_string(t));
  }
  return r_by_t[t];
}

double normalized_radius(std::size_t u, std::size_t v, std::size_t H, std::size_t W) {
  const double du = static_cast<double>(std::min(u, H - u));
  const double dv = static_cast<double>(std::min(v, W - v));
  const double ru = static_cast<double>(H / 2), rv = static_cast<double>(W / 2);
  const double rmax = std::sqrt(ru * ru + rv * rv);
  if (rmax == 0.0) return 0.0;
  return std::sqrt(du * du + dv * dv) / rmax;
}

Tensor radial_mask(std::size_t H, std::size_t W, double r_t, double s) {
  FrequencyFilterConfig{r_t, s, {}}.validate();
  Tensor m(Shape{H, W});
  for (std::size_t u = 0; u < H; ++u)
    for (std::size_t v = 0; v < W; ++v) m.at(u, v) = normalized_radius(u, v, H, W) <= r_t ? 1.0 : s;
  return m;
}

Tensor radial_mask(std::size_t H, std::size_t W, const FrequencyFilterConfig& cfg) {
  return radial_mask(H, W, cfg.r_t, cfg.s);
}

Tensor low_pass(const Tensor& image, double r_t, double s) {
  const auto [H, W] = image_dims(image);
  const Tensor mask = radial_mask(H, W, r_t, s);
  bool all_ones = true;
  for (double v : mask.data()) all_ones = all_ones && v == 1.0;
  if (all_ones) return image;

  Spectrum spec = dft2(image);
  for (std::size_t i = 0; i < H * W; ++i) {
    spec.re[i] *= mask[i];
    spec.im[i] *= mask[i];
  }
  Spectrum back = idft2_complex(spec);
  double residue = 0.0;
  for (double v : back.im) residue = std::max(residue, std::abs(v));
  if (residue > 1e-6) {
    throw std::logic_error("low_pass: imaginary residue " + std::to_string(residue) + " (mask not symmetric)");
  }
  return Tensor(Shape{H, W}, std::move(back.re));
}

Tensor low_pass(const Tensor& image, const FrequencyFilterConfig& cfg) { return low_pass(image, cfg.r_t, cfg.s); }

Tensor low_pass_rows(const Tensor& rows, std::size_t H, std::size_t W, double r_t, double s) {
  if (rows.cols() != H * W) {
    throw ShapeError("low_pass_rows: rows of width " + std::to_string(rows.cols()) + " are not " +
                     std::to_string(H) + "x" + std::to_string(W) + " images");
  }
  Tensor out = rows;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    Tensor img(Shape{H, W}, std::vector<double>(rows.data().begin() + r * H * W, rows.data().begin() + (r + 1) * H * W));
    Tensor f = low_pass(img, r_t, s);
    std::copy(f.data().begin(), f.data().end(), out.data().begin() + r * H * W);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policy

std::string to_string(FilterTarget f) {
  return f == FilterTarget::forget_only ? "forget-only" : "forget-and-retain";
}

std::string to_string(TargetMode m) {
  return m == TargetMode::input_only ? "filter-input-only" : "filter-input-and-target";
}

FilterTarget filter_target_from_string(const std::string& s) {
  if (s == "forget-only") return FilterTarget::forget_only;
  if (s == "forget-and-retain") return FilterTarget::forget_and_retain;
  throw std::invalid_argument("unknown filter target '" + s + "'");
}

TargetMode target_mode_from_string(const std::string& s) {
  if (s == "filter-input-only") return TargetMode::input_only;
  if (s == "filter-input-and-target") return TargetMode::input_and_target;
  throw std::invalid_argument("unknown filter target mode '" + s + "'");
}

int NoisingPolicy::draw_timestep(int T, Rng& rng) const {
  if (time) return sample_timestep(*time, rng);
  return sample_uniform_timestep(T, rng);
}

bool NoisingPolicy::filters(bool forget_branch) const {
  if (!freq || image_h * image_w == 0) return false;
  return forget_branch || apply_to == FilterTarget::forget_and_retain;
}

Tensor NoisingPolicy::filter(const Tensor& rows, std::span<const int> t, bool forget_branch) const {
  if (!filters(forget_branch) || rows.cols() != image_h * image_w) return rows;
  Tensor out = rows;
  const std::size_t n = image_h * image_w;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    Tensor img(Shape{image_h, image_w}, std::vector<double>(rows.data().begin() + r * n, rows.data().begin() + (r + 1) * n));
    Tensor f = low_pass(img, freq->cutoff_at(t[r]), freq->s);
    std::copy(f.data().begin(), f.data().end(), out.data().begin() + r * n);
  }
  return out;
}

Tensor NoisingPolicy::filter_target(const Tensor& rows, std::span<const int> t, bool forget_branch) const {
  if (target_mode != TargetMode::input_and_target) return rows;
  return filter(rows, t, forget_branch);
}

}  // namespace seldiff
