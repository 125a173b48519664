#include "seldiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "seldiff/selective.hpp"

namespace seldiff {

namespace {

std::vector<double> unit(std::vector<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double n = std::sqrt(s);
  if (n == 0.0 || !std::isfinite(n)) {
    const double u = 1.0 / std::sqrt(static_cast<double>(v.size()));
    std::fill(v.begin(), v.end(), u);
    return v;
  }
  for (double& x : v) x /= n;
  return v;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

Tensor as_image(const Tensor& row, std::size_t H, std::size_t W) { return row.reshaped(Shape{H, W}); }

double squared_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t c = a.cols();
  double s = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double d = a[i * c + k] - b[j * c + k];
    s += d * d;
  }
  return s;
}

void require_points(const Tensor& a, const Tensor& b, double radius, const char* what) {
  if (!(radius > 0.0)) throw std::invalid_argument(std::string(what) + ": radius must be positive");
  if (a.rows() > 0 && b.rows() > 0 && a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

// Fraction of rows of `probe` with some row of `ref` within radius.
double fraction_near(const Tensor& probe, const Tensor& ref, double radius) {
  if (probe.rank() != 2 || probe.rows() == 0) return 0.0;
  if (ref.rank() != 2 || ref.rows() == 0) return 0.0;
  const double r2 = radius * radius;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probe.rows(); ++i) {
    for (std::size_t j = 0; j < ref.rows(); ++j) {
      if (squared_distance(probe, i, ref, j) <= r2) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(probe.rows());
}

}  // namespace

Embedding flatten_cosine() {
  return {"flatten-cosine", [](const Tensor& x) {
            std::vector<double> v(x.data().begin(), x.data().end());
            if (v.empty()) throw std::invalid_argument("flatten-cosine: empty input");
            double m = 0.0;
            for (double a : v) m += a;
            m /= static_cast<double>(v.size());
            for (double& a : v) a -= m;
            return unit(std::move(v));
          }};
}

Embedding patch_histogram(std::size_t H, std::size_t W, std::size_t patch, std::size_t bins, double lo, double hi) {
  if (H == 0 || W == 0 || patch == 0 || bins == 0 || !(hi > lo)) {
    throw std::invalid_argument("patch-histogram: invalid geometry or range");
  }
  return {"patch-histogram", [=](const Tensor& x) {
            if (x.numel() != H * W) {
              throw ShapeError("patch-histogram expects " + std::to_string(H * W) + " values, got " +
                               shape_string(x.shape()));
            }
            const std::size_t ph = (H + patch - 1) / patch, pw = (W + patch - 1) / patch;
            std::vector<double> v(ph * pw * bins, 0.0);
            for (std::size_t i = 0; i < H; ++i) {
              for (std::size_t j = 0; j < W; ++j) {
                const double a = std::clamp(x[i * W + j], lo, hi);
                const auto b = std::min(bins - 1, static_cast<std::size_t>((a - lo) / (hi - lo) * bins));
                v[((i / patch) * pw + j / patch) * bins + b] += 1.0;
              }
            }
            return unit(std::move(v));
          }};
}

Embedding make_embedding(const std::string& name, std::size_t H, std::size_t W) {
  if (name == "flatten-cosine") return flatten_cosine();
  if (name == "patch-histogram") return patch_histogram(H, W);
  throw std::invalid_argument("unknown embedding '" + name + "'");
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: lengths differ");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  // sqrt(fl(s * s)) == s, so equal vectors give exactly 1
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

std::string to_string(SscdDenominator d) { return d == SscdDenominator::squared_norm ? "squared-norm" : "norm"; }

SscdDenominator sscd_denominator_from_string(const std::string& s) {
  if (s == "squared-norm") return SscdDenominator::squared_norm;
  if (s == "norm") return SscdDenominator::norm;
  throw std::invalid_argument("unknown SSCD denominator '" + s + "'");
}

void SscdNormConfig::validate() const {
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw std::invalid_argument("sscd rho must be finite and non-negative");
  if (!(eps_div > 0.0)) throw std::invalid_argument("sscd eps_div must be positive");
}

double SscdNormConfig::scaled_rho(std::size_t numel) {
  return 100.0 * std::sqrt(static_cast<double>(numel) / 196608.0);
}

Tensor sscd_perturbed_input(const Tensor& x0, const Tensor& x0_hat, const SscdNormConfig& cfg) {
  cfg.validate();
  require_same_shape(x0, x0_hat, "sscd_norm");
  const std::size_t n = x0.numel();
  std::vector<double> delta(n);
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    delta[i] = x0_hat[i] - x0[i];
    sq += delta[i] * delta[i];
  }
  const double denom = (cfg.denominator == SscdDenominator::squared_norm ? sq : std::sqrt(sq)) + cfg.eps_div;
  Tensor out = x0;
  for (std::size_t i = 0; i < n; ++i) out[i] = x0[i] + cfg.rho * delta[i] / denom;
  return out;
}

double sscd_norm(const Tensor& x0, const Tensor& x0_hat, const Embedding& embed, const SscdNormConfig& cfg) {
  return cosine_similarity(embed(x0), embed(sscd_perturbed_input(x0, x0_hat, cfg)));
}

double sscd_plain(const Tensor& x0, const Tensor& x0_hat, const Embedding& embed) {
  require_same_shape(x0, x0_hat, "sscd_plain");
  return cosine_similarity(embed(x0), embed(x0_hat));
}

double PsdCurve::total() const {
  double s = 0.0;
  for (std::size_t i = 0; i < power.size(); ++i) s += power[i] * static_cast<double>(count[i]);
  return s;
}

PsdCurve psd_radial(const Tensor& image, std::size_t n_bins, bool subtract_mean) {
  if (n_bins < 2) throw std::invalid_argument("psd_radial needs at least 2 bins");
  if (image.rank() != 2) throw ShapeError("psd_radial expects an (H, W) image, got " + shape_string(image.shape()));
  const std::size_t H = image.shape()[0], W = image.shape()[1];
  Tensor img = image;
  if (subtract_mean) {
    double m = 0.0;
    for (double v : img.data()) m += v;
    m /= static_cast<double>(img.numel());
    for (double& v : img.data()) v -= m;
  }
  const Spectrum spec = dft2(img);
  PsdCurve c;
  c.radius.resize(n_bins);
  c.power.assign(n_bins, 0.0);
  c.count.assign(n_bins, 0);
  const double annuli = static_cast<double>(n_bins - 1);
  for (std::size_t b = 1; b < n_bins; ++b) c.radius[b] = static_cast<double>(b) / annuli;
  for (std::size_t u = 0; u < H; ++u) {
    for (std::size_t v = 0; v < W; ++v) {
      std::size_t b = 0;
      if (u != 0 || v != 0) {
        const double r = normalized_radius(u, v, H, W);
        const auto k = static_cast<std::size_t>(std::ceil(r * annuli));
        b = std::clamp<std::size_t>(k, 1, n_bins - 1);
      }
      c.power[b] += spec.power(u, v);
      ++c.count[b];
    }
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (c.count[b] > 0) c.power[b] /= static_cast<double>(c.count[b]);
  }
  return c;
}

namespace {

// Squared parameter-gradient norm of w_t * mean (model(input) - eps)^2 for one row.
double draw_grad_norm(const Denoiser& model, const Tensor& input, int t, const Tensor& eps,
                      const NoiseSchedule& sched) {
  Graph g;
  const std::vector<Var> params = model.bind(g);
  const int ts[1] = {t};
  Var pred = model.forward(g, params, g.constant(input), ts);
  const double w[1] = {sched.loss_weight[t]};
  Var loss = weighted_sum(g, per_sample_error(g, pred, eps), w);
  const double n = global_norm(g.backward(loss));
  return n * n;
}

Tensor single_row(const Tensor& x0, const Denoiser& model) {
  if (x0.numel() != model.arch().data_dim) {
    throw ShapeError("grad_norm_of expects one sample of width " + std::to_string(model.arch().data_dim) + ", got " +
                     shape_string(x0.shape()));
  }
  return x0.reshaped(Shape{1, x0.numel()});
}

int draw_in(const TimestepRange& r, Rng& rng) {
  return r.lo + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(r.hi - r.lo)));
}

TimestepRange checked_range(std::optional<TimestepRange> range, const NoiseSchedule& sched) {
  const TimestepRange r = range.value_or(TimestepRange{0, sched.T});
  if (r.lo < 0 || r.hi > sched.T || r.lo >= r.hi) {
    throw std::invalid_argument("timestep range [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) +
                                ") outside [0, " + std::to_string(sched.T) + ")");
  }
  return r;
}

}  // namespace

double grad_norm_of(const Denoiser& model, const Tensor& x0, const NoiseSchedule& sched, int n_draws, Rng& rng,
                    std::optional<TimestepRange> range) {
  if (n_draws < 1) throw std::invalid_argument("grad_norm_of needs at least one draw");
  const TimestepRange r = checked_range(range, sched);
  const Tensor x = single_row(x0, model);
  double acc = 0.0;
  for (int k = 0; k < n_draws; ++k) {
    const int t = draw_in(r, rng);
    const Tensor eps = rng.normal_tensor(x.shape());
    acc += draw_grad_norm(model, forward_noise(x, t, eps, sched), t, eps, sched);
  }
  return acc / n_draws;
}

std::vector<double> grad_norm_curve(const Denoiser& model, const Tensor& x0, const NoiseSchedule& sched,
                                    std::size_t n_bins, int draws_per_bin, Rng& rng) {
  if (n_bins == 0 || n_bins > static_cast<std::size_t>(sched.T)) {
    throw std::invalid_argument("grad_norm_curve: bin count must lie in [1, T]");
  }
  std::vector<double> out(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    const int lo = static_cast<int>(b * sched.T / n_bins);
    const int hi = static_cast<int>((b + 1) * sched.T / n_bins);
    out[b] = grad_norm_of(model, x0, sched, draws_per_bin, rng, TimestepRange{lo, hi});
  }
  return out;
}

FrequencySplit decompose(const Tensor& rows, std::size_t H, std::size_t W, double cutoff) {
  if (!(cutoff > 0.0 && cutoff < 1.0)) throw std::invalid_argument("frequency cutoff must lie in (0, 1)");
  FrequencySplit s;
  s.low = low_pass_rows(rows, H, W, cutoff, 0.0);
  s.high = kernels::sub(rows, s.low);
  return s;
}

FrequencyGradNorm freq_decomposed_grad_norm(const Denoiser& model, const Tensor& x0, std::size_t H, std::size_t W,
                                            const NoiseSchedule& sched, double cutoff, int n_draws, Rng& rng) {
  if (n_draws < 1) throw std::invalid_argument("freq_decomposed_grad_norm needs at least one draw");
  if (H * W != model.arch().data_dim) throw ShapeError("image geometry does not match the model width");
  const Tensor x = single_row(x0, model);
  FrequencyGradNorm out;
  for (int k = 0; k < n_draws; ++k) {
    const int t = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(sched.T)));
    const Tensor eps = rng.normal_tensor(x.shape());
    const FrequencySplit parts = decompose(forward_noise(x, t, eps, sched), H, W, cutoff);
    out.low += draw_grad_norm(model, parts.low, t, eps, sched);
    out.high += draw_grad_norm(model, parts.high, t, eps, sched);
  }
  out.low /= n_draws;
  out.high /= n_draws;
  return out;
}

std::size_t nearest_neighbor(const Tensor& x0, const Tensor& dataset) {
  const Tensor x = x0.reshaped(Shape{1, x0.numel()});
  if (dataset.rank() != 2 || dataset.cols() != x.cols()) throw ShapeError("nearest_neighbor: width mismatch");
  std::size_t best = dataset.rows();
  double best_d = 0.0;
  for (std::size_t j = 0; j < dataset.rows(); ++j) {
    const double d = squared_distance(dataset, j, x, 0);
    if (d == 0.0) continue;
    if (best == dataset.rows() || d < best_d) {
      best = j;
      best_d = d;
    }
  }
  if (best == dataset.rows()) throw std::invalid_argument("nearest_neighbor: no row differs from x0");
  return best;
}

std::vector<SimilarityPoint> similarity_trajectory(const Tensor& x0, const Tensor& dataset, std::size_t H,
                                                   std::size_t W, const NoiseSchedule& sched, const Embedding& embed,
                                                   const std::vector<int>& levels, int n_draws, Rng& rng) {
  if (n_draws < 1) throw std::invalid_argument("similarity_trajectory needs at least one draw");
  const Tensor x = x0.reshaped(Shape{1, x0.numel()});
  const std::size_t nn = nearest_neighbor(x, dataset);
  const std::vector<double> e0 = embed(as_image(x, H, W));
  const std::vector<double> enn = embed(as_image(dataset.row(nn), H, W));
  std::vector<SimilarityPoint> out;
  for (int level : levels) {
    if (level < 0 || level > sched.T) throw std::invalid_argument("similarity level outside [0, T]");
    SimilarityPoint p{level, 0.0, 0.0};
    for (int k = 0; k < n_draws; ++k) {
      Tensor xt = x;
      if (level > 0) xt = forward_noise(x, level - 1, rng.normal_tensor(x.shape()), sched);
      const std::vector<double> e = embed(as_image(xt, H, W));
      p.to_x0 += cosine_similarity(e, e0);
      p.to_nn += cosine_similarity(e, enn);
    }
    p.to_x0 /= n_draws;
    p.to_nn /= n_draws;
    out.push_back(p);
  }
  return out;
}

double forget_hit_rate(const Tensor& samples, const Tensor& forget_points, double radius) {
  require_points(samples, forget_points, radius, "forget_hit_rate");
  return fraction_near(samples, forget_points, radius);
}

double retain_coverage(const Tensor& samples, const Tensor& retain_manifold, double radius) {
  require_points(samples, retain_manifold, radius, "retain_coverage");
  return fraction_near(retain_manifold, samples, radius);
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << "run_id,step,sample_id,metric,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    os << r.run_id << ',' << r.step << ',' << r.sample_id << ',' << r.metric << ',' << buf << '\n';
  }
}

std::vector<MetricRow> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "run_id,step,sample_id,metric,value") {
    throw std::runtime_error("metrics csv: missing header");
  }
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricRow r;
    std::string step, value;
    if (!std::getline(ss, r.run_id, ',') || !std::getline(ss, step, ',') || !std::getline(ss, r.sample_id, ',') ||
        !std::getline(ss, r.metric, ',') || !std::getline(ss, value)) {
      throw std::runtime_error("metrics csv: malformed row '" + line + "'");
    }
    r.step = std::stol(step);
    r.value = std::stod(value);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace seldiff
