#include "seldiff/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "seldiff/binary_io.hpp"
#include "seldiff/checkpoint.hpp"

namespace seldiff {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Deterministic stream id from a seed and two labels (splitmix64 finaliser).
std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream labels
enum : std::uint64_t {
  kInit = 1,
  kTrain,
  kUnlearn,
  kPool,
  kSamples,
  kGradForget,
  kGradRetain,
  kRecon,
  kFreqForget,
  kFreqRetain,
};

bool wants(const std::vector<std::string>& metrics, const char* name) {
  return std::find(metrics.begin(), metrics.end(), name) != metrics.end();
}

std::string sample_label(const char* set, std::size_t idx) { return std::string(set) + "/" + std::to_string(idx); }

int t_from_fraction(double f, int T) { return static_cast<int>(std::lround(f * T)); }

UnlearnRun make_run(const RunConfig& cfg, const Dataset& data, const Denoiser& base, const NoiseSchedule& sched) {
  UnlearnRun run;
  run.model = base;
  run.reference = base;
  run.sched = sched;
  run.optimizer = Adam(AdamConfig{cfg.unlearn.lr});
  run.clip_norm = cfg.unlearn.clip_norm;
  run.objective = cfg.objective;
  run.policy = cfg.policy(data.image_h, data.image_w);
  run.forget = data.forget();
  run.retain = select_rows(data.data, retain_pool(cfg, data));
  run.forget_batch = cfg.unlearn.forget_batch;
  run.retain_batch = cfg.unlearn.retain_batch;
  run.image_h = data.image_h;
  run.image_w = data.image_w;
  return run;
}

}  // namespace

TrainResult train_base(const RunConfig& cfg, const Dataset& data, const std::optional<fs::path>& out_dir) {
  cfg.validate();
  if (cfg.arch.data_dim != data.data.cols()) {
    throw ShapeError("model width " + std::to_string(cfg.arch.data_dim) + " does not match data width " +
                     std::to_string(data.data.cols()));
  }
  const NoiseSchedule sched = cfg.schedule();
  TrainResult res{Denoiser(cfg.arch, mix(cfg.seed, kInit)), {}};
  RunRecord& rec = res.record;
  rec.run_id = run_id(cfg);
  rec.config_snapshot = serialize_config(cfg);
  Adam opt(AdamConfig{cfg.train.lr});
  Rng rng(mix(cfg.seed, kTrain));
  const std::size_t n = data.data.rows();
  const auto t0 = Clock::now();
  double prev_window = -1.0;
  for (long step = 0; step < cfg.train.steps; ++step) {
    std::vector<std::size_t> idx(cfg.train.batch_size);
    for (auto& i : idx) i = rng.uniform_index(n);
    const Tensor x0 = select_rows(data.data, idx);
    std::vector<int> t(idx.size());
    for (auto& ti : t) ti = sample_uniform_timestep(sched.T, rng);
    const Tensor eps = rng.normal_tensor(x0.shape());
    Graph g;
    const std::vector<Var> params = res.model.bind(g);
    double loss = 0.0;
    Gradients grads;
    try {
      const Var l = epsilon_loss(g, res.model, params, x0, t, eps, sched);
      loss = l.value().item();
      grads = g.backward(l);
    } catch (const NumericError& e) {
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(loss)) {
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": loss " + std::to_string(loss));
    }
    opt.step(res.model.params(), grads);
    rec.loss_history.push_back(loss);
    rec.steps_run = step + 1;

    const long w = cfg.train.plateau_window;
    if (w > 0 && rec.steps_run % w == 0) {
      const double mean =
          std::accumulate(rec.loss_history.end() - w, rec.loss_history.end(), 0.0) / static_cast<double>(w);
      if (prev_window > 0.0 && rec.steps_run >= cfg.train.min_steps &&
          (prev_window - mean) / prev_window < cfg.train.plateau_tol) {
        break;
      }
      prev_window = mean;
    }
  }
  rec.phase_seconds["train"] = rec.steps_run == 0 ? 0.0 : seconds_since(t0);
  if (out_dir) {
    const fs::path p = *out_dir / "checkpoints" / "base.ckpt";
    fs::create_directories(p.parent_path());
    save_checkpoint(p, res.model, sched);
    rec.checkpoints.push_back(p.string());
  }
  return res;
}

std::vector<std::size_t> retain_pool(const RunConfig& cfg, const Dataset& data) {
  std::vector<std::size_t> pool = data.retain_idx;
  const std::size_t k = cfg.unlearn.retain_anchors;
  if (k == 0 || k >= pool.size()) return pool;
  Rng rng(mix(cfg.seed, kPool));
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::string> default_metrics(const Dataset& data) {
  if (data.is_image()) return {"sscd", "psd", "grad_norm", "freq_grad_norm"};
  return {"hit_rate", "coverage", "grad_norm"};
}

std::vector<MetricRow> eval_suite(const Denoiser& model, const Denoiser& base, const Dataset& data,
                                  const RunConfig& cfg, long step) {
  if (!(model.arch() == base.arch())) throw std::invalid_argument("eval_suite: model and base architectures differ");
  const NoiseSchedule sched = cfg.schedule();
  const std::vector<std::string> metrics = cfg.eval.metrics.empty() ? default_metrics(data) : cfg.eval.metrics;
  const std::string id = run_id(cfg);
  std::vector<MetricRow> rows;
  auto emit = [&](const std::string& sample, const std::string& metric, double v) {
    rows.push_back({id, step, sample, metric, v});
  };

  if (wants(metrics, "hit_rate") || wants(metrics, "coverage")) {
    const Tensor s = sample(model, sched, cfg.eval.n_samples, mix(cfg.seed, kSamples));
    if (wants(metrics, "hit_rate")) emit("all", "forget_hit_rate", forget_hit_rate(s, data.forget(), cfg.eval.radius));
    if (wants(metrics, "coverage")) emit("all", "retain_coverage", retain_coverage(s, data.retain_eval(), cfg.eval.radius));
  }

  const std::size_t n_probe = std::min(cfg.eval.retain_probe, data.retain_eval_idx.size());
  struct Probe {
    const char* set;
    std::size_t idx;
  };
  std::vector<Probe> probes;
  for (std::size_t i : data.forget_idx) probes.push_back({"forget", i});
  for (std::size_t k = 0; k < n_probe; ++k) probes.push_back({"retain", data.retain_eval_idx[k]});

  if (wants(metrics, "grad_norm")) {
    double sum_f = 0.0, sum_r = 0.0;
    std::size_t nf = 0, nr = 0;
    for (const auto& p : probes) {
      const Tensor x0 = data.data.row(p.idx);
      const auto stream = mix(cfg.seed, p.set[0] == 'f' ? kGradForget : kGradRetain, p.idx);
      Rng r1(stream), r2(stream);
      const double g = grad_norm_of(model, x0, sched, cfg.eval.grad_draws, r1);
      const double gb = grad_norm_of(base, x0, sched, cfg.eval.grad_draws, r2);
      emit(sample_label(p.set, p.idx), "grad_norm", g);
      emit(sample_label(p.set, p.idx), "grad_norm_delta", g - gb);
      (p.set[0] == 'f' ? sum_f : sum_r) += g - gb;
      ++(p.set[0] == 'f' ? nf : nr);
    }
    if (nf) emit("forget_mean", "grad_norm_delta", sum_f / static_cast<double>(nf));
    if (nr) emit("retain_mean", "grad_norm_delta", sum_r / static_cast<double>(nr));
  }

  if (data.is_image()) {
    const std::size_t H = data.image_h, W = data.image_w;
    const Embedding embed = make_embedding(cfg.eval.embedding, H, W);
    SscdNormConfig sc;
    sc.rho = cfg.eval.sscd_rho > 0.0 ? cfg.eval.sscd_rho : SscdNormConfig::scaled_rho(H * W);
    sc.denominator = cfg.eval.sscd_denominator;

    if (wants(metrics, "sscd") || wants(metrics, "psd")) {
      for (const auto& p : probes) {
        const Tensor x0 = data.data.row(p.idx);
        const Tensor img0 = x0.reshaped(Shape{H, W});
        for (double f : cfg.eval.t_start) {
          const int ts = t_from_fraction(f, sched.T);
          const std::string tag = "_t" + std::to_string(ts);
          const auto seed = mix(cfg.seed, kRecon, p.idx * 1000003ULL + static_cast<std::uint64_t>(ts));
          const Tensor rec = denoise_from(model, x0, ts, sched, seed).reshaped(Shape{H, W});
          const std::string label = sample_label(p.set, p.idx);
          if (wants(metrics, "sscd")) {
            emit(label, "sscd_plain" + tag, sscd_plain(img0, rec, embed));
            emit(label, "sscd_norm" + tag, sscd_norm(img0, rec, embed, sc));
          }
          if (wants(metrics, "psd")) {
            const Tensor rec_base = denoise_from(base, x0, ts, sched, seed).reshaped(Shape{H, W});
            const PsdCurve pm = psd_radial(rec, cfg.eval.psd_bins, true);
            const PsdCurve pb = psd_radial(rec_base, cfg.eval.psd_bins, true);
            const PsdCurve po = psd_radial(img0, cfg.eval.psd_bins, true);
            for (std::size_t b = 1; b < cfg.eval.psd_bins; ++b) {
              const std::string bin = "_b" + std::to_string(b) + tag;
              const double lm = std::log10(pm.power[b] + 1e-12);
              emit(label, "psd_log10" + bin, lm);
              emit(label, "psd_log10_original" + bin, std::log10(po.power[b] + 1e-12));
              emit(label, "psd_delta" + bin, lm - std::log10(pb.power[b] + 1e-12));
            }
          }
        }
      }
    }

    if (wants(metrics, "freq_grad_norm")) {
      double hf = 0.0, hr = 0.0, lf = 0.0, lr = 0.0;
      std::size_t nf = 0, nr = 0;
      for (const auto& p : probes) {
        const Tensor x0 = data.data.row(p.idx);
        const auto stream = mix(cfg.seed, p.set[0] == 'f' ? kFreqForget : kFreqRetain, p.idx);
        Rng r1(stream), r2(stream);
        const auto g = freq_decomposed_grad_norm(model, x0, H, W, sched, cfg.eval.freq_cutoff, cfg.eval.grad_draws, r1);
        const auto gb = freq_decomposed_grad_norm(base, x0, H, W, sched, cfg.eval.freq_cutoff, cfg.eval.grad_draws, r2);
        const std::string label = sample_label(p.set, p.idx);
        emit(label, "grad_norm_low", g.low);
        emit(label, "grad_norm_high", g.high);
        emit(label, "grad_norm_low_delta", g.low - gb.low);
        emit(label, "grad_norm_high_delta", g.high - gb.high);
        if (p.set[0] == 'f') {
          lf += g.low - gb.low, hf += g.high - gb.high, ++nf;
        } else {
          lr += g.low - gb.low, hr += g.high - gb.high, ++nr;
        }
      }
      if (nf) {
        emit("forget_mean", "grad_norm_low_delta", lf / static_cast<double>(nf));
        emit("forget_mean", "grad_norm_high_delta", hf / static_cast<double>(nf));
      }
      if (nr) {
        emit("retain_mean", "grad_norm_low_delta", lr / static_cast<double>(nr));
        emit("retain_mean", "grad_norm_high_delta", hr / static_cast<double>(nr));
      }
    }
  }
  return rows;
}

UnlearnResult run_unlearn(const RunConfig& cfg, const Dataset& data, const Denoiser& base,
                          const std::optional<fs::path>& out_dir) {
  cfg.validate();
  if (!(base.arch() == cfg.arch)) throw std::invalid_argument("base checkpoint architecture does not match the config");
  const NoiseSchedule sched = cfg.schedule();

  UnlearnRun run = make_run(cfg, data, base, sched);

  UnlearnResult res{base, {}};
  RunRecord& rec = res.record;
  rec.run_id = run_id(cfg);
  rec.config_snapshot = serialize_config(cfg);

  double eval_time = 0.0, step_time = 0.0;
  auto evaluate = [&](long step) {
    const auto t0 = Clock::now();
    auto rows = eval_suite(run.model, base, data, cfg, step);
    rec.metrics.insert(rec.metrics.end(), rows.begin(), rows.end());
    eval_time += seconds_since(t0);
  };

  evaluate(0);
  Rng rng(mix(cfg.seed, kUnlearn));
  for (long s = 0; s < cfg.unlearn.steps; ++s) {
    const auto t0 = Clock::now();
    const StepRecord sr = unlearn_step(run, rng);
    step_time += seconds_since(t0);
    rec.loss_history.push_back(sr.loss);
    const long done = s + 1;
    if (done == cfg.unlearn.steps || (cfg.eval.cadence > 0 && done % cfg.eval.cadence == 0)) evaluate(done);
  }
  rec.steps_run = cfg.unlearn.steps;
  rec.phase_seconds["unlearn"] = step_time;
  rec.phase_seconds["eval"] = eval_time;
  res.model = run.model;
  if (out_dir) {
    const fs::path p = *out_dir / "checkpoints" / "unlearned.ckpt";
    fs::create_directories(p.parent_path());
    save_checkpoint(p, res.model, sched);
    rec.checkpoints.push_back(p.string());
  }
  return res;
}

RunConfig toy_defaults() {
  RunConfig c;
  c.dataset.kind = DatasetKind::two_moons;
  c.dataset.n_samples = 1000;
  c.dataset.noise = 0.05;
  c.dataset.forget_mode = ForgetMode::cluster;
  c.dataset.forget_count = 20;
  c.dataset.forget_anchor = 250;
  c.dataset.retain_eval_count = 200;
  c.arch.data_dim = 2;
  c.objective.kind = ObjectiveKind::ga;
  c.objective.retain_weight = 1.0;
  // Per-sample errors are means over two coordinates; beta 10 puts preference logits at O(1).
  c.objective.pref.beta_pref = 10.0;
  c.unlearn.retain_anchors = 8;
  c.unlearn.retain_batch = 0;
  c.unlearn.steps = 150;
  c.window.enabled = true;
  c.eval.metrics = {"hit_rate", "coverage"};
  c.eval.n_samples = 3000;
  return c;
}

ToyFigResult toyfig_from(const RunConfig& cfg, const Dataset& data, const Denoiser& base) {
  const NoiseSchedule sched = cfg.schedule();
  ToyFigResult out;
  out.base_samples = sample(base, sched, cfg.eval.n_samples, mix(cfg.seed, kSamples));
  out.base_hit_rate = forget_hit_rate(out.base_samples, data.forget(), cfg.eval.radius);
  out.base_coverage = retain_coverage(out.base_samples, data.retain_eval(), cfg.eval.radius);
  const struct {
    const char* name;
    double lo, hi;
  } windows[] = {{"early", 0.0, 0.25}, {"middle", 0.25, 0.75}, {"late", 0.75, 1.0}};
  for (const auto& w : windows) {
    RunConfig c = cfg;
    c.window.enabled = true;
    c.window.lo = w.lo;
    c.window.hi = w.hi;
    UnlearnRun run = make_run(c, data, base, sched);
    Rng rng(mix(c.seed, kUnlearn));
    for (long s = 0; s < c.unlearn.steps; ++s) unlearn_step(run, rng);
    WindowOutcome o;
    o.name = w.name;
    o.lo = w.lo;
    o.hi = w.hi;
    o.samples = sample(run.model, sched, c.eval.n_samples, mix(c.seed, kSamples));
    o.hit_rate = forget_hit_rate(o.samples, data.forget(), c.eval.radius);
    o.coverage = retain_coverage(o.samples, data.retain_eval(), c.eval.radius);
    out.windows.push_back(std::move(o));
  }
  return out;
}

ToyFigResult toyfig(const RunConfig& cfg, const std::optional<fs::path>& out_dir) {
  cfg.validate();
  const Dataset data = make_dataset(cfg.dataset);
  const TrainResult base = train_base(cfg, data, out_dir);
  ToyFigResult res = toyfig_from(cfg, data, base.model);
  if (out_dir) write_toyfig(*out_dir, res);
  return res;
}

void write_toyfig(const fs::path& out_dir, const ToyFigResult& result) {
  fs::create_directories(out_dir / "samples");
  io::save_array(out_dir / "samples" / "base.f64", result.base_samples);
  for (const auto& w : result.windows) io::save_array(out_dir / "samples" / (w.name + ".f64"), w.samples);
  std::ofstream os(out_dir / "summary.csv");
  if (!os) throw std::runtime_error("cannot write " + (out_dir / "summary.csv").string());
  char buf[256];
  os << "window,lo,hi,forget_hit_rate,retain_coverage\n";
  std::snprintf(buf, sizeof buf, "base,,,%.17g,%.17g\n", result.base_hit_rate, result.base_coverage);
  os << buf;
  for (const auto& w : result.windows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g\n", w.name.c_str(), w.lo, w.hi, w.hit_rate, w.coverage);
    os << buf;
  }
}

void write_run_files(const fs::path& out_dir, const RunRecord& record) {
  fs::create_directories(out_dir);
  {
    std::ofstream os(out_dir / "config.snapshot");
    if (!os) throw std::runtime_error("cannot write " + (out_dir / "config.snapshot").string());
    os << record.config_snapshot;
  }
  std::ofstream os(out_dir / "metrics.csv");
  if (!os) throw std::runtime_error("cannot write " + (out_dir / "metrics.csv").string());
  write_metrics_csv(os, record.metrics);
}

}  // namespace seldiff
