// Command-line driver: train, unlearn, sample, eval, psd, toyfig.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "seldiff/binary_io.hpp"
#include "seldiff/checkpoint.hpp"
#include "seldiff/harness.hpp"

namespace fs = std::filesystem;
using namespace seldiff;

namespace {

struct CommonArgs {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = "run";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "Config file (key = value lines)");
  cmd->add_option("--seed", a.seed, "Run seed")->each([&a](const std::string&) { a.seed_set = true; });
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--override", a.overrides, "key=value setting applied after the config (repeatable)");
}

RunConfig resolve(const CommonArgs& a, RunConfig base = {}) {
  RunConfig cfg = a.config.empty() ? base : load_config(a.config);
  apply_overrides(cfg, a.overrides);
  if (a.seed_set) cfg.seed = a.seed;
  cfg.validate();
  return cfg;
}

void write_snapshot(const fs::path& out, const RunConfig& cfg) {
  fs::create_directories(out);
  std::ofstream os(out / "config.snapshot");
  if (!os) throw std::runtime_error("cannot write " + (out / "config.snapshot").string());
  os << serialize_config(cfg);
}

std::vector<MetricRow> train_rows(const RunRecord& rec) {
  std::vector<MetricRow> rows;
  const std::size_t w = 100;
  for (std::size_t end = w; end <= rec.loss_history.size(); end += w) {
    double s = 0.0;
    for (std::size_t i = end - w; i < end; ++i) s += rec.loss_history[i];
    rows.push_back({rec.run_id, static_cast<long>(end), "all", "train_loss_mean100", s / static_cast<double>(w)});
  }
  rows.push_back({rec.run_id, rec.steps_run, "all", "train_steps", static_cast<double>(rec.steps_run)});
  return rows;
}

Denoiser base_model(const RunConfig& cfg, const Dataset& data, const std::string& base_path, const fs::path& out) {
  if (!base_path.empty()) {
    Checkpoint ck = load_checkpoint(base_path);
    return ck.model;
  }
  return train_base(cfg, data, out).model;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective unlearning for small diffusion models"};
  app.require_subcommand(1);

  CommonArgs train_a, unlearn_a, eval_a, toy_a;
  std::string base_path, model_path;

  auto* train = app.add_subcommand("train", "Train a base model");
  add_common(train, train_a);

  auto* unlearn = app.add_subcommand("unlearn", "Unlearn the forget set and evaluate");
  add_common(unlearn, unlearn_a);
  unlearn->add_option("--base", base_path, "Base checkpoint (trained from the config when omitted)");

  std::string sample_ckpt, sample_out = "samples.f64";
  std::size_t sample_n = 1000;
  std::uint64_t sample_seed = 0;
  auto* samp = app.add_subcommand("sample", "Draw ancestral samples from a checkpoint");
  samp->add_option("--checkpoint", sample_ckpt, "Checkpoint file")->required();
  samp->add_option("--n", sample_n, "Number of samples");
  samp->add_option("--seed", sample_seed, "Sampling seed");
  samp->add_option("--out", sample_out, "Output array file");

  auto* eval = app.add_subcommand("eval", "Evaluate a model against its base");
  add_common(eval, eval_a);
  eval->add_option("--base", base_path, "Base checkpoint")->required();
  eval->add_option("--model", model_path, "Model checkpoint (defaults to the base)");

  std::string psd_in;
  std::size_t psd_bins = 16, psd_size = 0;
  bool psd_center = false;
  auto* psd = app.add_subcommand("psd", "Radial power spectrum of an image array");
  psd->add_option("--input", psd_in, "Array file: (H, W) image or (n, size*size) rows")->required();
  psd->add_option("--bins", psd_bins, "Number of radial bins");
  psd->add_option("--size", psd_size, "Side length when the input holds flattened rows");
  psd->add_flag("--subtract-mean", psd_center, "Remove the pixel mean first");

  auto* toy = app.add_subcommand("toyfig", "Early/middle/late window sweep on the toy data");
  add_common(toy, toy_a);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) {
      const RunConfig cfg = resolve(train_a);
      const fs::path out = train_a.out;
      write_snapshot(out, cfg);
      const Dataset data = make_dataset(cfg.dataset);
      const TrainResult res = train_base(cfg, data, out);
      RunRecord rec = res.record;
      rec.metrics = train_rows(rec);
      write_run_files(out, rec);
      std::printf("trained %ld steps, checkpoint %s\n", rec.steps_run, rec.checkpoints.at(0).c_str());
    } else if (*unlearn) {
      const RunConfig cfg = resolve(unlearn_a);
      const fs::path out = unlearn_a.out;
      write_snapshot(out, cfg);
      const Dataset data = make_dataset(cfg.dataset);
      const Denoiser base = base_model(cfg, data, base_path, out);
      const UnlearnResult res = run_unlearn(cfg, data, base, out);
      write_run_files(out, res.record);
      fs::create_directories(out / "samples");
      const std::size_t n = data.is_image() ? std::min<std::size_t>(cfg.eval.n_samples, 16) : cfg.eval.n_samples;
      io::save_array(out / "samples" / "unlearned.f64", sample(res.model, cfg.schedule(), n, cfg.seed));
      std::printf("unlearned %ld steps, %zu metric rows in %s\n", res.record.steps_run, res.record.metrics.size(),
                  (out / "metrics.csv").c_str());
    } else if (*samp) {
      const Checkpoint ck = load_checkpoint(sample_ckpt);
      const Tensor s = sample(ck.model, ck.schedule, sample_n, sample_seed);
      const fs::path p = sample_out;
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      io::save_array(p, s);
      std::printf("wrote %zu samples to %s\n", sample_n, sample_out.c_str());
    } else if (*eval) {
      const RunConfig cfg = resolve(eval_a);
      const fs::path out = eval_a.out;
      write_snapshot(out, cfg);
      const Dataset data = make_dataset(cfg.dataset);
      const Denoiser base = load_checkpoint(base_path).model;
      const Denoiser model = model_path.empty() ? base : load_checkpoint(model_path).model;
      RunRecord rec;
      rec.run_id = run_id(cfg);
      rec.config_snapshot = serialize_config(cfg);
      rec.metrics = eval_suite(model, base, data, cfg, 0);
      write_run_files(out, rec);
      std::printf("%zu metric rows in %s\n", rec.metrics.size(), (out / "metrics.csv").c_str());
    } else if (*psd) {
      Tensor x = io::load_array(psd_in);
      std::vector<Tensor> images;
      if (psd_size > 0) {
        if (x.cols() != psd_size * psd_size) throw ShapeError("--size does not match the row width");
        for (std::size_t r = 0; r < x.rows(); ++r) images.push_back(x.row(r).reshaped(Shape{psd_size, psd_size}));
      } else {
        if (x.rank() != 2) throw ShapeError("psd input must be (H, W) without --size");
        images.push_back(x);
      }
      std::printf("image,bin,radius,count,power\n");
      for (std::size_t i = 0; i < images.size(); ++i) {
        const PsdCurve c = psd_radial(images[i], psd_bins, psd_center);
        for (std::size_t b = 0; b < psd_bins; ++b) {
          std::printf("%zu,%zu,%.17g,%zu,%.17g\n", i, b, c.radius[b], c.count[b], c.power[b]);
        }
      }
    } else if (*toy) {
      const RunConfig cfg = resolve(toy_a, toy_defaults());
      const fs::path out = toy_a.out;
      write_snapshot(out, cfg);
      const ToyFigResult res = toyfig(cfg, out);
      std::printf("window  forget_hit_rate  retain_coverage\n");
      std::printf("base    %.4f           %.4f\n", res.base_hit_rate, res.base_coverage);
      for (const auto& w : res.windows) std::printf("%-7s %.4f           %.4f\n", w.name.c_str(), w.hit_rate, w.coverage);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
