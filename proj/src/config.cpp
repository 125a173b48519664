#include "seldiff/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace seldiff {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config key '" + key + "': invalid value '" + value + "'");
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) bad_value(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (pos != v.size()) bad_value(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

std::size_t to_size(const std::string& key, const std::string& v) {
  const long d = to_long(key, v);
  if (d < 0) bad_value(key, v);
  return static_cast<std::size_t>(d);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v[0] == '-') bad_value(key, v);
  try {
    std::size_t pos = 0;
    const unsigned long long d = std::stoull(v, &pos);
    if (pos != v.size()) bad_value(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F f) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    s += f(xs[i]);
  }
  return s;
}

template <class E, class P>
E to_enum(const std::string& key, const std::string& v, P parse) {
  try {
    return parse(v);
  } catch (const std::invalid_argument&) {
    bad_value(key, v);
  }
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define SD_DOUBLE(name, member) \
  Field { name, [](const RunConfig& c) { return fmt(c.member); }, [](RunConfig& c, const std::string& v) { c.member = to_double(name, v); } }
#define SD_LONG(name, member) \
  Field { name, [](const RunConfig& c) { return std::to_string(c.member); }, [](RunConfig& c, const std::string& v) { c.member = to_long(name, v); } }
#define SD_SIZE(name, member) \
  Field { name, [](const RunConfig& c) { return std::to_string(c.member); }, [](RunConfig& c, const std::string& v) { c.member = to_size(name, v); } }
#define SD_BOOL(name, member) \
  Field { name, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }, [](RunConfig& c, const std::string& v) { c.member = to_bool(name, v); } }
#define SD_STRING(name, member) \
  Field { name, [](const RunConfig& c) { return c.member; }, [](RunConfig& c, const std::string& v) { c.member = v; } }
#define SD_ENUM(name, member, parse) \
  Field { name, [](const RunConfig& c) { return to_string(c.member); }, [](RunConfig& c, const std::string& v) { c.member = to_enum<decltype(c.member)>(name, v, parse); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }},

      SD_ENUM("dataset.kind", dataset.kind, dataset_kind_from_string),
      SD_SIZE("dataset.n_samples", dataset.n_samples),
      SD_DOUBLE("dataset.noise", dataset.noise),
      Field{"dataset.seed", [](const RunConfig& c) { return std::to_string(c.dataset.seed); },
            [](RunConfig& c, const std::string& v) { c.dataset.seed = to_u64("dataset.seed", v); }},
      SD_ENUM("dataset.forget_mode", dataset.forget_mode, forget_mode_from_string),
      SD_SIZE("dataset.forget_count", dataset.forget_count),
      SD_LONG("dataset.forget_anchor", dataset.forget_anchor),
      Field{"dataset.forget_indices",
            [](const RunConfig& c) { return join(c.dataset.forget_indices, [](std::size_t i) { return std::to_string(i); }); },
            [](RunConfig& c, const std::string& v) {
              c.dataset.forget_indices.clear();
              for (const auto& s : split_list(v)) c.dataset.forget_indices.push_back(to_size("dataset.forget_indices", s));
            }},
      SD_SIZE("dataset.retain_eval_count", dataset.retain_eval_count),
      SD_SIZE("dataset.image_size", dataset.image_size),
      SD_STRING("dataset.path", dataset.path),

      SD_SIZE("arch.time_dim", arch.time_dim),
      SD_SIZE("arch.input_octaves", arch.input_octaves),
      Field{"arch.hidden",
            [](const RunConfig& c) { return join(c.arch.hidden, [](std::size_t i) { return std::to_string(i); }); },
            [](RunConfig& c, const std::string& v) {
              c.arch.hidden.clear();
              for (const auto& s : split_list(v)) c.arch.hidden.push_back(to_size("arch.hidden", s));
            }},
      SD_ENUM("arch.activation", arch.activation, activation_from_string),

      Field{"schedule.T", [](const RunConfig& c) { return std::to_string(c.T); },
            [](RunConfig& c, const std::string& v) { c.T = static_cast<int>(to_long("schedule.T", v)); }},
      SD_DOUBLE("schedule.beta_start", beta_start),
      SD_DOUBLE("schedule.beta_end", beta_end),

      SD_ENUM("objective.kind", objective.kind, objective_kind_from_string),
      SD_DOUBLE("objective.retain_weight", objective.retain_weight),
      SD_DOUBLE("objective.beta_retain", objective.beta_retain),
      SD_DOUBLE("objective.siss.lambda", objective.siss.lambda),
      SD_DOUBLE("objective.siss.beta", objective.siss.beta_siss),
      SD_BOOL("objective.siss.importance_sampling", objective.siss.importance_sampling),
      SD_DOUBLE("objective.pref.beta", objective.pref.beta_pref),
      SD_DOUBLE("objective.pref.w_desirable", objective.pref.w_desirable),
      SD_DOUBLE("objective.pref.w_undesirable", objective.pref.w_undesirable),

      SD_LONG("train.steps", train.steps),
      SD_DOUBLE("train.lr", train.lr),
      SD_SIZE("train.batch_size", train.batch_size),
      SD_LONG("train.plateau_window", train.plateau_window),
      SD_DOUBLE("train.plateau_tol", train.plateau_tol),
      SD_LONG("train.min_steps", train.min_steps),

      SD_LONG("unlearn.steps", unlearn.steps),
      SD_DOUBLE("unlearn.lr", unlearn.lr),
      SD_DOUBLE("unlearn.clip_norm", unlearn.clip_norm),
      SD_SIZE("unlearn.forget_batch", unlearn.forget_batch),
      SD_SIZE("unlearn.retain_batch", unlearn.retain_batch),
      SD_SIZE("unlearn.retain_anchors", unlearn.retain_anchors),

      SD_BOOL("time_window.enabled", window.enabled),
      SD_DOUBLE("time_window.k", window.k),
      SD_DOUBLE("time_window.lo", window.lo),
      SD_DOUBLE("time_window.hi", window.hi),

      SD_BOOL("freq_filter.enabled", filter.enabled),
      SD_DOUBLE("freq_filter.r_t", filter.r_t),
      SD_DOUBLE("freq_filter.s", filter.s),
      SD_ENUM("freq_filter.apply_to", filter.apply_to, filter_target_from_string),
      SD_ENUM("freq_filter.target_mode", filter.target_mode, target_mode_from_string),

      Field{"eval.t_start", [](const RunConfig& c) { return join(c.eval.t_start, fmt); },
            [](RunConfig& c, const std::string& v) {
              c.eval.t_start.clear();
              for (const auto& s : split_list(v)) c.eval.t_start.push_back(to_double("eval.t_start", s));
            }},
      Field{"eval.metrics", [](const RunConfig& c) { return join(c.eval.metrics, [](const std::string& s) { return s; }); },
            [](RunConfig& c, const std::string& v) { c.eval.metrics = split_list(v); }},
      SD_LONG("eval.cadence", eval.cadence),
      SD_SIZE("eval.n_samples", eval.n_samples),
      SD_DOUBLE("eval.radius", eval.radius),
      SD_STRING("eval.embedding", eval.embedding),
      SD_SIZE("eval.psd_bins", eval.psd_bins),
      Field{"eval.grad_draws", [](const RunConfig& c) { return std::to_string(c.eval.grad_draws); },
            [](RunConfig& c, const std::string& v) { c.eval.grad_draws = static_cast<int>(to_long("eval.grad_draws", v)); }},
      SD_DOUBLE("eval.freq_cutoff", eval.freq_cutoff),
      SD_DOUBLE("eval.sscd_rho", eval.sscd_rho),
      SD_ENUM("eval.sscd_denominator", eval.sscd_denominator, sscd_denominator_from_string),
      SD_SIZE("eval.retain_probe", eval.retain_probe),
  };
  return f;
}

#undef SD_DOUBLE
#undef SD_LONG
#undef SD_SIZE
#undef SD_BOOL
#undef SD_STRING
#undef SD_ENUM

[[noreturn]] void invalid(const std::string& key, const std::string& why) {
  throw std::invalid_argument("config key '" + key + "': " + why);
}

const std::vector<std::string> kMetricFamilies = {"hit_rate", "coverage", "sscd", "psd", "grad_norm", "freq_grad_norm"};

}  // namespace

void RunConfig::validate() const {
  if (dataset.n_samples == 0) invalid("dataset.n_samples", "must be positive");
  if (!(dataset.noise >= 0.0)) invalid("dataset.noise", "must be non-negative");
  if (dataset.kind == DatasetKind::image_dir && dataset.path.empty()) invalid("dataset.path", "required for image-dir");
  if ((dataset.kind == DatasetKind::synthetic_textures || dataset.kind == DatasetKind::image_dir) &&
      dataset.image_size == 0) {
    invalid("dataset.image_size", "must be positive");
  }
  if (arch.time_dim % 2 != 0) invalid("arch.time_dim", "must be even");
  if (arch.input_octaves > 16) invalid("arch.input_octaves", "must be at most 16");
  for (std::size_t h : arch.hidden)
    if (h == 0) invalid("arch.hidden", "widths must be positive");
  try {
    (void)make_schedule(T, beta_start, beta_end);
  } catch (const std::invalid_argument& e) {
    invalid("schedule", e.what());
  }
  try {
    objective.siss.validate();
  } catch (const std::invalid_argument& e) {
    invalid("objective.siss", e.what());
  }
  try {
    objective.pref.validate();
  } catch (const std::invalid_argument& e) {
    invalid("objective.pref", e.what());
  }
  if (train.steps < 0) invalid("train.steps", "must be non-negative");
  if (!(train.lr > 0.0)) invalid("train.lr", "must be positive");
  if (train.batch_size == 0) invalid("train.batch_size", "must be positive");
  if (train.plateau_window < 0) invalid("train.plateau_window", "must be non-negative");
  if (unlearn.steps < 0) invalid("unlearn.steps", "must be non-negative");
  if (!(unlearn.lr > 0.0)) invalid("unlearn.lr", "must be positive");
  if (window.enabled) {
    try {
      TimeWindowConfig::from_fractions(window.k, window.lo, window.hi, T).validate();
    } catch (const std::invalid_argument& e) {
      invalid("time_window", e.what());
    }
  }
  if (filter.enabled) {
    try {
      FrequencyFilterConfig{filter.r_t, filter.s, {}}.validate();
    } catch (const std::invalid_argument& e) {
      invalid("freq_filter", e.what());
    }
  }
  for (double f : eval.t_start)
    if (!(f >= 0.0 && f <= 1.0)) invalid("eval.t_start", "fractions must lie in [0, 1]");
  for (const auto& m : eval.metrics) {
    if (std::find(kMetricFamilies.begin(), kMetricFamilies.end(), m) == kMetricFamilies.end()) {
      invalid("eval.metrics", "unknown metric '" + m + "'");
    }
  }
  if (eval.cadence < 0) invalid("eval.cadence", "must be non-negative");
  if (!(eval.radius > 0.0)) invalid("eval.radius", "must be positive");
  if (eval.psd_bins < 2) invalid("eval.psd_bins", "needs at least 2 bins");
  if (eval.grad_draws < 1) invalid("eval.grad_draws", "must be positive");
  if (!(eval.freq_cutoff > 0.0 && eval.freq_cutoff < 1.0)) invalid("eval.freq_cutoff", "must lie in (0, 1)");
  if (!(eval.sscd_rho >= 0.0)) invalid("eval.sscd_rho", "must be non-negative");
  if (eval.embedding != "flatten-cosine" && eval.embedding != "patch-histogram") {
    invalid("eval.embedding", "unknown embedding '" + eval.embedding + "'");
  }
}

NoiseSchedule RunConfig::schedule() const { return make_schedule(T, beta_start, beta_end); }

NoisingPolicy RunConfig::policy(std::size_t image_h, std::size_t image_w) const {
  NoisingPolicy p;
  if (window.enabled) p.time = TimeWindowConfig::from_fractions(window.k, window.lo, window.hi, T);
  if (filter.enabled) p.freq = FrequencyFilterConfig{filter.r_t, filter.s, {}};
  p.apply_to = filter.apply_to;
  p.target_mode = filter.target_mode;
  p.image_h = image_h;
  p.image_w = image_w;
  return p;
}

RunConfig image_defaults() {
  RunConfig c;
  c.dataset.kind = DatasetKind::synthetic_textures;
  c.dataset.n_samples = 64;
  c.dataset.noise = 0.05;
  c.dataset.image_size = 16;
  c.dataset.forget_mode = ForgetMode::random;
  c.dataset.forget_count = 6;
  c.dataset.retain_eval_count = 6;
  c.arch.data_dim = 256;
  c.arch.hidden = {256, 256};
  c.arch.time_dim = 32;
  c.arch.input_octaves = 0;
  c.train.steps = 3000;
  c.train.batch_size = 32;
  c.window.enabled = true;
  c.filter.enabled = true;
  return c;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      // data_dim follows the dataset
      if (key.rfind("dataset.", 0) == 0) {
        const bool image = cfg.dataset.kind == DatasetKind::synthetic_textures || cfg.dataset.kind == DatasetKind::image_dir;
        cfg.arch.data_dim = image ? cfg.dataset.image_size * cfg.dataset.image_size : 2;
      }
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + o + "' is not key=value");
    apply_setting(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

std::uint64_t config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize_config(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string run_id(const RunConfig& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  return std::string(buf) + "-s" + std::to_string(cfg.seed);
}

}  // namespace seldiff
