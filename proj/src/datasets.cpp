#include "seldiff/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "seldiff/binary_io.hpp"
#include "seldiff/rng.hpp"

namespace seldiff {

namespace fs = std::filesystem;

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::two_moons: return "two-moons";
    case DatasetKind::gaussians: return "gaussians";
    case DatasetKind::image_dir: return "image-dir";
    case DatasetKind::synthetic_textures: return "synthetic-textures";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  for (auto k : {DatasetKind::two_moons, DatasetKind::gaussians, DatasetKind::image_dir,
                 DatasetKind::synthetic_textures}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown dataset kind '" + s + "'");
}

std::string to_string(ForgetMode m) {
  switch (m) {
    case ForgetMode::cluster: return "cluster";
    case ForgetMode::random: return "random";
    case ForgetMode::indices: return "indices";
  }
  return "?";
}

ForgetMode forget_mode_from_string(const std::string& s) {
  for (auto m : {ForgetMode::cluster, ForgetMode::random, ForgetMode::indices}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown forget mode '" + s + "'");
}

Tensor make_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("two-moons needs at least 2 samples");
  if (!(noise >= 0.0)) throw std::invalid_argument("two-moons noise must be non-negative");
  const std::size_t n_upper = (n + 1) / 2, n_lower = n - n_upper;
  Tensor out(Shape{n, 2});
  const double pi = std::numbers::pi;
  auto angle = [pi](std::size_t i, std::size_t m) {
    return m == 1 ? 0.0 : pi * static_cast<double>(i) / static_cast<double>(m - 1);
  };
  for (std::size_t i = 0; i < n_upper; ++i) {
    const double a = angle(i, n_upper);
    out.at(i, 0) = std::cos(a);
    out.at(i, 1) = std::sin(a);
  }
  for (std::size_t i = 0; i < n_lower; ++i) {
    const double a = angle(i, n_lower);
    out.at(n_upper + i, 0) = 1.0 - std::cos(a);
    out.at(n_upper + i, 1) = 0.5 - std::sin(a);
  }
  if (noise > 0.0) {
    Rng rng(seed);
    for (double& v : out.data()) v += noise * rng.normal();
  }
  return out;
}

Tensor make_gaussians(std::size_t n, double noise, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("gaussians needs at least one sample");
  Tensor out(Shape{n, 2});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i % 8) / 8.0;
    out.at(i, 0) = std::cos(a) + noise * rng.normal();
    out.at(i, 1) = std::sin(a) + noise * rng.normal();
  }
  return out;
}

Tensor make_textures(std::size_t n, std::size_t size, double noise, std::uint64_t seed) {
  if (n == 0 || size == 0) throw std::invalid_argument("textures need positive count and size");
  const std::size_t d = size * size;
  Tensor out(Shape{n, d});
  Rng rng(seed);
  for (std::size_t k = 0; k < n; ++k) {
    const int gratings = 2 + static_cast<int>(rng.uniform_index(3));
    std::vector<double> img(d, 0.0);
    for (int g = 0; g < gratings; ++g) {
      // frequency in cycles per image, 1..size/2
      const double f = 1.0 + rng.uniform() * (static_cast<double>(size) / 2.0 - 1.0);
      const double theta = rng.uniform() * std::numbers::pi;
      const double phase = rng.uniform() * 2.0 * std::numbers::pi;
      const double amp = 0.3 + 0.4 * rng.uniform();
      const double fx = f * std::cos(theta) / static_cast<double>(size);
      const double fy = f * std::sin(theta) / static_cast<double>(size);
      for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) {
          img[i * size + j] += amp * std::sin(2.0 * std::numbers::pi * (fx * i + fy * j) + phase);
        }
      }
    }
    for (std::size_t p = 0; p < d; ++p) {
      out[k * d + p] = std::clamp(img[p] + noise * rng.normal(), -1.0, 1.0);
    }
  }
  return out;
}

namespace {

std::string next_token(std::istream& is) {
  std::string tok;
  while (is >> tok) {
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(is, rest);
  }
  throw std::runtime_error("truncated PGM header");
}

std::vector<double> load_pgm(const fs::path& path, std::size_t size) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const std::string magic = next_token(is);
  if (magic != "P2" && magic != "P5") throw std::runtime_error(path.string() + ": not a PGM file");
  const std::size_t w = std::stoul(next_token(is));
  const std::size_t h = std::stoul(next_token(is));
  const double maxval = std::stod(next_token(is));
  if (w != size || h != size) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(size) + "x" + std::to_string(size) +
                             ", got " + std::to_string(w) + "x" + std::to_string(h));
  }
  std::vector<double> px(w * h);
  if (magic == "P5") {
    is.get();
    const bool wide = maxval > 255;
    for (double& v : px) {
      unsigned char b[2] = {0, 0};
      if (!is.read(reinterpret_cast<char*>(b), wide ? 2 : 1)) throw std::runtime_error(path.string() + ": truncated");
      v = wide ? (b[0] << 8 | b[1]) : b[0];
    }
  } else {
    for (double& v : px) v = std::stod(next_token(is));
  }
  for (double& v : px) v = 2.0 * v / maxval - 1.0;
  return px;
}

}  // namespace

Tensor load_image_dir(const std::string& dir, std::size_t size) {
  if (!fs::is_directory(dir)) throw std::runtime_error("image directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".f64")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .pgm or .f64 images in " + dir);
  std::vector<Tensor> rows;
  for (const auto& f : files) {
    if (f.extension() == ".pgm") {
      rows.push_back(Tensor::vector(load_pgm(f, size)));
    } else {
      Tensor t = io::load_array(f);
      if (t.numel() != size * size) {
        throw std::runtime_error(f.string() + ": expected " + std::to_string(size * size) + " values");
      }
      rows.push_back(std::move(t));
    }
  }
  return stack_rows(rows);
}

Dataset make_dataset(const DatasetSpec& spec) {
  Dataset ds;
  switch (spec.kind) {
    case DatasetKind::two_moons: ds.data = make_two_moons(spec.n_samples, spec.noise, spec.seed); break;
    case DatasetKind::gaussians: ds.data = make_gaussians(spec.n_samples, spec.noise, spec.seed); break;
    case DatasetKind::synthetic_textures:
      ds.data = make_textures(spec.n_samples, spec.image_size, spec.noise, spec.seed);
      break;
    case DatasetKind::image_dir: ds.data = load_image_dir(spec.path, spec.image_size); break;
  }
  if (spec.kind == DatasetKind::synthetic_textures || spec.kind == DatasetKind::image_dir) {
    ds.image_h = ds.image_w = spec.image_size;
  }
  const std::size_t n = ds.data.rows();
  // Split draws come from a stream independent of the data jitter.
  Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);

  switch (spec.forget_mode) {
    case ForgetMode::indices: {
      std::set<std::size_t> seen;
      for (std::size_t i : spec.forget_indices) {
        if (i >= n) throw std::invalid_argument("forget index " + std::to_string(i) + " out of range for " +
                                                std::to_string(n) + " samples");
        if (!seen.insert(i).second) throw std::invalid_argument("duplicate forget index " + std::to_string(i));
      }
      ds.forget_idx = spec.forget_indices;
      break;
    }
    case ForgetMode::random: {
      if (spec.forget_count > n) throw std::invalid_argument("forget_count exceeds dataset size");
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = 0; i < spec.forget_count; ++i) {
        std::swap(perm[i], perm[i + rng.uniform_index(n - i)]);
      }
      ds.forget_idx.assign(perm.begin(), perm.begin() + spec.forget_count);
      break;
    }
    case ForgetMode::cluster: {
      if (spec.forget_count > n) throw std::invalid_argument("forget_count exceeds dataset size");
      if (spec.forget_anchor >= static_cast<long>(n)) throw std::invalid_argument("forget_anchor out of range");
      const std::size_t anchor =
          spec.forget_anchor >= 0 ? static_cast<std::size_t>(spec.forget_anchor) : rng.uniform_index(n);
      const std::size_t c = ds.data.cols();
      std::vector<std::pair<double, std::size_t>> dist(n);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
          const double d = ds.data[i * c + k] - ds.data[anchor * c + k];
          s += d * d;
        }
        dist[i] = {s, i};
      }
      std::sort(dist.begin(), dist.end());
      for (std::size_t i = 0; i < spec.forget_count; ++i) ds.forget_idx.push_back(dist[i].second);
      break;
    }
  }
  std::sort(ds.forget_idx.begin(), ds.forget_idx.end());

  std::vector<bool> is_forget(n, false);
  for (std::size_t i : ds.forget_idx) is_forget[i] = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_forget[i]) ds.retain_idx.push_back(i);
  }
  if (spec.retain_eval_count > ds.retain_idx.size()) {
    throw std::invalid_argument("retain_eval_count exceeds the retain set size");
  }
  std::vector<std::size_t> pool = ds.retain_idx;
  for (std::size_t i = 0; i < spec.retain_eval_count; ++i) {
    std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
  }
  ds.retain_eval_idx.assign(pool.begin(), pool.begin() + spec.retain_eval_count);
  std::sort(ds.retain_eval_idx.begin(), ds.retain_eval_idx.end());
  return ds;
}

}  // namespace seldiff
