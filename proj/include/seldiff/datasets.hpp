#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seldiff/tensor.hpp"

namespace seldiff {

enum class DatasetKind { two_moons, gaussians, image_dir, synthetic_textures };
enum class ForgetMode { cluster, random, indices };

std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);
std::string to_string(ForgetMode m);
ForgetMode forget_mode_from_string(const std::string& s);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::two_moons;
  std::size_t n_samples = 1000;
  /// Gaussian jitter for point data; texture noise amplitude for images.
  double noise = 0.05;
  std::uint64_t seed = 0;

  ForgetMode forget_mode = ForgetMode::cluster;
  /// Forget set size for cluster and random modes.
  std::size_t forget_count = 6;
  /// Cluster centre row; negative picks one from the seed.
  long forget_anchor = -1;
  /// Explicit forget rows for indices mode.
  std::vector<std::size_t> forget_indices;
  /// Retain rows held out for evaluation (disjoint from the forget set).
  std::size_t retain_eval_count = 200;

  /// Square image side for image kinds.
  std::size_t image_size = 16;
  /// Directory of .pgm or .f64 images for image-dir.
  std::string path;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct Dataset {
  Tensor data;  // (n, D)
  std::vector<std::size_t> forget_idx;
  std::vector<std::size_t> retain_idx;
  /// Subset of retain_idx used for evaluation.
  std::vector<std::size_t> retain_eval_idx;
  std::size_t image_h = 0;
  std::size_t image_w = 0;

  Tensor forget() const { return select_rows(data, forget_idx); }
  Tensor retain() const { return select_rows(data, retain_idx); }
  Tensor retain_eval() const { return select_rows(data, retain_eval_idx); }
  bool is_image() const { return image_h * image_w > 0; }
};

/// Two interleaved unit semicircles: the upper one centred at (0, 0), the lower
/// one at (1, 0.5), each point with N(0, noise^2) jitter. The first ceil(n/2)
/// rows trace the upper arc at evenly spaced angles in [0, pi].
Tensor make_two_moons(std::size_t n, double noise, std::uint64_t seed);

/// Eight isotropic Gaussians with std `noise` centred on the unit circle.
Tensor make_gaussians(std::size_t n, double noise, std::uint64_t seed);

/// (n, size*size) grayscale textures in [-1, 1]: a few random oriented
/// gratings plus pixel noise of amplitude `noise`.
Tensor make_textures(std::size_t n, std::size_t size, double noise, std::uint64_t seed);

/// Loads every .pgm (P2/P5) or .f64 array in `dir`, sorted by name, as rows
/// scaled to [-1, 1]. All images must be size x size.
Tensor load_image_dir(const std::string& dir, std::size_t size);

/// Builds the data and the forget/retain split. Throws std::invalid_argument for
/// out-of-range or duplicated forget indices and impossible split sizes.
Dataset make_dataset(const DatasetSpec& spec);

}  // namespace seldiff
