#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "seldiff/denoiser.hpp"
#include "seldiff/schedule.hpp"

namespace seldiff {

/// On-disk layout, all integers and floats little-endian:
///
///   char[4]  magic "SDCK"
///   u32      version (1)
///   u64      data_dim
///   u64      time_dim
///   u64      input_octaves
///   u32      activation (0 silu, 1 tanh)
///   u64      hidden layer count, then u64 per hidden width
///   i64      T
///   u32      schedule kind (0 linear)
///   f64      beta_start, f64 beta_end
///   f64[]    parameter tensors in declaration order (W0, b0, W1, b1, ...)
struct Checkpoint {
  Denoiser model;
  NoiseSchedule schedule;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const Denoiser& model, const NoiseSchedule& sched);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Denoiser& model, const NoiseSchedule& sched);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace seldiff
