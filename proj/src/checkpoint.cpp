#include "seldiff/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "seldiff/binary_io.hpp"

namespace seldiff {

namespace {
constexpr char kMagic[4] = {'S', 'D', 'C', 'K'};
}

void write_checkpoint(std::ostream& os, const Denoiser& model, const NoiseSchedule& sched) {
  const auto& arch = model.arch();
  os.write(kMagic, 4);
  io::put_u32(os, kCheckpointVersion);
  io::put_u64(os, arch.data_dim);
  io::put_u64(os, arch.time_dim);
  io::put_u64(os, arch.input_octaves);
  io::put_u32(os, static_cast<std::uint32_t>(arch.activation));
  io::put_u64(os, arch.hidden.size());
  for (std::size_t h : arch.hidden) io::put_u64(os, h);
  io::put_u64(os, static_cast<std::uint64_t>(static_cast<std::int64_t>(sched.T)));
  io::put_u32(os, static_cast<std::uint32_t>(sched.kind));
  io::put_f64(os, sched.beta_start);
  io::put_f64(os, sched.beta_end);
  for (const auto& p : model.params())
    for (double v : p.data()) io::put_f64(os, v);
}

Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("not a checkpoint (bad magic)");
  }
  const std::uint32_t version = io::get_u32(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  DenoiserArch arch;
  arch.data_dim = io::get_u64(is);
  arch.time_dim = io::get_u64(is);
  arch.input_octaves = io::get_u64(is);
  if (arch.input_octaves > 52) throw std::runtime_error("checkpoint: implausible input octave count");
  const std::uint32_t act = io::get_u32(is);
  if (act > 1) throw std::runtime_error("checkpoint: unknown activation code " + std::to_string(act));
  arch.activation = static_cast<Activation>(act);
  const std::uint64_t layers = io::get_u64(is);
  if (layers > 1024) throw std::runtime_error("checkpoint: implausible hidden layer count");
  arch.hidden.resize(layers);
  for (auto& h : arch.hidden) h = io::get_u64(is);
  const auto T = static_cast<std::int64_t>(io::get_u64(is));
  const std::uint32_t kind = io::get_u32(is);
  if (kind != 0) throw std::runtime_error("checkpoint: unknown schedule kind " + std::to_string(kind));
  const double b0 = io::get_f64(is);
  const double b1 = io::get_f64(is);
  NoiseSchedule sched = make_schedule(static_cast<int>(T), b0, b1, static_cast<ScheduleKind>(kind));

  std::vector<Tensor> params;
  for (const Shape& s : Denoiser::parameter_shapes(arch)) {
    Tensor p(s);
    for (double& v : p.data()) v = io::get_f64(is);
    params.push_back(std::move(p));
  }
  return Checkpoint{Denoiser(std::move(arch), std::move(params)), std::move(sched)};
}

void save_checkpoint(const std::filesystem::path& path, const Denoiser& model, const NoiseSchedule& sched) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  write_checkpoint(os, model, sched);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace seldiff
