#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "seldiff/tensor.hpp"

namespace seldiff::io {

/// Little-endian writes regardless of host byte order.
inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("unexpected end of binary stream");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("unexpected end of binary stream");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

/// Raw array file: one text line "shape d0 d1 ...\n" followed by numel
/// little-endian f64 values.
void write_array(std::ostream& os, const Tensor& t);
Tensor read_array(std::istream& is);
void save_array(const std::filesystem::path& path, const Tensor& t);
Tensor load_array(const std::filesystem::path& path);

}  // namespace seldiff::io
