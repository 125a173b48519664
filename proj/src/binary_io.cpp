#include "seldiff/binary_io.hpp"

#include <fstream>
#include <sstream>
#include <string>

namespace seldiff::io {

void write_array(std::ostream& os, const Tensor& t) {
  os << "shape";
  for (std::size_t d : t.shape()) os << ' ' << d;
  os << '\n';
  for (double v : t.data()) put_f64(os, v);
}

Tensor read_array(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("array file: missing shape header");
  std::istringstream hs(line);
  std::string tag;
  hs >> tag;
  if (tag != "shape") throw std::runtime_error("array file: header must start with 'shape', got '" + line + "'");
  Shape shape;
  std::size_t d;
  while (hs >> d) shape.push_back(d);
  Tensor t(shape);
  for (double& v : t.data()) v = get_f64(is);
  return t;
}

void save_array(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_array(os, t);
}

Tensor load_array(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_array(is);
}

}  // namespace seldiff::io
