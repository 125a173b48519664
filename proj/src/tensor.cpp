#include "seldiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace seldiff {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  if (r >= rows()) throw std::out_of_range("row index out of range");
  return Tensor(Shape{1, c}, std::vector<double>(data_.begin() + r * c, data_.begin() + (r + 1) * c));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) return Tensor(Shape{0, 0});
  const std::size_t c = rows[0].numel();
  std::vector<double> out;
  out.reserve(c * rows.size());
  for (const auto& r : rows) {
    if (r.numel() != c) throw ShapeError("stack_rows: rows of width " + std::to_string(c) + " and " +
                                         std::to_string(r.numel()));
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return Tensor::matrix(rows.size(), c, std::move(out));
}

Tensor select_rows(const Tensor& m, std::span<const std::size_t> idx) {
  const std::size_t c = m.cols();
  Shape shape = m.shape();
  if (shape.empty()) throw ShapeError("select_rows on a scalar");
  shape[0] = idx.size();
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m.rows()) throw std::out_of_range("select_rows: row " + std::to_string(idx[i]) + " of " + std::to_string(m.rows()));
    std::copy_n(m.data().begin() + idx[i] * c, c, out.data().begin() + i * c);
  }
  return out;
}

double squared_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace kernels {
namespace {

// Matrix view of a tensor for broadcasting: (rows, cols) with 1s allowed.
struct View {
  std::size_t r, c;
};

View view_of(const Tensor& t) { return {t.rows(), t.cols()}; }

bool compatible(std::size_t x, std::size_t y) { return x == y || x == 1 || y == 1; }

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

template <class F>
Tensor broadcast_binary(const char* op, const Tensor& a, const Tensor& b, F f) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
    return out;
  }
  const View va = view_of(a), vb = view_of(b);
  if (!compatible(va.r, vb.r) || !compatible(va.c, vb.c)) mismatch(op, a, b);
  const std::size_t r = std::max(va.r, vb.r), c = std::max(va.c, vb.c);
  // Preserve the richer operand's shape when it already matches the output.
  Shape shape = (va.r == r && va.c == c) ? a.shape() : (vb.r == r && vb.c == c) ? b.shape() : Shape{r, c};
  Tensor out(std::move(shape));
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ia = (va.r == 1 ? 0 : i) * va.c;
    const std::size_t ib = (vb.r == 1 ? 0 : i) * vb.c;
    for (std::size_t j = 0; j < c; ++j) {
      o[i * c + j] = f(x[ia + (va.c == 1 ? 0 : j)], y[ib + (vb.c == 1 ? 0 : j)]);
    }
  }
  return out;
}

template <class F>
Tensor unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace

Shape broadcast_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  const View va = view_of(a), vb = view_of(b);
  if (!compatible(va.r, vb.r) || !compatible(va.c, vb.c)) mismatch("broadcast", a, b);
  const std::size_t r = std::max(va.r, vb.r), c = std::max(va.c, vb.c);
  return (va.r == r && va.c == c) ? a.shape() : (vb.r == r && vb.c == c) ? b.shape() : Shape{r, c};
}

Tensor add(const Tensor& a, const Tensor& b) {
  return broadcast_binary("add", a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return broadcast_binary("sub", a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return broadcast_binary("mul", a, b, [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double c) {
  return unary(a, [c](double x) { return c * x; });
}

Tensor reduce_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  Tensor out(shape);
  const std::size_t r = out.rows(), c = out.cols();
  const std::size_t gr = g.rows(), gc = g.cols();
  auto o = out.data();
  auto in = g.data();
  for (std::size_t i = 0; i < gr; ++i) {
    const std::size_t oi = (r == 1 ? 0 : i) * c;
    for (std::size_t j = 0; j < gc; ++j) o[oi + (c == 1 ? 0 : j)] += in[i * gc + j];
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) mismatch("matmul", a, b);
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  Tensor out(Shape{n, m});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = o.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = x[i * k + p];
      const double* brow = y.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0]) mismatch("matmul_tn", a, b);
  const std::size_t k = a.shape()[0], n = a.shape()[1], m = b.shape()[1];
  Tensor out(Shape{n, m});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = y.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = x[p * n + i];
      double* orow = o.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) mismatch("matmul_nt", a, b);
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[0];
  Tensor out(Shape{n, m});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = x.data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = y.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      o[i * m + j] = s;
    }
  }
  return out;
}

Tensor silu(const Tensor& x) {
  return unary(x, [](double v) { return v / (1.0 + std::exp(-v)); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, [](double v) { return std::sqrt(v); });
}

Tensor softplus(const Tensor& x) {
  // log(1 + e^v) without overflow
  return unary(x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) mismatch("concat", a, b);
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out(Shape{r, ca + cb});
  auto o = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a.data().begin() + i * ca, ca, o.begin() + i * (ca + cb));
    std::copy_n(b.data().begin() + i * cb, cb, o.begin() + i * (ca + cb) + ca);
  }
  return out;
}

Tensor sum_rows(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(Shape{r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x.data()[i * c + j];
    out[i] = s;
  }
  return out;
}

}  // namespace kernels
}  // namespace seldiff
