#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seldiff {

/// Thrown when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Rank is arbitrary for storage, but the arithmetic kernels treat a tensor as a
/// matrix: rows() is the leading dimension and cols() the product of the rest.
/// A rank-0 tensor is a scalar with one element.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor(Shape{rows, cols}, std::move(data));
  }
  static Tensor vector(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor(Shape{n}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const noexcept { return rows() == 0 ? 0 : numel() / rows(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  /// Value of a single-element tensor.
  double item() const;

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  /// Copy of one row as a (1, cols) tensor.
  Tensor row(std::size_t r) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const Shape& shape);

/// Stacks equal-width rows into a (n, cols) matrix.
Tensor stack_rows(std::span<const Tensor> rows);

/// Rows of a matrix picked by index (repeats allowed).
Tensor select_rows(const Tensor& m, std::span<const std::size_t> idx);

/// Squared Euclidean norm of all elements.
double squared_norm(const Tensor& t);

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

namespace kernels {

// Raw kernels shared by the graph ops and the graph-free inference path, so
// both produce bitwise identical values.

/// True when `b` can be broadcast against `a` in the 2-D sense used by add/mul.
Shape broadcast_shape(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// Sums a broadcast gradient back down to `shape`.
Tensor reduce_to(const Tensor& g, const Shape& shape);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T * b
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor silu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor sum_rows(const Tensor& x);

}  // namespace kernels

}  // namespace seldiff
