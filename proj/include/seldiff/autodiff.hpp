#pragma once

#include <cstddef>
#include <vector>

#include "seldiff/tensor.hpp"

namespace seldiff {

class Graph;

/// Handle to a node recorded in a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

enum class OpKind {
  constant,
  parameter,
  add,
  sub,
  mul,
  scale,
  matmul,
  sum,
  sum_rows,
  mean,
  silu,
  tanh,
  square,
  sqrt,
  softplus,
  concat,
  broadcast,
};

/// One gradient per registered parameter, in registration order.
using Gradients = std::vector<Tensor>;

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, which
/// is a topological order by construction. One graph per optimisation step.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Registers a leaf that receives a gradient. Its index in the returned
  /// Gradients equals the number of parameters registered before it.
  Var parameter(Tensor value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var matmul(Var a, Var b);
  Var sum(Var a);
  /// (n, m) -> (n, 1)
  Var sum_rows(Var a);
  Var mean(Var a);
  Var silu(Var a);
  Var tanh(Var a);
  Var square(Var a);
  Var sqrt(Var a);
  /// log(1 + exp(x)); -log(sigmoid(z)) == softplus(-z).
  Var softplus(Var a);
  /// Column-wise concatenation of two matrices with equal row counts.
  Var concat(Var a, Var b);
  /// Explicit broadcast of a to `shape` (2-D broadcast rules).
  Var broadcast(Var a, Shape shape);

  /// Gradients of a scalar node with respect to every parameter. Parameters the
  /// loss does not depend on receive zero tensors.
  Gradients backward(Var loss) const;

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t num_parameters() const noexcept { return param_ids_.size(); }

 private:
  struct Node {
    OpKind op;
    std::size_t a = 0, b = 0;
    double c = 0.0;
    Tensor value;
  };

  Var push(OpKind op, Tensor value, std::size_t a = 0, std::size_t b = 0, double c = 0.0);
  void check_owner(Var v) const;

  std::vector<Node> nodes_;
  std::vector<std::size_t> param_ids_;
};

inline Var operator+(Var a, Var b) { return a.graph().add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph().sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph().mul(a, b); }
inline Var operator*(double c, Var a) { return a.graph().scale(a, c); }
inline Var operator-(Var a) { return a.graph().scale(a, -1.0); }
inline Var matmul(Var a, Var b) { return a.graph().matmul(a, b); }
inline Var sum(Var a) { return a.graph().sum(a); }
inline Var mean(Var a) { return a.graph().mean(a); }
inline Var square(Var a) { return a.graph().square(a); }

/// Euclidean norm over a list of gradient tensors.
double global_norm(const Gradients& grads);

}  // namespace seldiff
