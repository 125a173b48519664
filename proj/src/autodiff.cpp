#include "seldiff/autodiff.hpp"

#include <cmath>
#include <string>

namespace seldiff {

const Tensor& Var::value() const { return graph_->value(id_); }

namespace {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::matmul: return "matmul";
    case OpKind::sum: return "sum";
    case OpKind::sum_rows: return "sum_rows";
    case OpKind::mean: return "mean";
    case OpKind::silu: return "silu";
    case OpKind::tanh: return "tanh";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::softplus: return "softplus";
    case OpKind::concat: return "concat";
    case OpKind::broadcast: return "broadcast";
  }
  return "?";
}

void accumulate(Tensor& dst, const Tensor& g) {
  if (dst.numel() == 0) {
    dst = g;
    return;
  }
  auto d = dst.data();
  auto s = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

void Graph::check_owner(Var v) const {
  if (&v.graph() != this || v.id() >= nodes_.size()) {
    throw std::invalid_argument("variable does not belong to this graph");
  }
}

Var Graph::push(OpKind op, Tensor value, std::size_t a, std::size_t b, double c) {
  if (op != OpKind::constant && op != OpKind::parameter && !value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op_name(op));
  }
  nodes_.push_back(Node{op, a, b, c, std::move(value)});
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) { return push(OpKind::constant, std::move(value)); }

Var Graph::parameter(Tensor value) {
  Var v = push(OpKind::parameter, std::move(value));
  param_ids_.push_back(v.id());
  return v;
}

Var Graph::add(Var a, Var b) {
  check_owner(a), check_owner(b);
  return push(OpKind::add, kernels::add(a.value(), b.value()), a.id(), b.id());
}

Var Graph::sub(Var a, Var b) {
  check_owner(a), check_owner(b);
  return push(OpKind::sub, kernels::sub(a.value(), b.value()), a.id(), b.id());
}

Var Graph::mul(Var a, Var b) {
  check_owner(a), check_owner(b);
  return push(OpKind::mul, kernels::mul(a.value(), b.value()), a.id(), b.id());
}

Var Graph::scale(Var a, double c) {
  check_owner(a);
  return push(OpKind::scale, kernels::scale(a.value(), c), a.id(), 0, c);
}

Var Graph::matmul(Var a, Var b) {
  check_owner(a), check_owner(b);
  return push(OpKind::matmul, kernels::matmul(a.value(), b.value()), a.id(), b.id());
}

Var Graph::sum(Var a) {
  check_owner(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return push(OpKind::sum, Tensor::scalar(s), a.id());
}

Var Graph::sum_rows(Var a) {
  check_owner(a);
  return push(OpKind::sum_rows, kernels::sum_rows(a.value()), a.id());
}

Var Graph::mean(Var a) {
  check_owner(a);
  const auto& v = a.value();
  if (v.numel() == 0) throw ShapeError("mean of empty tensor");
  double s = 0.0;
  for (double x : v.data()) s += x;
  return push(OpKind::mean, Tensor::scalar(s / static_cast<double>(v.numel())), a.id());
}

Var Graph::silu(Var a) {
  check_owner(a);
  return push(OpKind::silu, kernels::silu(a.value()), a.id());
}

Var Graph::tanh(Var a) {
  check_owner(a);
  return push(OpKind::tanh, kernels::tanh(a.value()), a.id());
}

Var Graph::square(Var a) {
  check_owner(a);
  return push(OpKind::square, kernels::square(a.value()), a.id());
}

Var Graph::sqrt(Var a) {
  check_owner(a);
  return push(OpKind::sqrt, kernels::sqrt(a.value()), a.id());
}

Var Graph::softplus(Var a) {
  check_owner(a);
  return push(OpKind::softplus, kernels::softplus(a.value()), a.id());
}

Var Graph::concat(Var a, Var b) {
  check_owner(a), check_owner(b);
  return push(OpKind::concat, kernels::concat_cols(a.value(), b.value()), a.id(), b.id());
}

Var Graph::broadcast(Var a, Shape shape) {
  check_owner(a);
  Tensor target(std::move(shape));
  if (kernels::broadcast_shape(target, a.value()) != target.shape()) {
    throw ShapeError("broadcast: cannot expand " + shape_string(a.shape()) + " to " +
                     shape_string(target.shape()));
  }
  return push(OpKind::broadcast, kernels::add(target, a.value()), a.id());
}

Gradients Graph::backward(Var loss) const {
  if (&loss.graph() != this) throw std::invalid_argument("loss does not belong to this graph");
  if (loss.value().numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  std::vector<Tensor> grad(loss.id() + 1);
  grad[loss.id()] = Tensor(loss.shape(), 1.0);

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Tensor& g = grad[id];
    if (g.numel() == 0 && nodes_[id].value.numel() != 0) continue;  // unreachable
    const Node& n = nodes_[id];
    const Tensor& av = nodes_[n.a].value;
    switch (n.op) {
      case OpKind::constant:
      case OpKind::parameter:
        break;
      case OpKind::add:
        accumulate(grad[n.a], kernels::reduce_to(g, av.shape()));
        accumulate(grad[n.b], kernels::reduce_to(g, nodes_[n.b].value.shape()));
        break;
      case OpKind::sub:
        accumulate(grad[n.a], kernels::reduce_to(g, av.shape()));
        accumulate(grad[n.b], kernels::scale(kernels::reduce_to(g, nodes_[n.b].value.shape()), -1.0));
        break;
      case OpKind::mul: {
        const Tensor& bv = nodes_[n.b].value;
        accumulate(grad[n.a], kernels::reduce_to(kernels::mul(g, bv), av.shape()));
        accumulate(grad[n.b], kernels::reduce_to(kernels::mul(g, av), bv.shape()));
        break;
      }
      case OpKind::scale:
        accumulate(grad[n.a], kernels::scale(g, n.c));
        break;
      case OpKind::matmul: {
        const Tensor& bv = nodes_[n.b].value;
        accumulate(grad[n.a], kernels::matmul_nt(g, bv));
        accumulate(grad[n.b], kernels::matmul_tn(av, g));
        break;
      }
      case OpKind::sum:
        accumulate(grad[n.a], Tensor(av.shape(), g.item()));
        break;
      case OpKind::sum_rows:
        accumulate(grad[n.a], kernels::add(Tensor(av.shape()), g));
        break;
      case OpKind::mean:
        accumulate(grad[n.a], Tensor(av.shape(), g.item() / static_cast<double>(av.numel())));
        break;
      case OpKind::silu: {
        Tensor d(av.shape());
        for (std::size_t i = 0; i < d.numel(); ++i) {
          const double x = av[i];
          const double s = 1.0 / (1.0 + std::exp(-x));
          d[i] = g[i] * s * (1.0 + x * (1.0 - s));
        }
        accumulate(grad[n.a], d);
        break;
      }
      case OpKind::tanh: {
        Tensor d(av.shape());
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] = g[i] * (1.0 - n.value[i] * n.value[i]);
        accumulate(grad[n.a], d);
        break;
      }
      case OpKind::square: {
        Tensor d(av.shape());
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] = 2.0 * av[i] * g[i];
        accumulate(grad[n.a], d);
        break;
      }
      case OpKind::sqrt: {
        Tensor d(av.shape());
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] = g[i] * 0.5 / n.value[i];
        accumulate(grad[n.a], d);
        break;
      }
      case OpKind::softplus:
        accumulate(grad[n.a], kernels::mul(g, kernels::sigmoid(av)));
        break;
      case OpKind::concat: {
        const Tensor& bv = nodes_[n.b].value;
        const std::size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
        Tensor ga(av.shape()), gb(bv.shape());
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] = g[i * (ca + cb) + j];
          for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] = g[i * (ca + cb) + ca + j];
        }
        accumulate(grad[n.a], ga);
        accumulate(grad[n.b], gb);
        break;
      }
      case OpKind::broadcast:
        accumulate(grad[n.a], kernels::reduce_to(g, av.shape()));
        break;
    }
  }

  Gradients out;
  out.reserve(param_ids_.size());
  for (std::size_t pid : param_ids_) {
    if (pid < grad.size() && grad[pid].numel() == nodes_[pid].value.numel() && grad[pid].numel() != 0) {
      out.push_back(grad[pid].reshaped(nodes_[pid].value.shape()));
    } else {
      out.emplace_back(nodes_[pid].value.shape());
    }
  }
  return out;
}

double global_norm(const Gradients& grads) {
  double s = 0.0;
  for (const auto& g : grads) s += squared_norm(g);
  return std::sqrt(s);
}

}  // namespace seldiff
