#pragma once

// Reverse-mode differentiation over dense double tensors.
//
// A graph is built eagerly: every primitive computes its forward value at
// construction time and keeps shared ownership of its inputs. backward() on a
// scalar root visits the reachable nodes once in reverse topological order and
// accumulates (+=) vector-Jacobian products into each node's gradient.
// Parameters are long-lived leaves whose gradients persist across graphs
// until the optimizer zeroes them.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tcpl/error.hpp"
#include "tcpl/tensor.hpp"

namespace tcpl {

inline constexpr double kNormEpsilon = 1e-12;

enum class Primitive {
  Leaf,
  Matmul,
  Add,
  Subtract,
  ScalarMultiply,
  Relu,
  MeanOverAxis,
  Sum,
  L2NormEps,
  SoftmaxLog,
  HingeMax0,
  Dot,
  L2Normalize,
};

inline constexpr std::array<std::pair<std::string_view, Primitive>, 12> kPrimitiveNames{{
    {"matmul", Primitive::Matmul},
    {"add", Primitive::Add},
    {"subtract", Primitive::Subtract},
    {"scalar_multiply", Primitive::ScalarMultiply},
    {"relu", Primitive::Relu},
    {"mean_over_axis", Primitive::MeanOverAxis},
    {"sum", Primitive::Sum},
    {"l2_norm_eps", Primitive::L2NormEps},
    {"softmax_log", Primitive::SoftmaxLog},
    {"hinge_max0", Primitive::HingeMax0},
    {"dot", Primitive::Dot},
    {"l2_normalize", Primitive::L2Normalize},
}};

inline Primitive primitive_from_name(std::string_view name) {
  for (const auto& [key, op] : kPrimitiveNames)
    if (key == name) return op;
  throw Error(ErrorCode::UnknownPrimitive, std::string(name));
}

struct PrimitiveArgs {
  double scalar = 1.0;    // ScalarMultiply factor
  std::size_t axis = 0;   // MeanOverAxis axis
};

struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  Primitive op = Primitive::Leaf;
  PrimitiveArgs args;
  bool requires_grad = false;
  bool backward_done = false;
};

using Var = std::shared_ptr<Node>;

inline Var make_leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->grad = Tensor(value.shape());
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

/// Trainable leaf.
inline Var parameter(Tensor value) { return make_leaf(std::move(value), true); }

/// Leaf that never receives gradient (input data, memory-bank rows, one-hot targets).
inline Var constant(Tensor value) { return make_leaf(std::move(value), false); }

namespace kernels {

[[noreturn]] inline void shape_error(std::string_view op, const Tensor& a, const Tensor& b) {
  throw Error(ErrorCode::ShapeMismatch,
              std::string(op) + " " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

// (m,k)x(k,n) -> (m,n); (m,k)x(k) -> (m); (k)x(k,n) -> (n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() == 2 && b.rank() == 2) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) shape_error("matmul", a, b);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = a[i * k + p];
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * b[p * n + j];
      }
    return out;
  }
  if (a.rank() == 2 && b.rank() == 1) {
    const std::size_t m = a.dim(0), k = a.dim(1);
    if (b.dim(0) != k) shape_error("matmul", a, b);
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p];
      out[i] = s;
    }
    return out;
  }
  if (a.rank() == 1 && b.rank() == 2) {
    const std::size_t k = a.dim(0), n = b.dim(1);
    if (b.dim(0) != k) shape_error("matmul", a, b);
    Tensor out({n});
    for (std::size_t p = 0; p < k; ++p) {
      const double ap = a[p];
      for (std::size_t j = 0; j < n; ++j) out[j] += ap * b[p * n + j];
    }
    return out;
  }
  shape_error("matmul", a, b);
}

inline bool is_bias_add(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0);
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
  }
  if (is_bias_add(a, b)) {
    Tensor out = a;
    const std::size_t n = b.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
    return out;
  }
  shape_error("add", a, b);
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("subtract", a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.values()) v *= c;
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

inline Tensor mean_over_axis(const Tensor& a, std::size_t axis) {
  if (a.rank() == 1 && axis == 0) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return Tensor::scalar(s / static_cast<double>(a.size()));
  }
  if (a.rank() != 2 || axis > 1)
    throw Error(ErrorCode::ShapeMismatch,
                "mean_over_axis " + std::to_string(axis) + " on " + shape_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (axis == 0) {
    Tensor out({n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j] += a[i * n + j];
    for (double& v : out.values()) v /= static_cast<double>(m);
    return out;
  }
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a[i * n + j];
    out[i] = s / static_cast<double>(n);
  }
  return out;
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::scalar(s);
}

inline Tensor l2_norm_eps(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return Tensor::scalar(std::sqrt(s + kNormEpsilon));
}

inline Tensor softmax_log(const Tensor& a) {
  if (a.rank() != 1)
    throw Error(ErrorCode::ShapeMismatch, "softmax_log expects a vector, got " + shape_string(a.shape()));
  const double mx = *std::max_element(a.values().begin(), a.values().end());
  double s = 0.0;
  for (double v : a.values()) s += std::exp(v - mx);
  const double log_s = std::log(s);
  Tensor out = a;
  for (double& v : out.values()) v = (v - mx) - log_s;
  return out;
}

// x / sqrt(sum x^2 + eps)
inline Tensor l2_normalize(const Tensor& a) {
  return scale(a, 1.0 / l2_norm_eps(a)[0]);
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || a.shape() != b.shape()) shape_error("dot", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return Tensor::scalar(s);
}

}  // namespace kernels

namespace detail {

inline std::size_t expected_arity(Primitive op) {
  switch (op) {
    case Primitive::Matmul:
    case Primitive::Add:
    case Primitive::Subtract:
    case Primitive::Dot:
      return 2;
    case Primitive::Leaf:
      return 0;
    default:
      return 1;
  }
}

inline Tensor forward(Primitive op, std::span<const Var> in, const PrimitiveArgs& args) {
  switch (op) {
    case Primitive::Matmul: return kernels::matmul(in[0]->value, in[1]->value);
    case Primitive::Add: return kernels::add(in[0]->value, in[1]->value);
    case Primitive::Subtract: return kernels::subtract(in[0]->value, in[1]->value);
    case Primitive::ScalarMultiply: return kernels::scale(in[0]->value, args.scalar);
    case Primitive::Relu:
    case Primitive::HingeMax0: return kernels::relu(in[0]->value);
    case Primitive::MeanOverAxis: return kernels::mean_over_axis(in[0]->value, args.axis);
    case Primitive::Sum: return kernels::sum(in[0]->value);
    case Primitive::L2NormEps: return kernels::l2_norm_eps(in[0]->value);
    case Primitive::SoftmaxLog: return kernels::softmax_log(in[0]->value);
    case Primitive::Dot: return kernels::dot(in[0]->value, in[1]->value);
    case Primitive::L2Normalize: return kernels::l2_normalize(in[0]->value);
    case Primitive::Leaf: break;
  }
  throw Error(ErrorCode::UnknownPrimitive, "leaf is not an operation");
}

// Accumulates this node's vector-Jacobian product into its parents.
inline void propagate(Node& node) {
  const Tensor& g = node.grad;
  auto& ps = node.parents;
  auto wants = [&](std::size_t i) { return ps[i]->requires_grad; };

  switch (node.op) {
    case Primitive::Matmul: {
      const Tensor& a = ps[0]->value;
      const Tensor& b = ps[1]->value;
      if (a.rank() == 2 && b.rank() == 2) {
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        if (wants(0)) {
          Tensor& ga = ps[0]->grad;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * b[p * n + j];
              ga[i * k + p] += s;
            }
        }
        if (wants(1)) {
          Tensor& gb = ps[1]->grad;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = a[i * k + p];
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
            }
        }
      } else if (a.rank() == 2) {
        const std::size_t m = a.dim(0), k = a.dim(1);
        if (wants(0))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) ps[0]->grad[i * k + p] += g[i] * b[p];
        if (wants(1))
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i) s += a[i * k + p] * g[i];
            ps[1]->grad[p] += s;
          }
      } else {
        const std::size_t k = a.dim(0), n = b.dim(1);
        if (wants(0))
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += b[p * n + j] * g[j];
            ps[0]->grad[p] += s;
          }
        if (wants(1))
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) ps[1]->grad[p * n + j] += a[p] * g[j];
      }
      break;
    }
    case Primitive::Add: {
      if (wants(0))
        for (std::size_t i = 0; i < g.size(); ++i) ps[0]->grad[i] += g[i];
      if (wants(1)) {
        const std::size_t n = ps[1]->value.size();
        for (std::size_t i = 0; i < g.size(); ++i) ps[1]->grad[i % n] += g[i];
      }
      break;
    }
    case Primitive::Subtract: {
      if (wants(0))
        for (std::size_t i = 0; i < g.size(); ++i) ps[0]->grad[i] += g[i];
      if (wants(1))
        for (std::size_t i = 0; i < g.size(); ++i) ps[1]->grad[i] -= g[i];
      break;
    }
    case Primitive::ScalarMultiply: {
      if (wants(0))
        for (std::size_t i = 0; i < g.size(); ++i) ps[0]->grad[i] += node.args.scalar * g[i];
      break;
    }
    case Primitive::Relu:
    case Primitive::HingeMax0: {
      if (wants(0)) {
        const Tensor& x = ps[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > 0.0) ps[0]->grad[i] += g[i];
      }
      break;
    }
    case Primitive::MeanOverAxis: {
      if (!wants(0)) break;
      const Tensor& x = ps[0]->value;
      Tensor& gx = ps[0]->grad;
      if (x.rank() == 1) {
        const double share = g[0] / static_cast<double>(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += share;
      } else {
        const std::size_t m = x.dim(0), n = x.dim(1);
        if (node.args.axis == 0) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j] / static_cast<double>(m);
        } else {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i] / static_cast<double>(n);
        }
      }
      break;
    }
    case Primitive::Sum: {
      if (wants(0))
        for (double& v : ps[0]->grad.values()) v += g[0];
      break;
    }
    case Primitive::L2NormEps: {
      if (wants(0)) {
        const Tensor& x = ps[0]->value;
        const double y = node.value[0];
        for (std::size_t i = 0; i < x.size(); ++i) ps[0]->grad[i] += g[0] * x[i] / y;
      }
      break;
    }
    case Primitive::SoftmaxLog: {
      if (wants(0)) {
        double gsum = 0.0;
        for (double v : g.values()) gsum += v;
        for (std::size_t i = 0; i < g.size(); ++i)
          ps[0]->grad[i] += g[i] - std::exp(node.value[i]) * gsum;
      }
      break;
    }
    case Primitive::Dot: {
      const Tensor& a = ps[0]->value;
      const Tensor& b = ps[1]->value;
      if (wants(0))
        for (std::size_t i = 0; i < a.size(); ++i) ps[0]->grad[i] += g[0] * b[i];
      if (wants(1))
        for (std::size_t i = 0; i < a.size(); ++i) ps[1]->grad[i] += g[0] * a[i];
      break;
    }
    case Primitive::L2Normalize: {
      if (wants(0)) {
        // d(x/n) = (g - y (y.g)) / n
        const double norm = kernels::l2_norm_eps(ps[0]->value)[0];
        double yg = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) yg += node.value[i] * g[i];
        for (std::size_t i = 0; i < g.size(); ++i) ps[0]->grad[i] += (g[i] - node.value[i] * yg) / norm;
      }
      break;
    }
    case Primitive::Leaf:
      break;
  }
}

}  // namespace detail

inline Var apply_primitive(Primitive op, std::span<const Var> inputs, PrimitiveArgs args = {}) {
  if (op == Primitive::Leaf) throw Error(ErrorCode::UnknownPrimitive, "leaf is not an operation");
  if (inputs.size() != detail::expected_arity(op))
    throw Error(ErrorCode::ShapeMismatch, "wrong number of inputs: " + std::to_string(inputs.size()));
  auto node = std::make_shared<Node>();
  node->value = detail::forward(op, inputs, args);
  node->grad = Tensor(node->value.shape());
  node->op = op;
  node->args = args;
  node->parents.assign(inputs.begin(), inputs.end());
  node->requires_grad = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v->requires_grad; });
  return node;
}

inline Var apply_primitive(std::string_view op_name, std::span<const Var> inputs, PrimitiveArgs args = {}) {
  return apply_primitive(primitive_from_name(op_name), inputs, args);
}

inline Var matmul(const Var& a, const Var& b) { return apply_primitive(Primitive::Matmul, std::array{a, b}); }
inline Var add(const Var& a, const Var& b) { return apply_primitive(Primitive::Add, std::array{a, b}); }
inline Var subtract(const Var& a, const Var& b) { return apply_primitive(Primitive::Subtract, std::array{a, b}); }
inline Var dot(const Var& a, const Var& b) { return apply_primitive(Primitive::Dot, std::array{a, b}); }
inline Var scalar_multiply(const Var& a, double c) {
  return apply_primitive(Primitive::ScalarMultiply, std::array{a}, {.scalar = c});
}
inline Var relu(const Var& a) { return apply_primitive(Primitive::Relu, std::array{a}); }
inline Var hinge_max0(const Var& a) { return apply_primitive(Primitive::HingeMax0, std::array{a}); }
inline Var mean_over_axis(const Var& a, std::size_t axis) {
  return apply_primitive(Primitive::MeanOverAxis, std::array{a}, {.axis = axis});
}
inline Var sum(const Var& a) { return apply_primitive(Primitive::Sum, std::array{a}); }
inline Var l2_norm_eps(const Var& a) { return apply_primitive(Primitive::L2NormEps, std::array{a}); }
inline Var softmax_log(const Var& a) { return apply_primitive(Primitive::SoftmaxLog, std::array{a}); }
inline Var l2_normalize(const Var& a) { return apply_primitive(Primitive::L2Normalize, std::array{a}); }

/// Sums scalar nodes left to right; an empty list yields a constant zero.
inline Var sum_scalars(std::span<const Var> terms) {
  if (terms.empty()) return constant(Tensor::scalar(0.0));
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

/// Reachable nodes in topological order (parents before children). Iterative
/// DFS over parents in stored order, so the order is a pure function of the graph.
inline std::vector<Node*> topological_order(const Var& root) {
  std::vector<Node*> order;
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

inline void backward(const Var& root) {
  if (!root->value.is_scalar())
    throw Error(ErrorCode::NonScalarRoot, "root has shape " + shape_string(root->value.shape()));
  if (root->backward_done) throw Error(ErrorCode::DoubleBackward, "backward already ran on this root");
  root->backward_done = true;
  if (!root->requires_grad) return;
  const auto order = topological_order(root);
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->op != Primitive::Leaf) detail::propagate(**it);
}

inline void zero_grad(std::span<const Var> params) {
  for (const Var& p : params) p->grad.fill(0.0);
}

/// Central-difference check of the analytic gradient for every entry of
/// `params`. Parameter values are perturbed in place and restored; their
/// gradients are left zeroed. Returns max |a-n| / max(|a|, |n|, 1e-8).
inline double check_gradients(const std::function<Var()>& loss_builder, std::span<const Var> params, double h) {
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidConfig, "finite-difference step must be positive");
  auto evaluate = [&]() {
    const double v = loss_builder()->value.item();
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, "loss evaluated to " + std::to_string(v));
    return v;
  };

  zero_grad(params);
  const Var root = loss_builder();
  if (!root->value.all_finite()) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");
  backward(root);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const Var& p : params) analytic.push_back(p->grad);
  zero_grad(params);

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& theta = params[k]->value;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + h;
      const double up = evaluate();
      theta[i] = saved - h;
      const double down = evaluate();
      theta[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

/// Tensor-valued form: the builder receives fresh parameter leaves.
inline double check_gradients(const std::function<Var(std::span<const Var>)>& loss_builder,
                              const std::vector<Tensor>& params, double h) {
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& t : params) leaves.push_back(parameter(t));
  return check_gradients([&]() { return loss_builder(leaves); }, leaves, h);
}

}  // namespace tcpl
