#pragma once

#include <span>
#include <string>
#include <vector>

#include "tcpl/autodiff.hpp"

namespace tcpl {

struct OptimizerState {
  double learning_rate = 0.1;
  double momentum = 0.5;
  double weight_decay = 0.0005;
  std::vector<Tensor> velocity;  // one per parameter, created zeroed on first step

  void reset() { velocity.clear(); }
};

/// SGD with heavy-ball momentum and L2 weight decay:
///   g' = g + wd*theta;  v = mu*v + g';  theta -= lr*v
/// Gradients are zeroed afterwards. Nothing is modified if any gradient is non-finite.
inline void sgd_step(std::span<const Var> params, OptimizerState& state) {
  for (std::size_t k = 0; k < params.size(); ++k)
    if (!params[k]->grad.all_finite())
      throw Error(ErrorCode::NonFiniteGradient, "parameter " + std::to_string(k));

  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const Var& p : params) state.velocity.emplace_back(p->value.shape());
  }
  if (state.velocity.size() != params.size())
    throw Error(ErrorCode::ShapeMismatch, "optimizer velocity does not match parameter list");

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& theta = params[k]->value;
    Tensor& grad = params[k]->grad;
    Tensor& v = state.velocity[k];
    if (v.shape() != theta.shape()) throw Error(ErrorCode::ShapeMismatch, "velocity shape");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i] + state.weight_decay * theta[i];
      v[i] = state.momentum * v[i] + g;
      theta[i] -= state.learning_rate * v[i];
    }
    grad.fill(0.0);
  }
}

}  // namespace tcpl
