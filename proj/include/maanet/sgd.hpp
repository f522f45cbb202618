#pragma once

#include <vector>

#include "maanet/tensor.hpp"

namespace maanet {

// SGD with momentum and weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
// Gradients are zeroed after the step.
template <typename Scalar>
struct SgdState {
  Scalar learning_rate = Scalar(0.01);
  Scalar momentum = Scalar(0.9);
  Scalar weight_decay = Scalar(1e-4);
  std::vector<ArrayX<Scalar>> velocity;

  void attach(const std::vector<Tensor<Scalar>>& params) {
    velocity.clear();
    velocity.reserve(params.size());
    for (const auto& p : params) {
      velocity.emplace_back(p.numel());
      velocity.back().setZero();
    }
  }
};

template <typename Scalar>
void sgd_step(std::vector<Tensor<Scalar>>& params, SgdState<Scalar>& state) {
  if (state.velocity.size() != params.size())
    throw ContractError("sgd_step: state not attached to this parameter set");
  if (state.learning_rate <= Scalar(0)) throw ContractError("sgd_step: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) throw ContractError("sgd_step: missing gradient for parameter " + std::to_string(i));
    auto& v = state.velocity[i];
    if (v.size() != p.numel()) throw ContractError("sgd_step: velocity dims mismatch");
    v = state.momentum * v + p.grad() + state.weight_decay * p.values();
    p.values() -= state.learning_rate * v;
    p.zero_grad();
  }
}

}  // namespace maanet
