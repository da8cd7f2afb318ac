#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metacount/tensor.hpp"

namespace metacount::optim {

struct AdamParams {
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter first and second moments plus the step counter.
struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;

  static OptimizerState zeros_like(std::span<const Tensor> params);
};

// Bias-corrected Adam. A zero gradient on fresh moments leaves params
// unchanged.
void adam_step(std::vector<Tensor>& params, std::span<const Tensor> grads, OptimizerState& state,
               double lr, const AdamParams& hp);

void sgd_step(std::vector<Tensor>& params, std::span<const Tensor> grads, double lr);

}  // namespace metacount::optim
