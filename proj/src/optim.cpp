#include "metacount/optim.hpp"

#include <cmath>

namespace metacount::optim {

OptimizerState OptimizerState::zeros_like(std::span<const Tensor> params) {
  OptimizerState s;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.shape(), 0.0);
    s.v.emplace_back(p.shape(), 0.0);
  }
  return s;
}

static void check_grads(const std::vector<Tensor>& params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw ShapeError("optimizer: gradient " + std::to_string(i) + " shape " +
                       shape_str(grads[i].shape()) + " vs parameter " +
                       shape_str(params[i].shape()));
    }
  }
}

void adam_step(std::vector<Tensor>& params, std::span<const Tensor> grads, OptimizerState& state,
               double lr, const AdamParams& hp) {
  check_grads(params, grads);
  if (state.m.size() != params.size()) state = OptimizerState::zeros_like(params);
  ++state.step;
  const double c1 = 1.0 - std::pow(hp.b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = hp.b1 * m[k] + (1.0 - hp.b1) * g[k];
      v[k] = hp.b2 * v[k] + (1.0 - hp.b2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
  }
}

void sgd_step(std::vector<Tensor>& params, std::span<const Tensor> grads, double lr) {
  check_grads(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
}

}  // namespace metacount::optim
