#pragma once

// Central finite-difference checks shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "metacount/autodiff.hpp"

namespace gradcheck {

using metacount::Tensor;
namespace ad = metacount::ad;

// Builds a scalar from graph-side inputs.
using ScalarFn = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

inline double eval(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  ad::Graph g;
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(g.parameter(t));
  return f(g, vars).value().item();
}

inline std::vector<Tensor> analytic(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  ad::Graph g;
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(g.parameter(t));
  return g.backward(f(g, vars), vars).grads;
}

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3});
}

// Largest relative error between backward() and central differences over
// every input element.
inline double max_rel_error(const ScalarFn& f, const std::vector<Tensor>& inputs,
                            double h = 1e-5) {
  const auto grads = analytic(f, inputs);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      auto plus = inputs, minus = inputs;
      plus[i][k] += h;
      minus[i][k] -= h;
      const double num = (eval(f, plus) - eval(f, minus)) / (2.0 * h);
      worst = std::max(worst, rel_err(grads[i][k], num));
    }
  }
  return worst;
}

// The scalar sum(R_i * d f / d x_i) over the differentiable gradients, so
// that checking it exercises every op's backward rule a second time.
inline ScalarFn gradient_probe(const ScalarFn& f, std::vector<Tensor> weights) {
  return [f, weights](ad::Graph& g, const std::vector<ad::Var>& vars) {
    auto grads = g.backward_differentiable(f(g, vars), vars);
    ad::Var total = ad::sum(ad::mul(grads[0], g.constant(weights[0])));
    for (std::size_t i = 1; i < grads.size(); ++i) {
      total = ad::add(total, ad::sum(ad::mul(grads[i], g.constant(weights[i]))));
    }
    return total;
  };
}

inline Tensor random_tensor(const metacount::Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Values bounded away from zero so relu kinks stay outside the stencil.
inline Tensor away_from_zero(const metacount::Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(shape);
  for (double& v : t.data()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

struct OpCase {
  std::string name;
  ScalarFn fn;
  std::vector<Tensor> inputs;
};

// One case per registered op, each reduced to a scalar through a fixed
// random weighting of its output.
inline std::vector<OpCase> op_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto R = [&](const metacount::Shape& s) { return random_tensor(s, rng); };
  auto weigh = [](ad::Graph& g, ad::Var y, const Tensor& w) {
    return ad::sum(ad::mul(y, g.constant(w)));
  };
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, metacount::Shape out, std::vector<Tensor> inputs,
                      std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)> op) {
    Tensor w = R(out);
    cases.push_back({std::move(name),
                     [op, w, weigh](ad::Graph& g, const std::vector<ad::Var>& v) {
                       return weigh(g, op(g, v), w);
                     },
                     std::move(inputs)});
  };

  // Products of inputs keep second derivatives non-trivial for linear ops.
  add_case("add", {2, 3}, {R({2, 3}), R({2, 3})},
           [](ad::Graph&, const auto& v) { return ad::mul(ad::add(v[0], v[1]), v[0]); });
  add_case("sub", {2, 3}, {R({2, 3}), R({2, 3})},
           [](ad::Graph&, const auto& v) { return ad::mul(ad::sub(v[0], v[1]), v[1]); });
  add_case("mul", {3, 2}, {R({3, 2}), R({3, 2})},
           [](ad::Graph&, const auto& v) { return ad::mul(v[0], v[1]); });
  add_case("div", {4}, {R({4}), random_tensor({4}, rng, 0.5, 2.0)},
           [](ad::Graph&, const auto& v) { return ad::div(v[0], v[1]); });
  add_case("scale", {5}, {R({5})},
           [](ad::Graph&, const auto& v) { return ad::square(ad::scale(v[0], -1.7)); });
  add_case("broadcast", {2, 2}, {R({1}), R({2, 2})},
           [](ad::Graph&, const auto& v) { return ad::mul(ad::broadcast(v[0], {2, 2}), v[1]); });
  add_case("reshape", {3, 2}, {R({2, 3})},
           [](ad::Graph&, const auto& v) { return ad::square(ad::reshape(v[0], {3, 2})); });
  add_case("transpose", {3, 2}, {R({2, 3}), R({3, 2})},
           [](ad::Graph&, const auto& v) { return ad::mul(ad::transpose(v[0]), v[1]); });
  add_case("matmul", {2, 4}, {R({2, 3}), R({3, 4})},
           [](ad::Graph&, const auto& v) { return ad::matmul(v[0], v[1]); });
  add_case("conv2d", {3, 5, 5}, {R({2, 5, 5}), R({3, 2, 3, 3})},
           [](ad::Graph&, const auto& v) { return ad::conv2d(v[0], v[1], 1, 1, 1); });
  add_case("conv2d stride 2", {2, 4, 3}, {R({2, 7, 6}), R({2, 2, 3, 3})},
           [](ad::Graph&, const auto& v) { return ad::conv2d(v[0], v[1], 2, 1, 1); });
  add_case("conv2d dilation 2", {2, 6, 6}, {R({3, 6, 6}), R({2, 3, 3, 3})},
           [](ad::Graph&, const auto& v) { return ad::conv2d(v[0], v[1], 1, 2, 2); });
  add_case("conv2d_input_grad", {2, 6, 5}, {R({3, 3, 3}), R({3, 2, 3, 3})},
           [](ad::Graph&, const auto& v) {
             return ad::conv2d_input_grad(v[0], v[1], {2, 6, 5}, 2, 1, 1);
           });
  add_case("conv2d_weight_grad", {3, 2, 3, 3}, {R({2, 6, 6}), R({3, 6, 6})},
           [](ad::Graph&, const auto& v) {
             return ad::conv2d_weight_grad(v[0], v[1], {3, 2, 3, 3}, 1, 2, 2);
           });
  add_case("channel_broadcast", {3, 2, 2}, {R({3}), R({3, 2, 2})},
           [](ad::Graph&, const auto& v) {
             return ad::mul(ad::channel_broadcast(v[0], {3, 2, 2}), v[1]);
           });
  add_case("channel_sum", {3}, {R({3, 2, 4})},
           [](ad::Graph&, const auto& v) { return ad::square(ad::channel_sum(v[0])); });
  add_case("relu", {4, 3}, {away_from_zero({4, 3}, rng)},
           [](ad::Graph&, const auto& v) { return ad::mul(ad::relu(v[0]), v[0]); });
  add_case("sum", {1}, {R({3, 3})},
           [](ad::Graph&, const auto& v) { return ad::square(ad::sum(v[0])); });
  add_case("mean", {1}, {R({2, 5})},
           [](ad::Graph&, const auto& v) { return ad::square(ad::mean(v[0])); });
  add_case("square", {6}, {R({6})}, [](ad::Graph&, const auto& v) { return ad::square(v[0]); });
  add_case("sqrt", {5}, {random_tensor({5}, rng, 0.5, 2.0)},
           [](ad::Graph&, const auto& v) { return ad::sqrt(v[0]); });
  return cases;
}

}  // namespace gradcheck
