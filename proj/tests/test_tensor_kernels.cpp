#include <omp.h>

#include <array>
#include <random>
#include <vector>

#include "doctest.h"
#include "metacount/kernels.hpp"
#include "metacount/tensor.hpp"

using namespace metacount;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("tensor construction validates extents") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.sum() == 9.0);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS_AS(Tensor({2}).item(), ShapeError);
  CHECK(Tensor::from({1, 2, 3}).reshaped({3, 1}).shape() == Shape{3, 1});
  CHECK_THROWS_AS(Tensor::from({1, 2, 3}).reshaped({2, 2}), ShapeError);
}

TEST_CASE("conv output extent") {
  CHECK(kernels::conv_out_extent(32, 3, 1, 1, 1) == 32);
  CHECK(kernels::conv_out_extent(32, 3, 2, 1, 1) == 16);
  CHECK(kernels::conv_out_extent(12, 3, 1, 2, 2) == 12);
  CHECK_THROWS_AS(kernels::conv_out_extent(2, 5, 1, 1, 0), ShapeError);
}

TEST_CASE("parallel conv kernels are bit-identical to the serial reference") {
  std::mt19937_64 rng(7);
  struct Case {
    std::size_t c, h, w, o, k, s, d, p;
  };
  const std::vector<Case> cases{{1, 9, 7, 3, 3, 1, 1, 1},  {4, 16, 16, 8, 3, 2, 1, 1},
                                {3, 12, 10, 5, 3, 1, 2, 2}, {2, 11, 13, 4, 1, 1, 1, 0},
                                {6, 20, 20, 16, 5, 2, 1, 2}, {16, 12, 12, 8, 3, 1, 3, 3}};
  for (int threads : {1, 3, 4}) {
    omp_set_num_threads(threads);
    for (const auto& c : cases) {
      CAPTURE(c.c);
      CAPTURE(threads);
      const auto g = kernels::make_conv_geometry({c.c, c.h, c.w}, {c.o, c.c, c.k, c.k}, c.s, c.d, c.p);
      const auto x = random_vec(g.input_size(), rng);
      const auto w = random_vec(g.weight_size(), rng);
      const auto gy = random_vec(g.output_size(), rng);

      std::vector<double> y1(g.output_size()), y2(g.output_size());
      kernels::serial::conv2d_forward(g, x, w, y1);
      kernels::parallel::conv2d_forward(g, x, w, y2);
      CHECK(y1 == y2);

      std::vector<double> gx1(g.input_size()), gx2(g.input_size());
      kernels::serial::conv2d_input_grad(g, gy, w, gx1);
      kernels::parallel::conv2d_input_grad(g, gy, w, gx2);
      CHECK(gx1 == gx2);

      std::vector<double> gw1(g.weight_size()), gw2(g.weight_size());
      kernels::serial::conv2d_weight_grad(g, x, gy, gw1);
      kernels::parallel::conv2d_weight_grad(g, x, gy, gw2);
      CHECK(gw1 == gw2);
    }
  }
  omp_set_num_threads(1);
}

TEST_CASE("conv input and weight gradients are adjoint to the forward map") {
  // <conv(x, w), gy> = <x, input_grad(gy, w)> = <w, weight_grad(x, gy)>
  std::mt19937_64 rng(11);
  const auto g = kernels::make_conv_geometry({3, 10, 9}, {4, 3, 3, 3}, 2, 2, 2);
  const auto x = random_vec(g.input_size(), rng);
  const auto w = random_vec(g.weight_size(), rng);
  const auto gy = random_vec(g.output_size(), rng);
  std::vector<double> y(g.output_size()), gx(g.input_size()), gw(g.weight_size());
  kernels::serial::conv2d_forward(g, x, w, y);
  kernels::serial::conv2d_input_grad(g, gy, w, gx);
  kernels::serial::conv2d_weight_grad(g, x, gy, gw);
  double a = 0, b = 0, c = 0;
  for (std::size_t i = 0; i < y.size(); ++i) a += y[i] * gy[i];
  for (std::size_t i = 0; i < x.size(); ++i) b += x[i] * gx[i];
  for (std::size_t i = 0; i < w.size(); ++i) c += w[i] * gw[i];
  CHECK(b == doctest::Approx(a).epsilon(1e-12));
  CHECK(c == doctest::Approx(a).epsilon(1e-12));
}

TEST_CASE("matmul serial and parallel agree") {
  std::mt19937_64 rng(3);
  using Dims = std::array<std::size_t, 3>;
  for (auto [m, k, n] : {Dims{2, 3, 1}, Dims{17, 5, 9}, Dims{64, 33, 40}}) {
    const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> c1(m * n), c2(m * n);
    kernels::serial::matmul(m, k, n, a, b, c1);
    kernels::parallel::matmul(m, k, n, a, b, c2);
    CHECK(c1 == c2);
  }
  std::vector<double> a{1, 2, 3, 4, 5, 6}, b{1, 0, -1}, c(2);
  kernels::serial::matmul(2, 3, 1, a, b, c);
  CHECK(c == std::vector<double>{-2, -2});
}
