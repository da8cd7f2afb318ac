// Serial reference vs OpenMP kernels on the shapes the toy network uses.
//   ./bench_kernels --benchmark_filter=conv

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>
#include <vector>

#include "metacount/kernels.hpp"

using namespace metacount;
namespace k = metacount::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// args: channels, spatial size, dilation
k::ConvGeometry geometry(const benchmark::State& st) {
  const auto c = static_cast<std::size_t>(st.range(0));
  const auto hw = static_cast<std::size_t>(st.range(1));
  const auto d = static_cast<std::size_t>(st.range(2));
  return k::make_conv_geometry({c, hw, hw}, {c, c, 3, 3}, 1, d, d);
}

template <auto Fn>
void conv_forward(benchmark::State& st) {
  const auto g = geometry(st);
  const auto x = random_vec(g.input_size(), 1), w = random_vec(g.weight_size(), 2);
  std::vector<double> y(g.output_size());
  for (auto _ : st) {
    Fn(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(g.output_size() * g.in_channels * 9));
}

template <auto Fn>
void conv_input_grad(benchmark::State& st) {
  const auto g = geometry(st);
  const auto gy = random_vec(g.output_size(), 3), w = random_vec(g.weight_size(), 4);
  std::vector<double> gx(g.input_size());
  for (auto _ : st) {
    Fn(g, gy, w, gx);
    benchmark::DoNotOptimize(gx.data());
  }
}

template <auto Fn>
void conv_weight_grad(benchmark::State& st) {
  const auto g = geometry(st);
  const auto x = random_vec(g.input_size(), 5), gy = random_vec(g.output_size(), 6);
  std::vector<double> gw(g.weight_size());
  for (auto _ : st) {
    Fn(g, x, gy, gw);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <auto Fn>
void matmul(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = random_vec(n * n, 7), b = random_vec(n * n, 8);
  std::vector<double> c(n * n);
  for (auto _ : st) {
    Fn(n, n, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({16, 12, 2})->Args({16, 24, 1})->Args({32, 48, 1});
}

}  // namespace

BENCHMARK(conv_forward<k::serial::conv2d_forward>)->Name("conv_forward/serial")->Apply(conv_args);
BENCHMARK(conv_forward<k::parallel::conv2d_forward>)->Name("conv_forward/omp")->Apply(conv_args);
BENCHMARK(conv_input_grad<k::serial::conv2d_input_grad>)->Name("conv_input_grad/serial")->Apply(conv_args);
BENCHMARK(conv_input_grad<k::parallel::conv2d_input_grad>)->Name("conv_input_grad/omp")->Apply(conv_args);
BENCHMARK(conv_weight_grad<k::serial::conv2d_weight_grad>)->Name("conv_weight_grad/serial")->Apply(conv_args);
BENCHMARK(conv_weight_grad<k::parallel::conv2d_weight_grad>)->Name("conv_weight_grad/omp")->Apply(conv_args);
BENCHMARK(matmul<k::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(matmul<k::parallel::matmul>)->Name("matmul/omp")->Arg(64)->Arg(256);

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::AddCustomContext("omp_max_threads", std::to_string(omp_get_max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
