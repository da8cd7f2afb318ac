#pragma once

// Dense compute kernels behind the autodiff ops.
//
// Every kernel has a serial reference in `serial::` and an OpenMP version in
// `parallel::`. The parallel versions split work over an index that is never
// reduced over, so each output element is accumulated in the same order as in
// the serial reference and results are bit-identical for any thread count.

#include <cstddef>
#include <span>

#include "metacount/tensor.hpp"

namespace metacount::kernels {

// 2-D convolution (cross-correlation) geometry for a single image laid out as
// [channels, height, width] and weights laid out as [out, in, k, k].
//
//   y[co,i,j] = sum_{ci,ki,kj} w[co,ci,ki,kj] * x[ci, i*s + ki*d - p, j*s + kj*d - p]
//
// with zero padding outside the input.
struct ConvGeometry {
  std::size_t in_channels = 0, in_h = 0, in_w = 0;
  std::size_t out_channels = 0, out_h = 0, out_w = 0;
  std::size_t kernel = 1, stride = 1, dilation = 1, pad = 0;

  std::size_t input_size() const { return in_channels * in_h * in_w; }
  std::size_t output_size() const { return out_channels * out_h * out_w; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
  Shape input_shape() const { return {in_channels, in_h, in_w}; }
  Shape output_shape() const { return {out_channels, out_h, out_w}; }
  Shape weight_shape() const { return {out_channels, in_channels, kernel, kernel}; }
};

// Output extent of one spatial axis; throws ShapeError when the kernel does
// not fit.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t dilation, std::size_t pad);

ConvGeometry make_conv_geometry(const Shape& input, const Shape& weight, std::size_t stride,
                                std::size_t dilation, std::size_t pad);

namespace serial {
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y);
void conv2d_input_grad(const ConvGeometry& g, std::span<const double> gy,
                       std::span<const double> w, std::span<double> gx);
void conv2d_weight_grad(const ConvGeometry& g, std::span<const double> x,
                        std::span<const double> gy, std::span<double> gw);
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c);
}  // namespace serial

namespace parallel {
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y);
void conv2d_input_grad(const ConvGeometry& g, std::span<const double> gy,
                       std::span<const double> w, std::span<double> gx);
void conv2d_weight_grad(const ConvGeometry& g, std::span<const double> x,
                        std::span<const double> gy, std::span<double> gw);
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c);
}  // namespace parallel

}  // namespace metacount::kernels
