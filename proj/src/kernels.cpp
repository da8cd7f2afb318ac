#include "metacount/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <string>

namespace metacount::kernels {

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t dilation, std::size_t pad) {
  if (stride == 0 || dilation == 0 || kernel == 0) {
    throw ShapeError("conv2d: kernel, stride and dilation must be positive");
  }
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (in + 2 * pad < span) {
    throw ShapeError("conv2d: effective kernel extent " + std::to_string(span) +
                     " exceeds padded input extent " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - span) / stride + 1;
}

ConvGeometry make_conv_geometry(const Shape& input, const Shape& weight, std::size_t stride,
                                std::size_t dilation, std::size_t pad) {
  if (input.size() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(input));
  if (weight.size() != 4 || weight[2] != weight[3]) {
    throw ShapeError("conv2d: weight must be [Cout,Cin,k,k], got " + shape_str(weight));
  }
  if (weight[1] != input[0]) {
    throw ShapeError("conv2d: weight input channels " + std::to_string(weight[1]) +
                     " != input channels " + std::to_string(input[0]));
  }
  ConvGeometry g;
  g.in_channels = input[0];
  g.in_h = input[1];
  g.in_w = input[2];
  g.out_channels = weight[0];
  g.kernel = weight[2];
  g.stride = stride;
  g.dilation = dilation;
  g.pad = pad;
  g.out_h = conv_out_extent(g.in_h, g.kernel, stride, dilation, pad);
  g.out_w = conv_out_extent(g.in_w, g.kernel, stride, dilation, pad);
  return g;
}

namespace {

using Index = std::int64_t;

// Output positions [lo, hi) whose tap at `offset` lands inside [0, in).
struct Range {
  Index lo, hi;
};

Range valid_range(Index offset, Index stride, Index in, Index out) {
  // need 0 <= o*stride + offset < in
  Index lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  Index hi = in - 1 - offset < 0 ? 0 : (in - 1 - offset) / stride + 1;
  return {lo, std::min(hi, out)};
}

// Per-channel bodies of the parallel kernels.

void forward_channel(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<double> y, std::size_t co) {
  const Index s = static_cast<Index>(g.stride);
  const Index ow = static_cast<Index>(g.out_w);
  double* yc = y.data() + co * g.out_h * g.out_w;
  std::fill(yc, yc + g.out_h * g.out_w, 0.0);
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    const double* xc = x.data() + ci * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      const Index roff = static_cast<Index>(ki * g.dilation) - static_cast<Index>(g.pad);
      const Range rr = valid_range(roff, s, static_cast<Index>(g.in_h), static_cast<Index>(g.out_h));
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const Index coff = static_cast<Index>(kj * g.dilation) - static_cast<Index>(g.pad);
        const Range cr =
            valid_range(coff, s, static_cast<Index>(g.in_w), static_cast<Index>(g.out_w));
        const double wv = w[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj];
        for (Index i = rr.lo; i < rr.hi; ++i) {
          const double* xrow = xc + (i * s + roff) * static_cast<Index>(g.in_w) + coff;
          double* yrow = yc + i * ow;
          if (s == 1) {
            for (Index j = cr.lo; j < cr.hi; ++j) yrow[j] += wv * xrow[j];
          } else {
            for (Index j = cr.lo; j < cr.hi; ++j) yrow[j] += wv * xrow[j * s];
          }
        }
      }
    }
  }
}

void input_grad_channel(const ConvGeometry& g, std::span<const double> gy,
                        std::span<const double> w, std::span<double> gx, std::size_t ci) {
  const Index s = static_cast<Index>(g.stride);
  const Index ow = static_cast<Index>(g.out_w);
  double* gxc = gx.data() + ci * g.in_h * g.in_w;
  std::fill(gxc, gxc + g.in_h * g.in_w, 0.0);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    const double* gyc = gy.data() + co * g.out_h * g.out_w;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      const Index roff = static_cast<Index>(ki * g.dilation) - static_cast<Index>(g.pad);
      const Range rr = valid_range(roff, s, static_cast<Index>(g.in_h), static_cast<Index>(g.out_h));
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const Index coff = static_cast<Index>(kj * g.dilation) - static_cast<Index>(g.pad);
        const Range cr =
            valid_range(coff, s, static_cast<Index>(g.in_w), static_cast<Index>(g.out_w));
        const double wv = w[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj];
        for (Index i = rr.lo; i < rr.hi; ++i) {
          double* gxrow = gxc + (i * s + roff) * static_cast<Index>(g.in_w) + coff;
          const double* gyrow = gyc + i * ow;
          if (s == 1) {
            for (Index j = cr.lo; j < cr.hi; ++j) gxrow[j] += wv * gyrow[j];
          } else {
            for (Index j = cr.lo; j < cr.hi; ++j) gxrow[j * s] += wv * gyrow[j];
          }
        }
      }
    }
  }
}

void weight_grad_channel(const ConvGeometry& g, std::span<const double> x,
                         std::span<const double> gy, std::span<double> gw, std::size_t co) {
  const Index s = static_cast<Index>(g.stride);
  const Index ow = static_cast<Index>(g.out_w);
  const double* gyc = gy.data() + co * g.out_h * g.out_w;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    const double* xc = x.data() + ci * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      const Index roff = static_cast<Index>(ki * g.dilation) - static_cast<Index>(g.pad);
      const Range rr = valid_range(roff, s, static_cast<Index>(g.in_h), static_cast<Index>(g.out_h));
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const Index coff = static_cast<Index>(kj * g.dilation) - static_cast<Index>(g.pad);
        const Range cr =
            valid_range(coff, s, static_cast<Index>(g.in_w), static_cast<Index>(g.out_w));
        double acc = 0.0;
        for (Index i = rr.lo; i < rr.hi; ++i) {
          const double* xrow = xc + (i * s + roff) * static_cast<Index>(g.in_w) + coff;
          const double* gyrow = gyc + i * ow;
          for (Index j = cr.lo; j < cr.hi; ++j) acc += gyrow[j] * xrow[j * s];
        }
        gw[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj] = acc;
      }
    }
  }
}

void matmul_row(std::size_t k, std::size_t n, std::span<const double> a,
                std::span<const double> b, std::span<double> c, std::size_t i) {
  double* crow = c.data() + i * n;
  std::fill(crow, crow + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[i * k + p];
    const double* brow = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

}  // namespace

// The serial reference evaluates each output element independently with
// explicit bounds checks; it shares no loop structure with the fast path.
namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y) {
  const Index ih = static_cast<Index>(g.in_h), iw = static_cast<Index>(g.in_w);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t i = 0; i < g.out_h; ++i) {
      for (std::size_t j = 0; j < g.out_w; ++j) {
        double acc = 0.0;
        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
          for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
              const Index r = static_cast<Index>(i * g.stride + ki * g.dilation) -
                              static_cast<Index>(g.pad);
              const Index c = static_cast<Index>(j * g.stride + kj * g.dilation) -
                              static_cast<Index>(g.pad);
              if (r < 0 || r >= ih || c < 0 || c >= iw) continue;
              acc += w[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj] *
                     x[(ci * g.in_h + static_cast<std::size_t>(r)) * g.in_w +
                       static_cast<std::size_t>(c)];
            }
          }
        }
        y[(co * g.out_h + i) * g.out_w + j] = acc;
      }
    }
  }
}

void conv2d_input_grad(const ConvGeometry& g, std::span<const double> gy,
                       std::span<const double> w, std::span<double> gx) {
  const Index s = static_cast<Index>(g.stride);
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::size_t a = 0; a < g.in_h; ++a) {
      for (std::size_t b = 0; b < g.in_w; ++b) {
        double acc = 0.0;
        for (std::size_t co = 0; co < g.out_channels; ++co) {
          for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
              const Index rn = static_cast<Index>(a + g.pad) - static_cast<Index>(ki * g.dilation);
              const Index cn = static_cast<Index>(b + g.pad) - static_cast<Index>(kj * g.dilation);
              if (rn < 0 || cn < 0 || rn % s != 0 || cn % s != 0) continue;
              const Index i = rn / s, j = cn / s;
              if (i >= static_cast<Index>(g.out_h) || j >= static_cast<Index>(g.out_w)) continue;
              acc += w[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj] *
                     gy[(co * g.out_h + static_cast<std::size_t>(i)) * g.out_w +
                        static_cast<std::size_t>(j)];
            }
          }
        }
        gx[(ci * g.in_h + a) * g.in_w + b] = acc;
      }
    }
  }
}

void conv2d_weight_grad(const ConvGeometry& g, std::span<const double> x,
                        std::span<const double> gy, std::span<double> gw) {
  const Index ih = static_cast<Index>(g.in_h), iw = static_cast<Index>(g.in_w);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      for (std::size_t ki = 0; ki < g.kernel; ++ki) {
        for (std::size_t kj = 0; kj < g.kernel; ++kj) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.out_h; ++i) {
            for (std::size_t j = 0; j < g.out_w; ++j) {
              const Index r = static_cast<Index>(i * g.stride + ki * g.dilation) -
                              static_cast<Index>(g.pad);
              const Index c = static_cast<Index>(j * g.stride + kj * g.dilation) -
                              static_cast<Index>(g.pad);
              if (r < 0 || r >= ih || c < 0 || c >= iw) continue;
              acc += gy[(co * g.out_h + i) * g.out_w + j] *
                     x[(ci * g.in_h + static_cast<std::size_t>(r)) * g.in_w +
                       static_cast<std::size_t>(c)];
            }
          }
          gw[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj] = acc;
        }
      }
    }
  }
}

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

}  // namespace serial

namespace parallel {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y) {
  const Index n = static_cast<Index>(g.out_channels);
#pragma omp parallel for schedule(static) if (g.output_size() * g.in_channels > 65536)
  for (Index co = 0; co < n; ++co) forward_channel(g, x, w, y, static_cast<std::size_t>(co));
}

void conv2d_input_grad(const ConvGeometry& g, std::span<const double> gy,
                       std::span<const double> w, std::span<double> gx) {
  const Index n = static_cast<Index>(g.in_channels);
#pragma omp parallel for schedule(static) if (g.input_size() * g.out_channels > 65536)
  for (Index ci = 0; ci < n; ++ci) input_grad_channel(g, gy, w, gx, static_cast<std::size_t>(ci));
}

void conv2d_weight_grad(const ConvGeometry& g, std::span<const double> x,
                        std::span<const double> gy, std::span<double> gw) {
  const Index n = static_cast<Index>(g.out_channels);
#pragma omp parallel for schedule(static) if (g.output_size() * g.in_channels > 65536)
  for (Index co = 0; co < n; ++co) weight_grad_channel(g, x, gy, gw, static_cast<std::size_t>(co));
}

void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
            std::span<const double> b, std::span<double> c) {
  const Index rows = static_cast<Index>(m);
#pragma omp parallel for schedule(static) if (m * k * n > 65536)
  for (Index i = 0; i < rows; ++i) matmul_row(k, n, a, b, c, static_cast<std::size_t>(i));
}

}  // namespace parallel

}  // namespace metacount::kernels
