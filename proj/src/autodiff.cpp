#include "metacount/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metacount/kernels.hpp"

namespace metacount::ad {

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Scale: return "scale";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Reshape: return "reshape";
    case OpKind::Transpose: return "transpose";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Conv2dInputGrad: return "conv2d_input_grad";
    case OpKind::Conv2dWeightGrad: return "conv2d_weight_grad";
    case OpKind::ChannelBroadcast: return "channel_broadcast";
    case OpKind::ChannelSum: return "channel_sum";
    case OpKind::Relu: return "relu";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph_->node(id_).value; }

const Tensor& GradRecord::of(NodeId id) const {
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    if (wrt[i] == id) return grads[i];
  }
  throw std::out_of_range("no gradient recorded for node " + std::to_string(id));
}

namespace {

[[noreturn]] void mismatch(OpKind op, const std::string& detail) {
  throw ShapeError(std::string(op_name(op)) + ": shape mismatch, " + detail);
}

void expect_arity(OpKind op, std::span<const Var> inputs, std::size_t n) {
  if (inputs.size() != n) {
    throw std::invalid_argument(std::string(op_name(op)) + ": expected " + std::to_string(n) +
                                " inputs, got " + std::to_string(inputs.size()));
  }
}

void expect_same(OpKind op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) mismatch(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class F>
Tensor elementwise(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  return out;
}

template <class F>
Tensor unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i]);
  return out;
}

kernels::ConvGeometry conv_geometry(OpKind op, const Shape& input, const Shape& weight,
                                    const OpAttrs& attrs) {
  try {
    return kernels::make_conv_geometry(input, weight, attrs.stride, attrs.dilation, attrs.pad);
  } catch (const ShapeError& e) {
    mismatch(op, e.what());
  }
}

Tensor forward_value(OpKind op, std::span<const Var> in, const OpAttrs& attrs) {
  switch (op) {
    case OpKind::Leaf:
      throw std::invalid_argument("leaf nodes are created with parameter() or constant()");
    case OpKind::Add: {
      expect_arity(op, in, 2);
      expect_same(op, in[0].value(), in[1].value());
      return elementwise(in[0].value(), in[1].value(), [](double a, double b) { return a + b; });
    }
    case OpKind::Sub: {
      expect_arity(op, in, 2);
      expect_same(op, in[0].value(), in[1].value());
      return elementwise(in[0].value(), in[1].value(), [](double a, double b) { return a - b; });
    }
    case OpKind::Mul: {
      expect_arity(op, in, 2);
      expect_same(op, in[0].value(), in[1].value());
      return elementwise(in[0].value(), in[1].value(), [](double a, double b) { return a * b; });
    }
    case OpKind::Div: {
      expect_arity(op, in, 2);
      expect_same(op, in[0].value(), in[1].value());
      return elementwise(in[0].value(), in[1].value(), [](double a, double b) { return a / b; });
    }
    case OpKind::Scale: {
      expect_arity(op, in, 1);
      const double f = attrs.factor;
      return unary(in[0].value(), [f](double a) { return a * f; });
    }
    case OpKind::Broadcast: {
      expect_arity(op, in, 1);
      if (in[0].value().size() != 1) mismatch(op, "source must be [1], got " + shape_str(in[0].shape()));
      return Tensor(attrs.shape, in[0].value()[0]);
    }
    case OpKind::Reshape: {
      expect_arity(op, in, 1);
      if (shape_numel(attrs.shape) != in[0].value().size()) {
        mismatch(op, shape_str(in[0].shape()) + " -> " + shape_str(attrs.shape));
      }
      return in[0].value().reshaped(attrs.shape);
    }
    case OpKind::Transpose: {
      expect_arity(op, in, 1);
      const Tensor& a = in[0].value();
      if (a.rank() != 2) mismatch(op, "expected rank 2, got " + shape_str(a.shape()));
      const std::size_t m = a.dim(0), n = a.dim(1);
      Tensor out({n, m});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
      return out;
    }
    case OpKind::MatMul: {
      expect_arity(op, in, 2);
      const Tensor& a = in[0].value();
      const Tensor& b = in[1].value();
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        mismatch(op, shape_str(a.shape()) + " x " + shape_str(b.shape()));
      }
      Tensor out({a.dim(0), b.dim(1)});
      kernels::parallel::matmul(a.dim(0), a.dim(1), b.dim(1), a.data(), b.data(), out.data());
      return out;
    }
    case OpKind::Conv2d: {
      expect_arity(op, in, 2);
      const auto g = conv_geometry(op, in[0].shape(), in[1].shape(), attrs);
      Tensor out(g.output_shape());
      kernels::parallel::conv2d_forward(g, in[0].value().data(), in[1].value().data(), out.data());
      return out;
    }
    case OpKind::Conv2dInputGrad: {
      expect_arity(op, in, 2);
      const auto g = conv_geometry(op, attrs.shape, in[1].shape(), attrs);
      if (in[0].shape() != g.output_shape()) {
        mismatch(op, "upstream " + shape_str(in[0].shape()) + " vs conv output " +
                         shape_str(g.output_shape()));
      }
      Tensor out(g.input_shape());
      kernels::parallel::conv2d_input_grad(g, in[0].value().data(), in[1].value().data(),
                                           out.data());
      return out;
    }
    case OpKind::Conv2dWeightGrad: {
      expect_arity(op, in, 2);
      const auto g = conv_geometry(op, in[0].shape(), attrs.shape, attrs);
      if (in[1].shape() != g.output_shape()) {
        mismatch(op, "upstream " + shape_str(in[1].shape()) + " vs conv output " +
                         shape_str(g.output_shape()));
      }
      Tensor out(g.weight_shape());
      kernels::parallel::conv2d_weight_grad(g, in[0].value().data(), in[1].value().data(),
                                            out.data());
      return out;
    }
    case OpKind::ChannelBroadcast: {
      expect_arity(op, in, 1);
      const Tensor& b = in[0].value();
      if (attrs.shape.size() != 3 || b.rank() != 1 || b.dim(0) != attrs.shape[0]) {
        mismatch(op, shape_str(b.shape()) + " -> " + shape_str(attrs.shape));
      }
      Tensor out(attrs.shape);
      const std::size_t plane = attrs.shape[1] * attrs.shape[2];
      for (std::size_t c = 0; c < b.size(); ++c)
        std::fill_n(out.data().begin() + static_cast<std::ptrdiff_t>(c * plane), plane, b[c]);
      return out;
    }
    case OpKind::ChannelSum: {
      expect_arity(op, in, 1);
      const Tensor& x = in[0].value();
      if (x.rank() != 3) mismatch(op, "expected [C,H,W], got " + shape_str(x.shape()));
      const std::size_t plane = x.dim(1) * x.dim(2);
      Tensor out({x.dim(0)});
      for (std::size_t c = 0; c < x.dim(0); ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < plane; ++k) s += x[c * plane + k];
        out[c] = s;
      }
      return out;
    }
    case OpKind::Relu: {
      expect_arity(op, in, 1);
      return unary(in[0].value(), [](double a) { return a > 0.0 ? a : 0.0; });
    }
    case OpKind::Sum: {
      expect_arity(op, in, 1);
      return Tensor::scalar(in[0].value().sum());
    }
    case OpKind::Mean: {
      expect_arity(op, in, 1);
      return Tensor::scalar(in[0].value().sum() / static_cast<double>(in[0].value().size()));
    }
    case OpKind::Square: {
      expect_arity(op, in, 1);
      return unary(in[0].value(), [](double a) { return a * a; });
    }
    case OpKind::Sqrt: {
      expect_arity(op, in, 1);
      return unary(in[0].value(), [](double a) { return std::sqrt(a); });
    }
  }
  throw std::invalid_argument("unknown op");
}

}  // namespace

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::var(NodeId id) {
  if (id >= nodes_.size()) throw std::out_of_range("node id out of range");
  return Var(this, id);
}

Var Graph::parameter(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.constant = true;
  return push(std::move(n));
}

Var Graph::detach(Var v) { return constant(v.value()); }

Var Graph::record(OpKind op, std::span<const Var> inputs, OpAttrs attrs) {
  for (const Var& v : inputs) {
    if (!v.valid() || &v.graph() != this) {
      throw std::invalid_argument(std::string(op_name(op)) + ": input belongs to another graph");
    }
  }
  Node n;
  n.op = op;
  n.value = forward_value(op, inputs, attrs);
  n.attrs = std::move(attrs);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) n.inputs.push_back(v.id());
  return push(std::move(n));
}

std::vector<std::optional<Var>> Graph::vector_jacobian(NodeId id, Var u,
                                                       const std::vector<bool>& needs) {
  // Copy what we need; emitting nodes may reallocate nodes_.
  const OpKind op = nodes_[id].op;
  const OpAttrs attrs = nodes_[id].attrs;
  const std::vector<NodeId> ids = nodes_[id].inputs;
  std::vector<Var> in;
  in.reserve(ids.size());
  for (NodeId i : ids) in.push_back(Var(this, i));
  const Var out(this, id);

  std::vector<std::optional<Var>> g(ids.size());
  auto want = [&](std::size_t k) { return needs[ids[k]]; };

  switch (op) {
    case OpKind::Leaf:
      break;
    case OpKind::Add:
      if (want(0)) g[0] = u;
      if (want(1)) g[1] = u;
      break;
    case OpKind::Sub:
      if (want(0)) g[0] = u;
      if (want(1)) g[1] = scale(u, -1.0);
      break;
    case OpKind::Mul:
      if (want(0)) g[0] = mul(u, in[1]);
      if (want(1)) g[1] = mul(u, in[0]);
      break;
    case OpKind::Div:
      if (want(0)) g[0] = div(u, in[1]);
      if (want(1)) g[1] = scale(mul(u, div(out, in[1])), -1.0);
      break;
    case OpKind::Scale:
      if (want(0)) g[0] = scale(u, attrs.factor);
      break;
    case OpKind::Broadcast:
      if (want(0)) g[0] = sum(u);
      break;
    case OpKind::Reshape:
      if (want(0)) g[0] = reshape(u, in[0].shape());
      break;
    case OpKind::Transpose:
      if (want(0)) g[0] = transpose(u);
      break;
    case OpKind::MatMul:
      if (want(0)) g[0] = matmul(u, transpose(in[1]));
      if (want(1)) g[1] = matmul(transpose(in[0]), u);
      break;
    case OpKind::Conv2d:
      if (want(0)) {
        g[0] = conv2d_input_grad(u, in[1], in[0].shape(), attrs.stride, attrs.dilation, attrs.pad);
      }
      if (want(1)) {
        g[1] = conv2d_weight_grad(in[0], u, in[1].shape(), attrs.stride, attrs.dilation, attrs.pad);
      }
      break;
    case OpKind::Conv2dInputGrad:
      // out = conv2d_input_grad(gy, w); u has the conv input's shape
      if (want(0)) g[0] = conv2d(u, in[1], attrs.stride, attrs.dilation, attrs.pad);
      if (want(1)) {
        g[1] = conv2d_weight_grad(u, in[0], in[1].shape(), attrs.stride, attrs.dilation, attrs.pad);
      }
      break;
    case OpKind::Conv2dWeightGrad:
      // out = conv2d_weight_grad(x, gy); u has the weight's shape
      if (want(0)) {
        g[0] = conv2d_input_grad(in[1], u, in[0].shape(), attrs.stride, attrs.dilation, attrs.pad);
      }
      if (want(1)) g[1] = conv2d(in[0], u, attrs.stride, attrs.dilation, attrs.pad);
      break;
    case OpKind::ChannelBroadcast:
      if (want(0)) g[0] = channel_sum(u);
      break;
    case OpKind::ChannelSum:
      if (want(0)) g[0] = channel_broadcast(u, in[0].shape());
      break;
    case OpKind::Relu:
      if (want(0)) {
        Tensor mask = unary(in[0].value(), [](double a) { return a > 0.0 ? 1.0 : 0.0; });
        g[0] = mul(u, constant(std::move(mask)));
      }
      break;
    case OpKind::Sum:
      if (want(0)) g[0] = broadcast(u, in[0].shape());
      break;
    case OpKind::Mean:
      if (want(0)) {
        g[0] = scale(broadcast(u, in[0].shape()), 1.0 / static_cast<double>(in[0].value().size()));
      }
      break;
    case OpKind::Square:
      if (want(0)) g[0] = mul(u, scale(in[0], 2.0));
      break;
    case OpKind::Sqrt:
      if (want(0)) g[0] = div(u, scale(out, 2.0));
      break;
  }
  return g;
}

std::vector<Var> Graph::backward_differentiable(Var root, std::span<const Var> wrt) {
  if (!root.valid() || &root.graph() != this) {
    throw std::invalid_argument("backward: root belongs to another graph");
  }
  if (root.shape() != Shape{1}) {
    throw ShapeError("backward: root must be a scalar of shape [1], got " +
                     shape_str(root.shape()));
  }
  const NodeId r = root.id();

  // needs[i]: node i lies on a path from some wrt node (so its adjoint is
  // required).
  std::vector<bool> needs(r + 1, false);
  for (const Var& w : wrt) {
    if (&w.graph() != this) throw std::invalid_argument("backward: wrt node belongs to another graph");
    if (w.id() <= r) needs[w.id()] = true;
  }
  for (NodeId i = 0; i <= r; ++i) {
    if (needs[i]) continue;
    for (NodeId p : nodes_[i].inputs) {
      if (needs[p]) {
        needs[i] = true;
        break;
      }
    }
  }

  std::vector<std::optional<Var>> adjoint(r + 1);
  if (needs[r]) adjoint[r] = constant(Tensor::scalar(1.0));

  for (NodeId i = r + 1; i-- > 0;) {
    if (!adjoint[i] || nodes_[i].op == OpKind::Leaf) continue;
    auto contributions = vector_jacobian(i, *adjoint[i], needs);
    for (std::size_t k = 0; k < contributions.size(); ++k) {
      if (!contributions[k]) continue;
      const NodeId p = nodes_[i].inputs[k];
      adjoint[p] = adjoint[p] ? add(*adjoint[p], *contributions[k]) : *contributions[k];
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() <= r && adjoint[w.id()]) {
      out.push_back(*adjoint[w.id()]);
    } else {
      out.push_back(constant(Tensor(w.shape(), 0.0)));
    }
  }
  return out;
}

GradRecord Graph::backward(Var root, std::span<const Var> wrt) {
  auto grads = backward_differentiable(root, wrt);
  GradRecord rec;
  rec.root = root.id();
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    rec.wrt.push_back(wrt[i].id());
    rec.grads.push_back(grads[i].value());
    nodes_[wrt[i].id()].grad = grads[i].value();
  }
  return rec;
}

namespace {
Var rec1(OpKind op, Var x, OpAttrs attrs = {}) {
  const Var in[] = {x};
  return x.graph().record(op, in, std::move(attrs));
}
Var rec2(OpKind op, Var a, Var b, OpAttrs attrs = {}) {
  const Var in[] = {a, b};
  return a.graph().record(op, in, std::move(attrs));
}
}  // namespace

Var add(Var a, Var b) { return rec2(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return rec2(OpKind::Sub, a, b); }
Var mul(Var a, Var b) { return rec2(OpKind::Mul, a, b); }
Var div(Var a, Var b) { return rec2(OpKind::Div, a, b); }

Var scale(Var x, double factor) {
  OpAttrs a;
  a.factor = factor;
  return rec1(OpKind::Scale, x, a);
}

Var broadcast(Var scalar, const Shape& shape) {
  OpAttrs a;
  a.shape = shape;
  return rec1(OpKind::Broadcast, scalar, a);
}

Var reshape(Var x, const Shape& shape) {
  OpAttrs a;
  a.shape = shape;
  return rec1(OpKind::Reshape, x, a);
}

Var transpose(Var x) { return rec1(OpKind::Transpose, x); }
Var matmul(Var a, Var b) { return rec2(OpKind::MatMul, a, b); }

Var conv2d(Var x, Var w, std::size_t stride, std::size_t dilation, std::size_t pad) {
  OpAttrs a;
  a.stride = stride;
  a.dilation = dilation;
  a.pad = pad;
  return rec2(OpKind::Conv2d, x, w, a);
}

Var conv2d_input_grad(Var gy, Var w, const Shape& input_shape, std::size_t stride,
                      std::size_t dilation, std::size_t pad) {
  OpAttrs a;
  a.stride = stride;
  a.dilation = dilation;
  a.pad = pad;
  a.shape = input_shape;
  return rec2(OpKind::Conv2dInputGrad, gy, w, a);
}

Var conv2d_weight_grad(Var x, Var gy, const Shape& weight_shape, std::size_t stride,
                       std::size_t dilation, std::size_t pad) {
  OpAttrs a;
  a.stride = stride;
  a.dilation = dilation;
  a.pad = pad;
  a.shape = weight_shape;
  return rec2(OpKind::Conv2dWeightGrad, x, gy, a);
}

Var channel_broadcast(Var bias, const Shape& shape) {
  OpAttrs a;
  a.shape = shape;
  return rec1(OpKind::ChannelBroadcast, bias, a);
}

Var channel_sum(Var x) { return rec1(OpKind::ChannelSum, x); }
Var relu(Var x) { return rec1(OpKind::Relu, x); }
Var sum(Var x) { return rec1(OpKind::Sum, x); }
Var mean(Var x) { return rec1(OpKind::Mean, x); }
Var square(Var x) { return rec1(OpKind::Square, x); }
Var sqrt(Var x) { return rec1(OpKind::Sqrt, x); }

Var add_bias(Var x, Var bias) { return add(x, channel_broadcast(bias, x.shape())); }
Var scalar_mul(Var scalar, Var x) { return mul(broadcast(scalar, x.shape()), x); }

}  // namespace metacount::ad
