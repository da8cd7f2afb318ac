#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Graph records every operation as a node. Gradients are produced by
// emitting new nodes into the same graph (backward-over-backward), so a
// scalar built from gradients can itself be differentiated. This is what the
// second-order meta-gradient relies on.
//
// Usage:
//   ad::Graph g;
//   auto w = g.parameter(Tensor::scalar(2.0));
//   auto f = ad::sum(ad::mul(ad::square(w), w));        // w^3
//   auto dw = g.backward_differentiable(f, {w})[0];     // 3 w^2, a node
//   auto d2 = g.backward(ad::sum(dw), {w}).grads[0];    // 6 w = 12

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "metacount/tensor.hpp"

namespace metacount::ad {

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Scale,             // x * constant factor
  Broadcast,         // [1] -> attrs.shape
  Reshape,
  Transpose,         // rank-2 only
  MatMul,
  Conv2d,            // (x[C,H,W], w[O,C,k,k]) -> [O,H',W']
  Conv2dInputGrad,   // (gy[O,H',W'], w) -> [C,H,W] (attrs.shape)
  Conv2dWeightGrad,  // (x, gy) -> [O,C,k,k] (attrs.shape)
  ChannelBroadcast,  // b[C] -> attrs.shape [C,H,W]
  ChannelSum,        // x[C,H,W] -> [C]
  Relu,
  Sum,               // -> [1]
  Mean,              // -> [1]
  Square,
  Sqrt,
};

std::string_view op_name(OpKind op);

struct OpAttrs {
  double factor = 1.0;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t pad = 0;
  Shape shape;
};

using NodeId = std::size_t;

class Graph;

// Lightweight handle to a node of a Graph. Copyable; valid while the graph
// lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  NodeId id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, NodeId id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

struct Node {
  OpKind op = OpKind::Leaf;
  std::vector<NodeId> inputs;
  OpAttrs attrs;
  Tensor value;
  bool constant = false;
  // Filled by Graph::backward for the requested nodes.
  std::optional<Tensor> grad;
};

struct GradRecord {
  NodeId root = 0;
  std::vector<NodeId> wrt;
  std::vector<Tensor> grads;  // grads[i] = d root / d wrt[i]

  const Tensor& of(NodeId id) const;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves. The engine treats both kinds identically; `constant` only
  // documents intent and is what detach() produces.
  Var parameter(Tensor value);
  Var constant(Tensor value);
  Var detach(Var v);

  // Validates input shapes for `op`, evaluates the forward value and appends
  // the node. Throws ShapeError naming the op and offending extents.
  Var record(OpKind op, std::span<const Var> inputs, OpAttrs attrs = {});

  // d root / d wrt as values; unreachable nodes get zero tensors.
  GradRecord backward(Var root, std::span<const Var> wrt);
  GradRecord backward(Var root, std::initializer_list<Var> wrt) {
    return backward(root, std::span<const Var>(wrt.begin(), wrt.size()));
  }

  // d root / d wrt as graph nodes that can be differentiated again.
  std::vector<Var> backward_differentiable(Var root, std::span<const Var> wrt);
  std::vector<Var> backward_differentiable(Var root, std::initializer_list<Var> wrt) {
    return backward_differentiable(root, std::span<const Var>(wrt.begin(), wrt.size()));
  }

  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  Var var(NodeId id);

 private:
  Var push(Node node);
  std::vector<std::optional<Var>> vector_jacobian(NodeId id, Var upstream,
                                                  const std::vector<bool>& needs);

  std::vector<Node> nodes_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var x, double factor);
Var broadcast(Var scalar, const Shape& shape);
Var reshape(Var x, const Shape& shape);
Var transpose(Var x);
Var matmul(Var a, Var b);
Var conv2d(Var x, Var w, std::size_t stride = 1, std::size_t dilation = 1, std::size_t pad = 0);
Var conv2d_input_grad(Var gy, Var w, const Shape& input_shape, std::size_t stride,
                      std::size_t dilation, std::size_t pad);
Var conv2d_weight_grad(Var x, Var gy, const Shape& weight_shape, std::size_t stride,
                       std::size_t dilation, std::size_t pad);
Var channel_broadcast(Var bias, const Shape& shape);
Var channel_sum(Var x);
Var relu(Var x);
Var sum(Var x);
Var mean(Var x);
Var square(Var x);
Var sqrt(Var x);

// Convenience compositions.
Var add_bias(Var x, Var bias);        // x[C,H,W] + bias[C]
Var scalar_mul(Var scalar, Var x);    // scalar[1] * x

}  // namespace metacount::ad
