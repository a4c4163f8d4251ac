#pragma once

// Minimal reverse-mode autodiff over dense double tensors.
//
// A Graph is built eagerly: every op computes its value when it is recorded
// and stores a closure that pushes the output gradient to its parents.
// Node indices are a topological order, so backward() walks them in reverse
// and the accumulation order is fixed by node index.

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sthq/tensor.hpp"

namespace sthq::ad {

enum class OpKind {
  leaf,
  constant,
  add,
  sub,
  mul,
  scale,
  matmul,
  relu,
  log,
  exp,
  softmax,
  log_softmax,
  sum,
  squared_error,
  reshape,
  slice,
  concat,
  gather,
  conv2d,
  upsample2x,
  sq_dist,
};

const char* op_name(OpKind kind);

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  std::size_t index() const noexcept { return index_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t index) : graph_(graph), index_(index) {}

  Graph* graph_ = nullptr;
  std::size_t index_ = 0;
};

class Graph {
 public:
  using Backprop = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Trainable leaf.
  Var variable(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Named leaf; `named()` looks it up again later.
  Var input(const std::string& name, Tensor value, bool requires_grad = true);
  Var named(const std::string& name);

  /// Accumulates d(output)/d(node) into every node that requires a gradient.
  /// `output` must hold exactly one element.
  void backward(Var output);

  const Tensor& value(std::size_t index) const { return nodes_.at(index).value; }
  const Tensor& grad(std::size_t index) const;
  OpKind kind(Var v) const { return nodes_.at(v.index()).kind; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Used by op implementations.
  Var record(OpKind kind, std::vector<std::size_t> parents, Tensor value, Backprop backprop);
  bool needs_grad(std::size_t index) const { return nodes_[index].requires_grad; }
  Tensor& grad_mut(std::size_t index) { return nodes_[index].grad; }
  const std::vector<std::size_t>& parents(std::size_t index) const { return nodes_[index].parents; }

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<std::size_t> parents;
    Tensor value;
    Tensor grad;
    Backprop backprop;
    bool requires_grad = false;
  };

  Var add_leaf(OpKind kind, Tensor value, bool requires_grad);

  std::deque<Node> nodes_;  // stable references while ops append nodes
  std::map<std::string, std::size_t> names_;
  bool has_grads_ = false;
};

// Elementwise ops broadcast an operand over leading axes: its shape must be
// a suffix of the other operand's shape, or it must hold a single element.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);

Var matmul(Var a, Var b);
Var relu(Var x);
Var log(Var x);
Var exp(Var x);
Var softmax(Var x);
Var log_softmax(Var x);

Var sum(Var x);
Var mean(Var x);
/// Sum of squared differences; shapes must match exactly.
Var squared_error(Var a, Var b);

Var reshape(Var x, Shape shape);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(const std::vector<Var>& parts, std::size_t axis);
/// out[i] = x[indices[i]]; the backward pass scatter-adds.
Var gather(Var x, std::shared_ptr<const std::vector<std::size_t>> indices, Shape out_shape);

/// x: [N, Cin, H, W], weight: [Cout, Cin, K, K], bias: [Cout].
Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t padding);
/// Nearest-neighbour 2x upsampling of an [N, C, H, W] tensor.
Var upsample2x(Var x);

/// Pairwise squared distances between rows of points [m, d] and rows of
/// centers [L, d], computed in expanded form |z|^2 - 2 z.c + |c|^2.
Var sq_dist(Var points, Var centers);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace sthq::ad
