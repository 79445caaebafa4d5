#pragma once

// Tape-based reverse-mode differentiation.
//
// A `Graph` owns every intermediate value created while evaluating an
// expression. Operations append nodes in evaluation order, so inputs always
// precede their consumers and `backward` is a single reverse sweep. All
// activations are retained until the graph is destroyed.
//
// One graph belongs to one thread. Model parameters are attached with
// `Graph::parameter`, which borrows the caller's storage instead of copying
// it; the gradient for that node is private to the graph, so independent
// graphs over the same parameters can run concurrently.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "simtrans/tensor.hpp"

namespace simtrans::ad {

class Graph;

/// Handle to a node of a `Graph`. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  /// Receives the graph and the id of the node being differentiated; reads
  /// `grad(id)` and accumulates into the inputs through `accumulate`.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  /// Leaf that reads `value` in place. `value` must outlive the graph and
  /// must not change while the graph is alive.
  Var parameter(const Tensor& value, bool requires_grad = true);

  /// Appends an operation node. `backward` may be empty for constant ops.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return *nodes_[id].value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id); }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  /// Gradient accumulated so far, or nullptr if nothing reached the node.
  const Tensor* grad(Var v) const;
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient buffer of `id`, zero-initialised on first use. Only valid for
  /// nodes that require grad.
  Tensor& grad_buffer(std::size_t id);
  /// Adds `delta` into the gradient of `id` if that node requires grad.
  void accumulate(std::size_t id, const Tensor& delta);

  /// d(loss)/d(node) for every node reachable from a scalar `loss`.
  void backward(Var loss);
  /// Vector-Jacobian product seeded with `seed` at `output`.
  void backward(Var output, const Tensor& seed);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    const Tensor* value = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Var push(const Tensor* value, bool requires_grad, std::vector<std::size_t> inputs, BackwardFn backward);

  std::deque<Tensor> owned_;  // deque keeps element addresses stable
  std::vector<Node> nodes_;
};

/// Binds model tensors into one graph, each tensor at most once.
class ParameterBinder {
 public:
  ParameterBinder(Graph& graph, bool requires_grad) : graph_(graph), requires_grad_(requires_grad) {}

  Var operator()(const Tensor& param);
  Graph& graph() const noexcept { return graph_; }
  /// Bound parameters in first-use order.
  const std::vector<std::pair<const Tensor*, Var>>& bound() const noexcept { return order_; }

 private:
  Graph& graph_;
  bool requires_grad_;
  std::unordered_map<const Tensor*, Var> index_;
  std::vector<std::pair<const Tensor*, Var>> order_;
};

// ---------------------------------------------------------------------------
// Operations. All operands must belong to the same graph. Matrices are 2-D;
// a "row" operand is 1 x n (or rank-1 of length n).

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equally shaped operands.
Var mul(Var a, Var b);
Var mul_scalar(Var a, double s);
/// x (r x c) plus a bias row (c entries) added to every row.
Var add_row(Var x, Var bias);
Var gelu(Var x);
Var relu(Var x);
Var softmax_rows(Var x);
/// Normalizes over the last axis, then applies gamma and beta (D entries each).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
Var transpose(Var x);
/// Joins matrices with equal row counts side by side.
Var concat_last_axis(std::span<const Var> parts);
/// Stacks matrices with equal column counts.
Var concat_rows(std::span<const Var> parts);
/// Rows [begin, end).
Var slice_rows(Var x, std::size_t begin, std::size_t end);
/// Columns [begin, end).
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var sum_all(Var x);
Var mean_all(Var x);
/// u.v / (|u||v|) for two equally sized vectors; defined as 0 (with a
/// warning on stderr) when either vector is zero.
Var cosine_similarity(Var u, Var v);

/// Plain-value cosine similarity with the same zero-vector convention.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

}  // namespace simtrans::ad
