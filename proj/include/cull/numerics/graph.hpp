#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include "cull/numerics/tensor.hpp"

namespace cull {

template <class Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
template <class Scalar>
class Var {
 public:
  Var() = default;

  Graph<Scalar>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Matrix<Scalar>& value() const { return graph_->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph<Scalar>;
  Var(Graph<Scalar>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<Scalar>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape for reverse-mode differentiation. Nodes are appended in creation
/// order, which is a topological order of the DAG, so the backward sweep
/// walks ids downwards and visits each reachable node once.
///
/// With `record == false` no backward closures are stored and the graph acts
/// as a plain forward evaluator.
template <class Scalar>
class Graph {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(const Mat& upstream)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// Owned value without gradient.
  Var<Scalar> constant(Mat value);
  /// Borrowed value without gradient. `value` must outlive the graph.
  Var<Scalar> input(const Mat& value);
  /// Borrowed value whose gradient is accumulated. `value` must outlive the graph.
  Var<Scalar> parameter(const Mat& value);

  const Mat& value(Var<Scalar> v) const { return node(v).get(); }
  bool needs_grad(Var<Scalar> v) const { return node(v).needs_grad; }
  bool has_grad(Var<Scalar> v) const { return node(v).grad_ready; }
  /// Gradient of the last backward() root w.r.t. `v`. Throws if `v` was not reached.
  const Mat& grad(Var<Scalar> v) const;

  /// Runs the backward sweep from a 1x1 node, seeding it with `seed`.
  void backward(Var<Scalar> loss, Scalar seed = Scalar(1));

  // Op-author interface.
  Var<Scalar> emit(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward backward);

  template <class Derived>
  void accumulate(Var<Scalar> v, const Eigen::MatrixBase<Derived>& g) {
    auto& n = node(v);
    if (!n.needs_grad) return;
    if (!n.grad_ready) {
      n.grad = g;
      n.grad_ready = true;
    } else {
      n.grad += g;
    }
  }

 private:
  struct Node {
    Mat owned;
    const Mat* external = nullptr;
    Mat grad;
    bool needs_grad = false;
    bool grad_ready = false;
    Backward backward;

    const Mat& get() const { return external ? *external : owned; }
  };

  Node& node(Var<Scalar> v);
  const Node& node(Var<Scalar> v) const;

  std::deque<Node> nodes_;
  bool record_;
  bool swept_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable primitives. Shapes are validated eagerly; the only implicit
// broadcast is add_bias over rows.

template <class Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);

template <class Scalar>
Var<Scalar> transpose(Var<Scalar> a);

template <class Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b);

template <class Scalar>
Var<Scalar> add_bias(Var<Scalar> x, Var<Scalar> bias);

template <class Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor);

template <class Scalar>
Var<Scalar> hadamard(Var<Scalar> a, Var<Scalar> b);

/// Sum of all entries, 1x1.
template <class Scalar>
Var<Scalar> sum(Var<Scalar> a);

/// Row-wise softmax.
template <class Scalar>
Var<Scalar> softmax(Var<Scalar> a);

template <class Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias, Scalar eps = Scalar(1e-5));

/// tanh approximation of GELU.
template <class Scalar>
Var<Scalar> gelu(Var<Scalar> x);

/// Gathers rows of `table` by id.
template <class Scalar>
Var<Scalar> embedding(Var<Scalar> table, std::span<const int> ids);

/// Inverted dropout with a mask drawn from `rng`. p == 0 returns `x`.
template <class Scalar>
Var<Scalar> dropout(Var<Scalar> x, Scalar p, std::mt19937_64& rng);

/// Layout of a batched multi-head attention call. Queries are stored as
/// `batch` stacked blocks of `q_len` rows, keys/values as blocks of `k_len`
/// rows. Key j of item b is visible iff j < key_lengths[b] and, for causal
/// attention, j <= query index.
struct AttentionShape {
  int batch = 1;
  int q_len = 0;
  int k_len = 0;
  int heads = 1;
  bool causal = false;
  std::vector<int> key_lengths;  // empty: all keys valid
};

/// Scaled dot-product multi-head attention, fused into one node.
template <class Scalar>
Var<Scalar> attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, const AttentionShape& shape);

/// Mean token cross-entropy over rows whose target != pad_id, with optional
/// label smoothing. Returns a 1x1 node.
template <class Scalar>
Var<Scalar> softmax_ce(Var<Scalar> logits, std::span<const int> targets, int pad_id,
                       Scalar smoothing = Scalar(0));

}  // namespace cull
