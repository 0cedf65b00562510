#pragma once

#include <cstddef>
#include <functional>
#include <deque>
#include <unordered_map>
#include <vector>

#include "damo/parameter.hpp"
#include "damo/tensor.hpp"

namespace damo {

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  bool requires_grad() const;
};

/// Reverse-mode tape. Each forward pass records onto a fresh Graph; nodes are
/// stored in topological (creation) order, so backward is a reverse sweep.
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  /// Leaf bound to a parameter. Repeated calls return the same node; the
  /// node requires grad iff the parameter is trainable.
  Var param(Parameter& p);

  Var record(Tensor value, std::vector<std::size_t> inputs, Backward backward);

  /// Populates node gradients from a scalar loss and accumulates them into
  /// trainable parameters' `grad` buffers.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient of a node after backward; zeros if it never received any.
  Tensor grad(Var v) const;

  /// Gradient buffer of `id` (allocated on first use). For use in Backward.
  Tensor& grad_buffer(std::size_t id);
  const Tensor& upstream(std::size_t self) const { return nodes_[self].grad; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// Differentiable operations. All operate on float64 and are deterministic.
// Shapes are checked eagerly and mismatches raise DimensionError.

/// a[n×k] · b[k×m]
Var matmul(Var a, Var b);
/// a[n×k] · b[m×k]ᵀ
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
/// x[n×d] + v[d] broadcast over rows (v may be shaped [d] or [1×d]).
Var add_rowwise(Var x, Var v);
/// x[T×L×D] + y[T×D] broadcast over the token axis.
Var add_per_step(Var x, Var y);

/// Exact (erf) GELU.
Var gelu(Var x);
Var softmax_rows(Var x);

/// Scaled dot-product attention softmax(Q·Kᵀ/√d)·V. With `causal`, query i
/// attends to keys j ≤ i + (n_k − n_q).
Var attention(Var q, Var k, Var v, bool causal = false);

/// Row-wise layer normalization with affine gamma/beta (shape [d]).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var l2_normalize_rows(Var x, double eps = 1e-12);

Var sum(Var x);
Var mean(Var x);
/// Σ x ⊙ w with a constant weight tensor of the same shape.
Var weighted_sum(Var x, const Tensor& w);
/// Column means of a 2D tensor: [n×d] → [1×d].
Var mean_rows(Var x);

Var reshape(Var x, Shape shape);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
/// table[V×d] rows selected by index → [n×d].
Var gather_rows(Var table, const std::vector<int>& indices);

/// [T×L×D] → [T×D] token `index` of every step.
Var select_token(Var x, std::size_t index);
/// [T×L×D] → [T×(end−begin)×D].
Var slice_tokens(Var x, std::size_t begin, std::size_t end);
/// [T×L×D] → [T×D] mean over tokens.
Var mean_tokens(Var x);
/// [T×L×D] → [T×L_out×D]; output bin i averages tokens
/// [floor(i·L/L_out), ceil((i+1)·L/L_out)).
Var adaptive_avg_pool_tokens(Var x, std::size_t l_out);

/// 2D convolution over x[C_in×H×W] with weight[C_out×(C_in/groups)×kh×kw],
/// bias[C_out], stride 1 and symmetric zero padding.
Var grouped_conv2d(Var x, Var weight, Var bias, std::size_t groups, std::size_t pad);

/// Mean token-level cross-entropy of logits[L×V] against targets where
/// mask is true. Returns 0 when no position is selected.
Var cross_entropy(Var logits, const std::vector<int>& targets, const std::vector<bool>& mask);
Var cross_entropy(Var logits, const std::vector<int>& targets);

}  // namespace damo
