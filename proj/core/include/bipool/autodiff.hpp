#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bipool/ops.hpp"
#include "bipool/tensor.hpp"

namespace bipool {

class Tape;

/// Lightweight handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  /// Gradient of the last backward() root w.r.t. this node. Valid for any
  /// requires-grad node after backward(); disconnected nodes read as zeros.
  const Tensor& grad() const;
  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode autodiff graph. Nodes are appended in evaluation order, so
/// the creation order is a topological order and the backward sweep simply
/// walks ids in reverse. Values are immutable once recorded; each training
/// step builds a fresh tape.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;  // lazily materialized during backward()
    bool requires_grad = false;
    std::function<void(Tape&, const Node&)> backprop;  // empty for leaves
    const char* op_tag = "leaf";
  };

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var relu(Var a);

  /// transpose_first=true is the pooled outer product A^T B; its backward is
  /// the closed form dA = B G^T, dB = A G.
  Var matmul(Var a, Var b, bool transpose_first);
  Var matmul_nt(Var a, Var b);
  Var transpose(Var a);

  Var reduce_sum(Var a, std::vector<size_t> axes, bool keepdims = false);
  Var reduce_mean(Var a, std::vector<size_t> axes, bool keepdims = false);
  Var reduce_max(Var a, std::vector<size_t> axes, bool keepdims = false);
  /// Sum of every element, as a scalar node.
  Var sum_all(Var a);

  Var softmax(Var a, size_t axis);
  Var signed_sqrt(Var a);
  Var l2_normalize(Var a);

  Var reshape(Var a, std::vector<size_t> dims);
  /// [k x p] ++ [k x q] -> [k x (p+q)].
  Var concat_cols(Var a, Var b);
  /// Row i of the matrix scaled by v[i].
  Var row_scale(Var mat, Var v);
  /// v added to every row of the matrix (explicit, not implicit broadcast).
  Var add_row_vector(Var mat, Var v);

  /// Fused affine map: x (D), W (DxK), b (K) -> logits (K).
  Var linear(Var x, Var w, Var b);
  /// Negative log-likelihood of `label` under softmax(logits); stable fused
  /// form (logsumexp - logit).
  Var cross_entropy_logits(Var logits, int label);

  Var conv2d_3x3(Var x, Var w, Var bias);
  Var maxpool2(Var x);

  /// Pairwise forward-difference image prior, summed per channel; scalar.
  Var tv_beta(Var image, double beta);

  /// Reverse accumulation from a scalar root. Clears previous gradients;
  /// after the call every requires-grad node has a materialized gradient
  /// (zeros when disconnected from the root).
  void backward(Var root);

  const Node& node(int id) const { return nodes_[id]; }
  Node& node(int id) { return nodes_[id]; }
  size_t size() const { return nodes_.size(); }

  /// Adds delta into the gradient of node `id` (no-op for non-grad nodes).
  void accum(int id, const Tensor& delta);
  bool needs_grad(int id) const { return nodes_[id].requires_grad; }

 private:
  Var emit(Tensor value, std::vector<int> parents,
           std::function<void(Tape&, const Node&)> backprop, const char* tag);
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }

}  // namespace bipool
