#pragma once

#include <functional>
#include <vector>

#include "popgrad/tensor.hpp"

namespace popgrad {

/// Handle to a value recorded on a Tape.
struct ValueId {
  std::size_t index = static_cast<std::size_t>(-1);
  bool valid() const { return index != static_cast<std::size_t>(-1); }
};

/// Reverse-mode autodiff tape.
///
/// Every primitive appends one node holding the forward value and a closure
/// that scatters the node's adjoint into its inputs. Nodes are created in
/// topological order by construction, so one reverse sweep from a scalar
/// root produces gradients for every grad-requiring input.
class Tape {
public:
  ValueId input(Tensor value, bool needs_grad);

  // --- primitives ------------------------------------------------------
  /// y = x @ w + b with x:[N,I], w:[I,O], b:[O].
  ValueId affine(ValueId x, ValueId w, ValueId b);
  /// 3x3 convolution, stride 1, zero padding 1. x:[N,C,H,W], w:[O,C,3,3], b:[O].
  ValueId conv2d_3x3(ValueId x, ValueId w, ValueId b);
  ValueId relu(ValueId x);
  /// 2x2 max pooling, stride 2; trailing odd row/column dropped.
  ValueId maxpool2x2(ValueId x);
  /// Elementwise product with a pre-drawn mask (0 or 1/keep entries).
  ValueId dropout_mask(ValueId x, Tensor mask);
  /// Collapse [N, ...] to [N, rest].
  ValueId flatten2(ValueId x);
  ValueId add(ValueId a, ValueId b);
  ValueId mul(ValueId a, ValueId b);
  ValueId scale(ValueId x, double c);
  ValueId sum_all(ValueId x);
  ValueId mean_all(ValueId x);
  /// Mean of |x| over all entries (scalar).
  ValueId mean_abs(ValueId x);
  /// Mean of x^2 over all entries (scalar).
  ValueId mean_square(ValueId x);
  /// Mean cross-entropy of softmax(logits) against integer labels.
  ValueId softmax_cross_entropy(ValueId logits, std::vector<int> labels);

  // --- access ----------------------------------------------------------
  const Tensor& value(ValueId id) const { return nodes_[id.index].value; }
  double scalar(ValueId id) const;
  const Tensor& grad(ValueId id) const;
  bool has_grad(ValueId id) const { return nodes_[id.index].grad_live; }
  bool needs_grad(ValueId id) const { return nodes_[id.index].needs_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Reverse sweep from a scalar root. May be called once per tape.
  void backward(ValueId root);

private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_live = false;  // set once an adjoint has been accumulated
    std::function<void(Tape&)> backprop;
  };

  ValueId push(Tensor value, bool needs_grad, std::function<void(Tape&)> backprop);
  Tensor& grad_buffer(ValueId id);
  void accumulate(ValueId id, const Tensor& contribution);

  std::vector<Node> nodes_;
  bool backward_done_ = false;

  friend struct TapeOps;
};

}  // namespace popgrad
