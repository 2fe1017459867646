#ifndef MMFA_GRAPH_HPP_
#define MMFA_GRAPH_HPP_

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "mmfa/tensor.hpp"

namespace mmfa {

/// Handle to a node in a Graph.
struct Value {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

/// Running statistics for batch normalization (per channel). Eval mode
/// requires initialized() — init_model seeds (mean 0, var 1) so fresh models
/// can be evaluated; a default-constructed instance is uninitialized.
struct RunningStats {
  Tensor mean;
  Tensor var;
  std::uint64_t updates = 0;
  bool initialized() const { return updates > 0; }
};

/// Reverse-mode autodiff tape over Tensors (define-by-run).
///
/// Operations append nodes; backward() walks the tape in reverse creation
/// order, which is a valid topological order because an op can only reference
/// earlier nodes. All computation is single-threaded and accumulation order
/// is fixed, so results are bit-reproducible.
class Graph {
 public:
  /// Backward closure: receives this graph and the node's output gradient and
  /// accumulates into the parents' buffers via grad_buffer().
  using BackwardFn = std::function<void(Graph&, const Tensor&)>;

  /// Inserts an input or parameter. Values must be finite.
  Value leaf(Tensor v, bool requires_grad = false);

  /// Low-level node insertion for ops defined outside this class (losses,
  /// kernel statistics). requires_grad is inherited from the parents.
  Value node(Tensor v, const std::vector<Value>& parents, BackwardFn backward);

  const Tensor& value(Value v) const { return nodes_[v.id].value; }
  bool requires_grad(Value v) const { return nodes_[v.id].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Backpropagates from a scalar node. Clears previous gradients.
  void backward(Value root);

  /// Gradient of the last backward() root w.r.t. node v (zeros if v was not
  /// reached).
  Tensor grad(Value v) const;

  /// Accumulation buffer for backward closures; allocated as zeros on first
  /// touch.
  Tensor& grad_buffer(Value v);
  bool has_grad(Value v) const { return nodes_[v.id].has_grad; }

  // --- structural ops ---
  Value add(Value a, Value b);
  Value scale(Value a, double c);
  Value negate(Value a) { return scale(a, -1.0); }
  /// Scalar-valued weighted sum of scalar terms.
  Value weighted_sum(const std::vector<std::pair<double, Value>>& terms);
  Value sum_all(Value a);
  Value l2_squared(Value a);

  // --- neural net ops ---
  Value relu(Value x);
  /// y = x · wᵀ + b with x:[n,in], w:[out,in], b:[out].
  Value dense(Value x, Value w, Value b);
  /// Per-sample normalization: rank-2 input normalizes each row over the
  /// feature axis; rank>=3 normalizes each (sample, channel) over the spatial
  /// axes. Pre-affine output has zero mean and unit population variance per
  /// group.
  Value instance_norm(Value x, double epsilon);
  /// y = gamma[c]·x + beta[c]; channel axis is dim 1 (the feature axis for
  /// rank-2 inputs).
  Value channel_affine(Value x, Value gamma, Value beta);
  /// Train-mode batch norm: normalizes per channel over batch (and spatial)
  /// axes; requires batch >= 2. When update_stats is set, running statistics
  /// are blended as new = momentum·old + (1-momentum)·batch, so momentum 0
  /// adopts the batch statistics outright.
  Value batch_norm_train(Value x, double epsilon, RunningStats* stats,
                         double momentum, bool update_stats);
  /// Eval-mode batch norm using stored running statistics.
  Value batch_norm_eval(Value x, double epsilon, const RunningStats& stats);
  /// Valid (unpadded) convolution, x:[n,cin,h,w], w:[cout,cin,kh,kw].
  Value conv2d(Value x, Value w, Value b, std::size_t stride);
  Value global_avg_pool(Value x);

 private:
  struct NodeData {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Value push(Tensor v, bool requires_grad, BackwardFn backward);
  bool any_requires_grad(const std::vector<Value>& parents) const;

  std::vector<NodeData> nodes_;
};

}  // namespace mmfa

#endif  // MMFA_GRAPH_HPP_
