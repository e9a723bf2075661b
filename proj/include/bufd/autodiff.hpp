#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "bufd/tensor.hpp"

namespace bufd {

enum class BnMode { train, infer };

/// Handle to a value recorded on a tape.
struct NodeId {
  std::int32_t v = -1;
  bool valid() const { return v >= 0; }
};

/// Batch-norm running statistics. The tensors live in a ParameterSet (so
/// checkpoints carry them); the tape op reads and, in train mode, updates
/// them in place. batches_seen is a one-element counter tensor.
template <typename T>
struct BnBuffers {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
  Tensor<T>* batches_seen = nullptr;
};

/// Reverse-mode tape over dense tensors. Operations execute eagerly and
/// record a backward closure; backward() replays the closures in reverse
/// creation order, visiting each node once after all of its consumers.
///
/// Layer vocabulary: 3x3 zero-padded convolution, batch norm, relu, sigmoid,
/// same-shape elementwise arithmetic, scalar affine, channel concatenation,
/// sum and mse reductions. No implicit broadcasting except tensor-scalar.
template <typename T>
class Tape {
 public:
  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;

  /// Record an input or parameter value. Gradients accumulate here.
  NodeId leaf(Tensor<T> value);

  /// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
  /// input B x Cin x H x W, kernel Cout x Cin x 3 x 3, bias Cout.
  NodeId conv2d(NodeId input, NodeId kernel, NodeId bias);

  /// Per-channel batch normalization over (batch, height, width).
  /// Train mode normalizes by batch statistics and updates the running
  /// buffers; infer mode uses the stored running statistics and requires at
  /// least one prior train-mode batch.
  NodeId batch_norm(NodeId input, NodeId gamma, NodeId beta,
                    BnBuffers<T> buffers, BnMode mode);

  NodeId relu(NodeId input);
  NodeId sigmoid(NodeId input);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);

  /// scale * x + shift, elementwise; the tensor-scalar arithmetic variant.
  NodeId affine(NodeId x, T scale, T shift);

  /// Channel-axis concatenation of 4-d tensors with equal B, H, W.
  NodeId concat_channels(std::span<const NodeId> parts);

  /// Sum of all elements; result has shape {1}.
  NodeId sum(NodeId x);

  /// Mean over all elements of (a - b)^2; result has shape {1}.
  NodeId mse(NodeId a, NodeId b);

  /// Chain-rule sweep from a scalar loss node. Populates gradients for every
  /// node the loss depends on; untouched nodes read as zero gradient.
  void backward(NodeId loss);

  const Tensor<T>& value(NodeId id) const { return nodes_[id.v].value; }
  /// Gradient of the last backward() with respect to this node. Zero tensor
  /// if the node did not participate.
  const Tensor<T>& grad(NodeId id);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool reached = false;
    std::function<void(Tape&)> back;  // empty for leaves
  };

  NodeId push(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}});
    return NodeId{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  /// Accumulation target for backward closures; allocates zeros on first
  /// touch and marks the node reached.
  Tensor<T>& grad_acc(NodeId id);

  Node& node(NodeId id) { return nodes_[id.v]; }

  // deque: references returned by value()/grad() stay valid as further ops
  // are recorded
  std::deque<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace bufd
