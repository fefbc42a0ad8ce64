#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "tdir/tensor.hpp"

namespace tdir {

/// Handle to a value recorded on a Tape. Only meaningful for the tape that
/// produced it.
struct Var {
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kNone;
  bool valid() const { return id != kNone; }
};

enum class OpKind : std::uint8_t {
  kConstant,
  kParam,
  kMatmul,
  kLinear,
  kConv1d,
  kLeakyRelu,
  kSigmoid,
  kTanh,
  kAdd,
  kMul,
  kConcat,
  kSlice,
  kReshape,
  kSoftmax,
  kCrossEntropy,
  kSum,
};

const char* op_name(OpKind kind);

/// Probability floor applied before the log in cross_entropy.
inline constexpr double kProbabilityFloor = 1e-12;

/// Reverse-mode computation tape.
///
/// Every op appends one node whose inputs are earlier nodes, so recording
/// order is a topological order and backward() simply walks it in reverse.
/// Constants and parameters may be recorded by reference; referenced tensors
/// must outlive the tape. A tape is single-threaded; run one tape per worker.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor<T> value);
  Var constant_ref(const Tensor<T>& value);
  /// Records `value` as a differentiable leaf. backward() accumulates the
  /// leaf's gradient into `*sink` (sized on first use when empty).
  Var param(const Tensor<T>& value, std::vector<T>* sink);
  Var param(Tensor<T>& value) { return param(value, &value.grad); }

  Var matmul(Var a, Var b);
  /// y = x·Wᵀ + b for x of shape [in] or [N×in] and W of shape [out×in].
  /// `bias` may be an invalid Var.
  Var linear(Var x, Var weight, Var bias = {});
  /// Valid (unpadded) 1D convolution, x [C_in×L], w [C_out×C_in×K].
  Var conv1d(Var x, Var weight, Var bias, std::size_t stride = 1);
  Var leaky_relu(Var x, double slope);
  Var sigmoid(Var x);
  Var tanh(Var x);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  /// Concatenates along the leading axis; trailing dims must agree.
  Var concat(std::span<const Var> parts);
  /// Flat slice [offset, offset+length) returned as a rank-1 tensor.
  Var slice(Var x, std::size_t offset, std::size_t length);
  Var reshape(Var x, Shape dims);
  Var row(Var x, std::size_t r);
  Var softmax(Var x);
  /// −ln(max(probs[true_class], floor)). When `probs` is a softmax node the
  /// gradient is routed to its logits as (p − onehot).
  Var cross_entropy(Var probs, std::size_t true_class);
  Var sum(Var x);

  const Tensor<T>& value(Var v) const;
  /// Gradient of the last backward() target with respect to `v`; empty when
  /// the node was not reached. For a leaf with a sink this is the sink.
  const std::vector<T>& grad(Var v) const;

  /// Populates gradients for every node reachable from `loss`. Leaf sinks
  /// accumulate; callers zero them.
  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::span<const std::uint32_t> inputs(Var v) const { return nodes_.at(v.id).inputs; }

 private:
  struct Node {
    OpKind kind = OpKind::kConstant;
    std::vector<std::uint32_t> inputs;
    Tensor<T> own;
    const Tensor<T>* ref = nullptr;
    std::vector<T>* sink = nullptr;
    std::vector<T> grad;
    std::vector<T> saved;  // op-specific scratch kept for backward
    bool requires_grad = false;
    double aux_real = 0.0;
    std::size_t aux_int = 0;

    const Tensor<T>& value() const { return ref ? *ref : own; }
  };

  Var push(Node node);
  const Node& node(Var v) const;
  bool needs(std::uint32_t id) const { return nodes_[id].requires_grad; }
  std::vector<T>& grad_buffer(std::uint32_t id);
  void backward_node(std::uint32_t id);

  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace tdir
