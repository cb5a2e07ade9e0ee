#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation applied to its variables in execution
// order, so records are topologically sorted by construction and backward()
// is a single reverse sweep. Parameters live outside the tape; their leaf
// records accumulate gradients into the parameter tensor's own grad buffer.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "fergcn/tensor.hpp"

namespace fergcn {

enum class OpKind {
  kConstant,
  kParameter,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRowBias,
  kLeakyRelu,
  kSigmoid,
  kTanh,
  kSoftmax,
  kMeanOverRows,
  kStopGradient,
  kCrossEntropy,
  kSum,
  kSelectRows,
  kSelectCols,
  kConcatCols,
  kConcatRows,
  kReshape,
  kConv2d,
  kMeanPool2,
};

std::string_view op_name(OpKind kind);

/// Every operation kind that has a backward rule. Gradient-check coverage is
/// asserted against this list.
std::span<const OpKind> differentiable_ops();

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; only valid while the
/// tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  enum class Mode { kTraining, kInference };

  explicit Tape(Mode mode = Mode::kTraining) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Mode mode() const { return mode_; }

  /// Records a value that never receives a gradient.
  Var constant(Tensor value);
  /// Records a learnable tensor. In training mode its gradient is accumulated
  /// into `param`'s grad buffer by backward(); the tensor must outlive the
  /// tape. In inference mode this is equivalent to constant().
  Var parameter(Tensor& param);

  using BackwardFn = std::function<void(std::span<const double> out_grad, Tape& tape)>;

  /// Appends a record. `backward` is dropped when no input requires a
  /// gradient.
  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return records_[id].value; }
  bool requires_grad(std::size_t id) const { return records_[id].requires_grad; }
  /// Gradient accumulator for record `id`, allocated on first use. Empty when
  /// the record does not require a gradient.
  std::span<double> grad_sink(std::size_t id);
  /// Gradient accumulated so far for record `id` (empty if none).
  std::span<const double> grad_of(std::size_t id) const { return records_[id].grad; }

  /// Back-propagates from a scalar (single-element) variable. Each record is
  /// visited exactly once in reverse order.
  void backward(Var loss);

  std::size_t size() const { return records_.size(); }
  OpKind kind(std::size_t id) const { return records_[id].kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return records_[id].inputs; }

 private:
  struct Record {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::vector<double> grad;
    Tensor* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Mode mode_;
  std::deque<Record> records_;  // stable addresses: value() references outlive later records
};

enum class Activation { kLeakyRelu, kSigmoid, kTanh };

struct ActivationSpec {
  Activation kind = Activation::kLeakyRelu;
  double slope = 0.2;  // negative slope, leaky relu only

  static ActivationSpec leaky_relu(double slope) { return {Activation::kLeakyRelu, slope}; }
  static ActivationSpec sigmoid() { return {Activation::kSigmoid, 0.0}; }
  static ActivationSpec tanh() { return {Activation::kTanh, 0.0}; }
};

// Operations. All shapes must match exactly; nothing broadcasts implicitly.

Var matmul(Var a, Var b);
Var transpose(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// Adds the 1 x n row `bias` to every row of the m x n matrix `x`.
Var add_row_bias(Var x, Var bias);
Var activation(ActivationSpec spec, Var x);
Var leaky_relu(Var x, double slope);
Var sigmoid(Var x);
Var tanh(Var x);
/// Softmax of a 1 x n row vector, computed with max subtraction.
Var softmax_vector(Var x);
/// Column-wise average of an m x n matrix, giving a 1 x n row.
Var mean_over_rows(Var x);
/// Identity in the forward pass, zero gradient in the backward pass.
Var stop_gradient(Var x);
/// -log softmax(logits)[label] for 1 x K logits.
Var cross_entropy(Var logits, std::size_t label);
/// Sum of all elements as a 1 x 1 tensor.
Var sum(Var x);
Var select_rows(Var x, std::vector<std::size_t> rows);
Var select_cols(Var x, std::vector<std::size_t> cols);
Var concat_cols(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
Var reshape(Var x, Shape shape);
/// Stride-1 "same" convolution. x: [B, Cin, H, W], kernel: [Cout, Cin, k, k]
/// with odd k, bias: [Cout].
Var conv2d(Var x, Var kernel, Var bias);
/// Non-overlapping 2x2 average pooling over [B, C, H, W] with even H and W.
Var mean_pool2(Var x);

}  // namespace fergcn
