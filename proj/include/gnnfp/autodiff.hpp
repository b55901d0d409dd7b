#pragma once

// Minimal reverse-mode automatic differentiation over dense 2-D real arrays.
//
// A Tape records every primitive in creation order, so the node list is a
// topological order and backward() is a single reverse sweep. Tensors are
// lightweight handles (tape pointer + node index). One tape per thread.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gnnfp/errors.hpp"

namespace gnnfp::ad {

using Array = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Tape;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Array& value() const;
  /// Gradient accumulated by Tape::backward (zeros if none reached it).
  Array grad() const;
  bool requires_grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Tensor variable(Array value);
  /// Leaf without gradient.
  Tensor constant(Array value);

  /// Records a derived node. `backward` is dropped if no input needs a
  /// gradient.
  Tensor record(Array value, std::initializer_list<Tensor> inputs, BackwardFn backward);
  Tensor record(Array value, const std::vector<Tensor>& inputs, BackwardFn backward);

  /// Reverse sweep from a 1x1 loss. Throws NonScalarLoss otherwise.
  void backward(const Tensor& loss);

  const Array& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const Array& grad_of(int id) const { return nodes_[id].grad; }
  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }
  /// Accumulation buffer for node `id`, zero-initialized on first use.
  Array& grad_buffer(int id);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Array value;
    Array grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. All inputs must live on the same tape.

Tensor matmul(const Tensor& a, const Tensor& b);
/// a + b, where b has a's shape or is a 1 x cols row broadcast over rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
/// Elementwise product. b has a's shape, or is rows x 1 (broadcast over
/// columns), or 1 x cols (broadcast over rows), or 1 x 1.
Tensor mul(const Tensor& a, const Tensor& b);
/// Concatenation along axis 0 (rows) or 1 (columns).
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);
/// Sum of all entries, 1 x 1.
Tensor sum(const Tensor& a);
/// Segmented reductions over axis 0: row block s spans
/// [offsets[s], offsets[s+1]). Output has offsets.size()-1 rows. The max
/// routes its gradient to the lowest-index maximizer.
Tensor reduce_max(const Tensor& a, std::span<const Index> offsets);
Tensor reduce_mean(const Tensor& a, std::span<const Index> offsets);
Tensor reduce_sum(const Tensor& a, std::span<const Index> offsets);
/// Gathers rows; repeated indices accumulate gradient.
Tensor select_rows(const Tensor& a, std::span<const Index> indices);
Tensor transpose(const Tensor& a);
/// Row-major reinterpretation to a new shape with equal element count.
Tensor reshape(const Tensor& a, Index rows, Index cols);

enum class Mode { kTrain, kEval };

/// Per-channel learnable scale/shift plus running statistics.
struct BatchNormState {
  Array running_mean;  // 1 x C
  Array running_var;   // 1 x C
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Batch normalization over axis 0. Training mode normalizes by the batch
/// mean and biased variance and folds the batch statistics (unbiased
/// variance) into `state`; eval mode uses the running statistics.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, Mode mode);

/// Keys the counter-based dropout stream.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch = 0;
  std::uint64_t layer = 0;
};

/// Uniform [0, 1) draw for element `index` of the stream identified by key.
double dropout_uniform(const DropoutKey& key, std::uint64_t index);

/// Inverted dropout: identity in eval mode; in train mode keeps each entry
/// with probability 1 - rate and scales survivors by 1 / (1 - rate).
Tensor dropout(const Tensor& x, double rate, const DropoutKey& key, Mode mode);

// ---------------------------------------------------------------------------
// Adaptive-moment optimizer.

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Array> first_moment;
  std::vector<Array> second_moment;
};

/// One bias-corrected Adam update. Moments are allocated on first use.
void adam_step(std::span<Array* const> params, std::span<const Array> grads, AdamState& state);

}  // namespace gnnfp::ad
