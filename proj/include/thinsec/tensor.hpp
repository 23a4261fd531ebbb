#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "thinsec/errors.hpp"

namespace thinsec {

using Shape = std::vector<std::int64_t>;
using TensorId = std::uint64_t;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Immutable N-d float32 array. Copies share the element buffer; operations
/// always allocate a fresh buffer for their output.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  // Negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return storage_ ? static_cast<std::int64_t>(storage_->size()) : 0; }

  std::span<const float> data() const { return {storage_->data(), storage_->size()}; }
  const float* ptr() const { return storage_->data(); }
  float item() const;
  float operator[](std::size_t i) const { return (*storage_)[i]; }

  TensorId id() const { return id_; }
  bool requires_grad() const { return requires_grad_; }

  // Same value and id with the gradient flag changed. Used to expose a
  // parameter to the tape without copying it.
  Tensor requiring_grad(bool flag = true) const;
  // Same values, fresh id, no gradient tracking.
  Tensor detach() const;
  // Shares the buffer under a new shape; the caller guarantees numel match.
  Tensor view_as(Shape shape) const;

  std::vector<float> to_vector() const { return *storage_; }
  // FNV-1a over the raw element bytes; used for freeze/determinism checks.
  std::uint64_t checksum() const;

 private:
  std::shared_ptr<const std::vector<float>> storage_;
  Shape shape_;
  TensorId id_ = 0;
  bool requires_grad_ = false;
};

enum class OpKind {
  add,
  mul,
  scale,
  sum,
  mean,
  reshape,
  permute,
  concat,
  slice,
  matmul,
  linear,
  conv2d,
  batch_norm2d,
  layer_norm,
  relu,
  guided_relu,
  gelu,
  softmax,
  max_pool2d,
  global_avg_pool,
  cross_entropy,
  retain,
  count_
};

const char* op_name(OpKind kind);

// Process-wide count of recorded tape entries per op kind.
class OpRegistry {
 public:
  void note(OpKind kind) { counts_[static_cast<int>(kind)].fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t count(OpKind kind) const { return counts_[static_cast<int>(kind)].load(); }
  void reset();

 private:
  std::atomic<std::uint64_t> counts_[static_cast<int>(OpKind::count_)] = {};
};
OpRegistry& op_registry();

// grad_in[i] is null when input i does not require a gradient. Backward
// functions accumulate (+=) into the non-null buffers.
using BackwardFn = std::function<void(std::span<const float> grad_out, std::span<float* const> grad_in)>;

struct TapeEntry {
  OpKind kind;
  std::vector<Tensor> inputs;
  TensorId output;
  std::int64_t output_numel;
  BackwardFn backward;
};

/// Gradients produced by one backward pass. Lookup of a tensor that did not
/// participate yields zeros of the tensor's shape.
class GradientMap {
 public:
  Tensor of(const Tensor& t) const;
  bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  // Raw gradient buffer, or nullptr when `t` did not participate.
  const std::vector<float>* find(const Tensor& t) const {
    auto it = grads_.find(t.id());
    return it == grads_.end() ? nullptr : &it->second;
  }

 private:
  friend class Tape;
  std::unordered_map<TensorId, std::vector<float>> grads_;
};

enum class ReluBackward { standard, guided };

/// Records differentiable operations in execution order. Single-threaded;
/// one tape per training step or explanation call.
class Tape {
 public:
  explicit Tape(ReluBackward relu = ReluBackward::standard) : relu_(relu) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(OpKind kind, std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward);

  // Marks an intermediate for gradient retention. Returns a tracked alias that
  // must be used downstream in place of `t`.
  Tensor retain(const Tensor& t);

  GradientMap backward(const Tensor& loss);
  Tensor grad_of_output_wrt(const Tensor& intermediate, const Tensor& scalar);

  ReluBackward relu_backward() const { return relu_; }
  bool consumed() const { return consumed_; }
  const std::vector<TapeEntry>& entries() const { return entries_; }

 private:
  std::vector<TapeEntry> entries_;
  std::unordered_set<TensorId> retained_;
  ReluBackward relu_;
  bool consumed_ = false;
};

// The tape that operations record onto for the current thread, or null.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {
TensorId next_tensor_id();
Tensor make_tensor(Shape shape, std::vector<float> values);
// Records `out` on the active tape when any input requires a gradient and
// returns it flagged accordingly; otherwise returns it unchanged.
Tensor track(OpKind kind, std::vector<Tensor> inputs, Tensor out, BackwardFn backward);
bool any_requires_grad(std::initializer_list<const Tensor*> inputs);
}  // namespace detail

}  // namespace thinsec
