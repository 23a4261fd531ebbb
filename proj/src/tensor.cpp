#include "thinsec/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace thinsec {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

TensorId next_tensor_id() {
  static std::atomic<TensorId> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

Tensor make_tensor(Shape shape, std::vector<float> values) { return Tensor::from(std::move(shape), std::move(values)); }

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

Tensor track(OpKind kind, std::vector<Tensor> inputs, Tensor out, BackwardFn backward) {
  Tape* tape = active_tape();
  if (!tape) return out;
  bool needed = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!needed) return out;
  out = out.requiring_grad(true);
  tape->record(kind, std::move(inputs), out, std::move(backward));
  return out;
}

}  // namespace detail

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " elements");
  }
  Tensor t;
  t.storage_ = std::make_shared<const std::vector<float>>(std::move(values));
  t.shape_ = std::move(shape);
  t.id_ = detail::next_tensor_id();
  t.requires_grad_ = requires_grad;
  return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0f); }

Tensor Tensor::full(Shape shape, float value) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

std::int64_t Tensor::dim(int axis) const {
  int n = static_cast<int>(shape_.size());
  int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  return shape_[a];
}

float Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return (*storage_)[0];
}

Tensor Tensor::requiring_grad(bool flag) const {
  Tensor t = *this;
  t.requires_grad_ = flag;
  return t;
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.id_ = detail::next_tensor_id();
  t.requires_grad_ = false;
  return t;
}

Tensor Tensor::view_as(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  t.id_ = detail::next_tensor_id();
  t.requires_grad_ = false;
  return t;
}

std::uint64_t Tensor::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  if (!storage_) return h;
  const auto* bytes = reinterpret_cast<const unsigned char*>(storage_->data());
  std::size_t n = storage_->size() * sizeof(float);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::reshape: return "reshape";
    case OpKind::permute: return "permute";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::matmul: return "matmul";
    case OpKind::linear: return "linear";
    case OpKind::conv2d: return "conv2d";
    case OpKind::batch_norm2d: return "batch_norm2d";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::relu: return "relu";
    case OpKind::guided_relu: return "guided_relu";
    case OpKind::gelu: return "gelu";
    case OpKind::softmax: return "softmax";
    case OpKind::max_pool2d: return "max_pool2d";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::retain: return "retain";
    case OpKind::count_: break;
  }
  return "?";
}

void OpRegistry::reset() {
  for (auto& c : counts_) c.store(0);
}

OpRegistry& op_registry() {
  static OpRegistry registry;
  return registry;
}

Tensor GradientMap::of(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return Tensor::from(t.shape(), it->second);
}

void Tape::record(OpKind kind, std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward) {
  if (consumed_) throw TapeError("cannot record onto a consumed tape");
  op_registry().note(kind);
  entries_.push_back({kind, std::move(inputs), output.id(), output.numel(), std::move(backward)});
}

Tensor Tape::retain(const Tensor& t) {
  auto in = t.requires_grad() ? t : t.requiring_grad(true);
  Tensor out = t.view_as(t.shape()).requiring_grad(true);
  op_registry().note(OpKind::retain);
  entries_.push_back({OpKind::retain, {in}, out.id(), out.numel(),
                      [](std::span<const float> g, std::span<float* const> gin) {
                        if (!gin[0]) return;
                        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                      }});
  retained_.insert(out.id());
  return out;
}

GradientMap Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward called on a consumed tape");
  if (loss.numel() != 1) throw DimensionError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  consumed_ = true;

  GradientMap result;
  auto& grads = result.grads_;
  grads[loss.id()] = std::vector<float>(1, 1.0f);

  std::unordered_set<TensorId> produced;
  produced.reserve(entries_.size());
  for (const auto& e : entries_) produced.insert(e.output);

  std::vector<float*> gin;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto found = grads.find(it->output);
    if (found == grads.end()) continue;
    std::vector<float> gout = std::move(found->second);
    bool keep = retained_.count(it->output) != 0;
    grads.erase(found);

    gin.assign(it->inputs.size(), nullptr);
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      const Tensor& in = it->inputs[i];
      if (!in.defined() || !in.requires_grad()) continue;
      auto& slot = grads[in.id()];
      if (slot.empty()) slot.assign(static_cast<std::size_t>(in.numel()), 0.0f);
      gin[i] = slot.data();
    }
    it->backward(gout, gin);
    if (keep) grads[it->output] = std::move(gout);
  }
  // intermediates that are neither leaves nor retained are dropped
  for (auto it = grads.begin(); it != grads.end();) {
    if (produced.count(it->first) && !retained_.count(it->first)) {
      it = grads.erase(it);
    } else {
      ++it;
    }
  }
  entries_.clear();
  return result;
}

Tensor Tape::grad_of_output_wrt(const Tensor& intermediate, const Tensor& scalar) {
  if (!retained_.count(intermediate.id())) {
    throw RetentionError("tensor " + shape_str(intermediate.shape()) + " was not retained before the forward pass");
  }
  auto grads = backward(scalar);
  return grads.of(intermediate);
}

namespace {
thread_local Tape* current_tape = nullptr;
}

Tape* active_tape() { return current_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

}  // namespace thinsec
