#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "thinsec/tensor.hpp"

// Differentiable operations. Every op is a pure function of its inputs; when
// a tape is active and an input requires a gradient, the op records itself.
namespace thinsec {

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

// Full reductions to a one-element tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// One extent may be -1 and is inferred.
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& order);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length);

/// Batched matrix product over the last two axes, leading axes broadcast.
/// With transpose_b the right operand is read as (..., N, K).
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// x (..., in) * weight(out, in)^T + bias(out). bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

using Pair = std::array<std::int64_t, 2>;

/// Cross-correlation, NCHW input and OIHW weight, lowered to im2col + gemm.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Pair stride, Pair padding);

enum class NormMode { train, eval };

struct RunningStats {
  Tensor mean;
  Tensor var;
  bool initialized = false;

  static RunningStats uninitialized(std::int64_t channels);
  static RunningStats provided(Tensor mean, Tensor var);
};

struct BatchNormResult {
  Tensor out;
  RunningStats stats;
};

// Train mode normalizes with batch statistics and returns updated running
// statistics (unbiased variance, exponential average with `momentum`).
BatchNormResult batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, const RunningStats& stats,
                             NormMode mode, float momentum = 0.1f, float epsilon = 1e-5f);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float epsilon = 1e-6f);

// Under a tape with ReluBackward::guided the recorded backward also zeroes
// negative upstream gradients.
Tensor relu(const Tensor& x);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);

// Padding is -inf. Gradient goes to the first maximum in row-major window order.
Tensor max_pool2d(const Tensor& x, std::int64_t kernel, std::int64_t stride, std::int64_t padding = 0);
// N x C x H x W -> N x C
Tensor global_avg_pool(const Tensor& x);

// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace thinsec
