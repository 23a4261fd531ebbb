#include "thinsec/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "thinsec/kernels.hpp"

namespace thinsec {

namespace {

using detail::track;

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const std::int64_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Offset into `operand` for each element of `out` under broadcasting.
std::vector<std::int64_t> broadcast_offsets(const Shape& operand, const Shape& out) {
  const std::size_t n = out.size();
  std::vector<std::int64_t> stride(n, 0);
  std::int64_t s = 1;
  for (std::size_t k = 0; k < operand.size(); ++k) {
    const std::size_t i = operand.size() - 1 - k;
    const std::size_t o = n - 1 - k;
    stride[o] = operand[i] == 1 ? 0 : s;
    s *= operand[i];
  }
  const std::int64_t total = shape_numel(out);
  std::vector<std::int64_t> offsets(static_cast<std::size_t>(total));
  std::vector<std::int64_t> index(n, 0);
  std::int64_t off = 0;
  for (std::int64_t e = 0; e < total; ++e) {
    offsets[e] = off;
    for (std::size_t d = n; d-- > 0;) {
      ++index[d];
      off += stride[d];
      if (index[d] < out[d]) break;
      off -= stride[d] * out[d];
      index[d] = 0;
    }
  }
  return offsets;
}

int normalize_axis(int axis, std::size_t ndim) {
  const int n = static_cast<int>(ndim);
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) throw DimensionError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(n));
  return a;
}

template <typename Fwd, typename Bwd>
Tensor binary_broadcast(OpKind kind, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::int64_t n = shape_numel(out_shape);
  std::vector<float> out(static_cast<std::size_t>(n));
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  const bool same = a.shape() == out_shape && b.shape() == out_shape;
  std::vector<std::int64_t> oa, ob;
  if (same) {
#pragma omp parallel for schedule(static) if (n > 65536)
    for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(pa[i], pb[i]);
  } else {
    oa = broadcast_offsets(a.shape(), out_shape);
    ob = broadcast_offsets(b.shape(), out_shape);
    for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(pa[oa[i]], pb[ob[i]]);
  }
  Tensor result = Tensor::from(out_shape, std::move(out));
  return track(kind, {a, b}, result,
               [a, b, same, oa = std::move(oa), ob = std::move(ob), bwd](std::span<const float> g,
                                                                          std::span<float* const> gin) {
                 const float* pa = a.ptr();
                 const float* pb = b.ptr();
                 const std::int64_t n = static_cast<std::int64_t>(g.size());
                 for (std::int64_t i = 0; i < n; ++i) {
                   const std::int64_t ia = same ? i : oa[i];
                   const std::int64_t ib = same ? i : ob[i];
                   float da = 0.0f, db = 0.0f;
                   bwd(pa[ia], pb[ib], g[i], da, db);
                   if (gin[0]) gin[0][ia] += da;
                   if (gin[1]) gin[1][ib] += db;
                 }
               });
}

// Generic strided permutation: dst[out index] = src[permuted index].
void permute_copy(const float* src, const Shape& in_shape, const std::vector<int>& order, float* dst,
                  bool accumulate) {
  const std::size_t n = in_shape.size();
  std::vector<std::int64_t> in_stride(n, 1);
  for (std::size_t i = n - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
  Shape out_shape(n);
  std::vector<std::int64_t> stride(n);
  for (std::size_t i = 0; i < n; ++i) {
    out_shape[i] = in_shape[order[i]];
    stride[i] = in_stride[order[i]];
  }
  const std::int64_t total = shape_numel(out_shape);
  const std::int64_t inner = out_shape[n - 1];
  const std::int64_t inner_stride = stride[n - 1];
  std::vector<std::int64_t> index(n, 0);
  std::int64_t off = 0;
  for (std::int64_t e = 0; e < total; e += inner) {
    if (accumulate) {
      for (std::int64_t j = 0; j < inner; ++j) dst[e + j] += src[off + j * inner_stride];
    } else {
      for (std::int64_t j = 0; j < inner; ++j) dst[e + j] = src[off + j * inner_stride];
    }
    for (std::size_t d = n - 1; d-- > 0;) {
      ++index[d];
      off += stride[d];
      if (index[d] < out_shape[d]) break;
      off -= stride[d] * out_shape[d];
      index[d] = 0;
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      OpKind::add, a, b, [](float x, float y) { return x + y; },
      [](float, float, float g, float& da, float& db) {
        da = g;
        db = g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      OpKind::mul, a, b, [](float x, float y) { return x * y; },
      [](float x, float y, float g, float& da, float& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor scale(const Tensor& a, float factor) {
  std::vector<float> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return track(OpKind::scale, {a}, Tensor::from(a.shape(), std::move(out)),
               [factor](std::span<const float> g, std::span<float* const> gin) {
                 for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += factor * g[i];
               });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (float v : a.data()) s += v;
  return track(OpKind::sum, {a}, Tensor::scalar(static_cast<float>(s)),
               [n = a.numel()](std::span<const float> g, std::span<float* const> gin) {
                 for (std::int64_t i = 0; i < n; ++i) gin[0][i] += g[0];
               });
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (float v : a.data()) s += v;
  const std::int64_t n = a.numel();
  return track(OpKind::mean, {a}, Tensor::scalar(static_cast<float>(s / static_cast<double>(n))),
               [n](std::span<const float> g, std::span<float* const> gin) {
                 const float v = g[0] / static_cast<float>(n);
                 for (std::int64_t i = 0; i < n; ++i) gin[0][i] += v;
               });
}

Tensor reshape(const Tensor& a, Shape shape) {
  int infer = -1;
  std::int64_t known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known <= 0 || a.numel() % known != 0) {
      throw DimensionError("reshape: cannot infer extent of " + shape_str(shape) + " from " + shape_str(a.shape()));
    }
    shape[infer] = a.numel() / known;
  }
  Tensor out = a.view_as(shape);
  return track(OpKind::reshape, {a}, out, [](std::span<const float> g, std::span<float* const> gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
  });
}

Tensor permute(const Tensor& a, const std::vector<int>& order) {
  const std::size_t n = a.ndim();
  if (order.size() != n) throw DimensionError("permute: order rank mismatch for " + shape_str(a.shape()));
  std::vector<bool> seen(n, false);
  for (int o : order) {
    if (o < 0 || o >= static_cast<int>(n) || seen[o]) throw DimensionError("permute: invalid axis order");
    seen[o] = true;
  }
  Shape out_shape(n);
  for (std::size_t i = 0; i < n; ++i) out_shape[i] = a.shape()[order[i]];
  std::vector<float> out(static_cast<std::size_t>(a.numel()));
  permute_copy(a.ptr(), a.shape(), order, out.data(), false);
  std::vector<int> inverse(n);
  for (std::size_t i = 0; i < n; ++i) inverse[order[i]] = static_cast<int>(i);
  return track(OpKind::permute, {a}, Tensor::from(out_shape, std::move(out)),
               [out_shape, inverse](std::span<const float> g, std::span<float* const> gin) {
                 permute_copy(g.data(), out_shape, inverse, gin[0], true);
               });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const int ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.ndim() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (static_cast<int>(d) != ax && p.shape()[d] != first[d]) {
        throw DimensionError("concat: " + shape_str(p.shape()) + " vs " + shape_str(first));
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= first[d];
  for (std::size_t d = ax + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<float> out(static_cast<std::size_t>(shape_numel(out_shape)));
  const std::int64_t out_chunk = out_shape[ax] * inner;
  std::vector<std::int64_t> chunk(parts.size()), start(parts.size());
  std::int64_t pos = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    chunk[i] = parts[i].shape()[ax] * inner;
    start[i] = pos;
    pos += chunk[i];
  }
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      std::copy_n(parts[i].ptr() + o * chunk[i], chunk[i], out.data() + o * out_chunk + start[i]);
    }
  }
  return track(OpKind::concat, parts, Tensor::from(out_shape, std::move(out)),
               [outer, out_chunk, chunk, start](std::span<const float> g, std::span<float* const> gin) {
                 for (std::int64_t o = 0; o < outer; ++o) {
                   for (std::size_t i = 0; i < chunk.size(); ++i) {
                     if (!gin[i]) continue;
                     const float* src = g.data() + o * out_chunk + start[i];
                     float* dst = gin[i] + o * chunk[i];
                     for (std::int64_t j = 0; j < chunk[i]; ++j) dst[j] += src[j];
                   }
                 }
               });
}

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length) {
  const int ax = normalize_axis(axis, a.ndim());
  if (start < 0 || length <= 0 || start + length > a.shape()[ax]) {
    throw IndexError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of range for " +
                     shape_str(a.shape()));
  }
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= a.shape()[d];
  for (std::size_t d = ax + 1; d < a.ndim(); ++d) inner *= a.shape()[d];
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  const std::int64_t in_chunk = a.shape()[ax] * inner;
  const std::int64_t out_chunk = length * inner;
  std::vector<float> out(static_cast<std::size_t>(outer * out_chunk));
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(a.ptr() + o * in_chunk + start * inner, out_chunk, out.data() + o * out_chunk);
  }
  return track(OpKind::slice, {a}, Tensor::from(out_shape, std::move(out)),
               [outer, in_chunk, out_chunk, offset = start * inner](std::span<const float> g,
                                                                    std::span<float* const> gin) {
                 for (std::int64_t o = 0; o < outer; ++o) {
                   float* dst = gin[0] + o * in_chunk + offset;
                   const float* src = g.data() + o * out_chunk;
                   for (std::int64_t j = 0; j < out_chunk; ++j) dst[j] += src[j];
                 }
               });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.ndim() < 2 || b.ndim() < 2) throw DimensionError("matmul needs rank >= 2 operands");
  const std::int64_t M = a.dim(-2), K = a.dim(-1);
  const std::int64_t N = transpose_b ? b.dim(-2) : b.dim(-1);
  const std::int64_t Kb = transpose_b ? b.dim(-1) : b.dim(-2);
  if (K != Kb) {
    throw DimensionError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         (transpose_b ? "^T" : ""));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shape(a_batch, b_batch);
  const std::int64_t count = shape_numel(batch);
  std::vector<std::int64_t> ia = broadcast_offsets(a_batch, batch);
  std::vector<std::int64_t> ib = broadcast_offsets(b_batch, batch);
  Shape out_shape = batch;
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<float> out(static_cast<std::size_t>(count * M * N));
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  const std::int64_t ldb = transpose_b ? K : N;
#pragma omp parallel for schedule(static) if (count > 1)
  for (std::int64_t i = 0; i < count; ++i) {
    kernels::gemm(false, transpose_b, M, N, K, pa + ia[i] * M * K, K, pb + ib[i] * K * N, ldb, 0.0f,
                  out.data() + i * M * N, N);
  }
  const bool a_unique = shape_numel(a_batch) == count;
  const bool b_unique = shape_numel(b_batch) == count;
  return track(OpKind::matmul, {a, b}, Tensor::from(out_shape, std::move(out)),
               [a, b, M, N, K, count, ia, ib, a_unique, b_unique, transpose_b, ldb](std::span<const float> g,
                                                                                     std::span<float* const> gin) {
                 const float* pa = a.ptr();
                 const float* pb = b.ptr();
                 if (gin[0]) {
                   // dA = dC * op(B)^T
#pragma omp parallel for schedule(static) if (count > 1 && a_unique)
                   for (std::int64_t i = 0; i < count; ++i) {
                     kernels::gemm(false, !transpose_b, M, K, N, g.data() + i * M * N, N, pb + ib[i] * K * N, ldb,
                                   1.0f, gin[0] + ia[i] * M * K, K);
                   }
                 }
                 if (gin[1]) {
#pragma omp parallel for schedule(static) if (count > 1 && b_unique)
                   for (std::int64_t i = 0; i < count; ++i) {
                     if (transpose_b) {
                       // dB (N x K) = dC^T * A
                       kernels::gemm(true, false, N, K, M, g.data() + i * M * N, N, pa + ia[i] * M * K, K, 1.0f,
                                     gin[1] + ib[i] * K * N, K);
                     } else {
                       // dB (K x N) = A^T * dC
                       kernels::gemm(true, false, K, N, M, pa + ia[i] * M * K, K, g.data() + i * M * N, N, 1.0f,
                                     gin[1] + ib[i] * K * N, N);
                     }
                   }
                 }
               });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.ndim() != 2) throw DimensionError("linear weight must be 2-d, got " + shape_str(weight.shape()));
  const std::int64_t out_f = weight.dim(0), in_f = weight.dim(1);
  if (x.dim(-1) != in_f) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != out_f)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " for " + std::to_string(out_f) + " outputs");
  }
  const std::int64_t rows = x.numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<float> out(static_cast<std::size_t>(rows * out_f));
  if (bias.defined()) {
    for (std::int64_t r = 0; r < rows; ++r) std::copy_n(bias.ptr(), out_f, out.data() + r * out_f);
  }
  kernels::gemm(false, true, rows, out_f, in_f, x.ptr(), in_f, weight.ptr(), in_f, bias.defined() ? 1.0f : 0.0f,
                out.data(), out_f);
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return track(OpKind::linear, std::move(inputs), Tensor::from(out_shape, std::move(out)),
               [x, weight, rows, in_f, out_f](std::span<const float> g, std::span<float* const> gin) {
                 if (gin[0]) {
                   kernels::gemm(false, false, rows, in_f, out_f, g.data(), out_f, weight.ptr(), in_f, 1.0f, gin[0],
                                 in_f);
                 }
                 if (gin[1]) {
                   kernels::gemm(true, false, out_f, in_f, rows, g.data(), out_f, x.ptr(), in_f, 1.0f, gin[1], in_f);
                 }
                 if (gin.size() > 2 && gin[2]) {
                   for (std::int64_t r = 0; r < rows; ++r) {
                     const float* gr = g.data() + r * out_f;
                     for (std::int64_t o = 0; o < out_f; ++o) gin[2][o] += gr[o];
                   }
                 }
               });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Pair stride, Pair padding) {
  if (input.ndim() != 4 || weight.ndim() != 4) {
    throw DimensionError("conv2d expects NCHW input and OIHW weight, got " + shape_str(input.shape()) + " and " +
                         shape_str(weight.shape()));
  }
  if (input.dim(1) != weight.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(input.dim(1)) + " channels, weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (stride[0] <= 0 || stride[1] <= 0 || padding[0] < 0 || padding[1] < 0) {
    throw ConfigError("conv2d: stride must be positive and padding non-negative");
  }
  const std::int64_t N = input.dim(0), O = weight.dim(0);
  kernels::ConvGeometry geo{input.dim(1), input.dim(2), input.dim(3), weight.dim(2), weight.dim(3),
                            stride[0],    stride[1],    padding[0],   padding[1]};
  if (geo.height + 2 * geo.pad_h < geo.kernel_h || geo.width + 2 * geo.pad_w < geo.kernel_w) {
    throw ConfigError("conv2d: kernel larger than padded input " + shape_str(input.shape()));
  }
  const std::int64_t oh = geo.out_h(), ow = geo.out_w();
  if (oh < 1 || ow < 1) throw ConfigError("conv2d: non-positive output extent");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != O)) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(O) + " filters");
  }
  const std::int64_t P = geo.patch(), HW = oh * ow;
  const std::int64_t in_plane = geo.channels * geo.height * geo.width;
  std::vector<float> out(static_cast<std::size_t>(N * O * HW));
  const float* px = input.ptr();
  const float* pw = weight.ptr();
#pragma omp parallel if (N > 1)
  {
    std::vector<float> col(static_cast<std::size_t>(P * HW));
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < N; ++n) {
      kernels::im2col(px + n * in_plane, geo, col.data());
      float* dst = out.data() + n * O * HW;
      kernels::gemm(false, false, O, HW, P, pw, P, col.data(), HW, 0.0f, dst, HW);
      if (bias.defined()) {
        for (std::int64_t o = 0; o < O; ++o) {
          const float b = bias[o];
          for (std::int64_t j = 0; j < HW; ++j) dst[o * HW + j] += b;
        }
      }
    }
  }
  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return track(OpKind::conv2d, std::move(inputs), Tensor::from({N, O, oh, ow}, std::move(out)),
               [input, weight, geo, N, O, P, HW, in_plane](std::span<const float> g, std::span<float* const> gin) {
                 const float* px = input.ptr();
                 const float* pw = weight.ptr();
                 if (gin[0]) {
#pragma omp parallel if (N > 1)
                   {
                     std::vector<float> col(static_cast<std::size_t>(P * HW));
#pragma omp for schedule(static)
                     for (std::int64_t n = 0; n < N; ++n) {
                       kernels::gemm(true, false, P, HW, O, pw, P, g.data() + n * O * HW, HW, 0.0f, col.data(), HW);
                       kernels::col2im_add(col.data(), geo, gin[0] + n * in_plane);
                     }
                   }
                 }
                 if (gin[1]) {
                   std::vector<float> col(static_cast<std::size_t>(P * HW));
                   for (std::int64_t n = 0; n < N; ++n) {
                     kernels::im2col(px + n * in_plane, geo, col.data());
                     kernels::gemm(false, true, O, P, HW, g.data() + n * O * HW, HW, col.data(), HW, 1.0f, gin[1], P);
                   }
                 }
                 if (gin.size() > 2 && gin[2]) {
                   for (std::int64_t n = 0; n < N; ++n) {
                     for (std::int64_t o = 0; o < O; ++o) {
                       const float* gp = g.data() + (n * O + o) * HW;
                       double s = 0.0;
                       for (std::int64_t j = 0; j < HW; ++j) s += gp[j];
                       gin[2][o] += static_cast<float>(s);
                     }
                   }
                 }
               });
}

RunningStats RunningStats::uninitialized(std::int64_t channels) {
  return {Tensor::zeros({channels}), Tensor::full({channels}, 1.0f), false};
}

RunningStats RunningStats::provided(Tensor mean, Tensor var) { return {std::move(mean), std::move(var), true}; }

BatchNormResult batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, const RunningStats& stats,
                             NormMode mode, float momentum, float epsilon) {
  if (x.ndim() != 4) throw DimensionError("batch_norm2d expects NCHW, got " + shape_str(x.shape()));
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  for (const Tensor* t : {&gamma, &beta, &stats.mean, &stats.var}) {
    if (t->ndim() != 1 || t->dim(0) != C) {
      throw DimensionError("batch_norm2d: per-channel tensor " + shape_str(t->shape()) + " for " + std::to_string(C) +
                           " channels");
    }
  }
  const std::int64_t count = N * HW;
  const float* px = x.ptr();
  std::vector<float> out(static_cast<std::size_t>(x.numel()));
  std::vector<float> mean_c(C), inv_c(C);
  std::vector<double> mean_d(C), inv_d(C);
  RunningStats next = stats;

  if (mode == NormMode::train) {
    if (count < 2) throw DimensionError("batch_norm2d: train mode needs at least 2 values per channel");
    std::vector<float> new_mean(C), new_var(C);
#pragma omp parallel for schedule(static) if (C > 1)
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const float* p = px + (n * C + c) * HW;
        for (std::int64_t j = 0; j < HW; ++j) s += p[j];
      }
      const double m = s / static_cast<double>(count);
      for (std::int64_t n = 0; n < N; ++n) {
        const float* p = px + (n * C + c) * HW;
        for (std::int64_t j = 0; j < HW; ++j) {
          const double d = p[j] - m;
          s2 += d * d;
        }
      }
      const double var = s2 / static_cast<double>(count);
      mean_d[c] = m;
      inv_d[c] = 1.0 / std::sqrt(var + epsilon);
      const double unbiased = s2 / static_cast<double>(count - 1);
      const double rm = stats.initialized ? stats.mean[c] : 0.0;
      const double rv = stats.initialized ? stats.var[c] : 1.0;
      new_mean[c] = static_cast<float>((1.0 - momentum) * rm + momentum * m);
      new_var[c] = static_cast<float>((1.0 - momentum) * rv + momentum * unbiased);
    }
    next = RunningStats::provided(Tensor::from({C}, std::move(new_mean)), Tensor::from({C}, std::move(new_var)));
  } else {
    if (!stats.initialized) throw UninitializedStatsError("batch_norm2d: eval mode without running statistics");
    for (std::int64_t c = 0; c < C; ++c) {
      mean_d[c] = stats.mean[c];
      inv_d[c] = 1.0 / std::sqrt(static_cast<double>(stats.var[c]) + epsilon);
    }
  }
  for (std::int64_t c = 0; c < C; ++c) {
    mean_c[c] = static_cast<float>(mean_d[c]);
    inv_c[c] = static_cast<float>(inv_d[c]);
  }

  const float* pg = gamma.ptr();
  const float* pb = beta.ptr();
#pragma omp parallel for schedule(static) if (N * C > 1)
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const std::int64_t c = nc % C;
    const double m = mean_d[c], k = inv_d[c] * pg[c], b = pb[c];
    const float* p = px + nc * HW;
    float* o = out.data() + nc * HW;
    for (std::int64_t j = 0; j < HW; ++j) o[j] = static_cast<float>((p[j] - m) * k + b);
  }

  Tensor result = track(
      OpKind::batch_norm2d, {x, gamma, beta}, Tensor::from(x.shape(), std::move(out)),
      [x, gamma, mean_c, inv_c, N, C, HW, count, train = mode == NormMode::train](std::span<const float> g,
                                                                                   std::span<float* const> gin) {
        const float* px = x.ptr();
        const float* pg = gamma.ptr();
        std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
#pragma omp parallel for schedule(static) if (C > 1)
        for (std::int64_t c = 0; c < C; ++c) {
          double s = 0.0, sx = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            const float* p = px + (n * C + c) * HW;
            const float* gp = g.data() + (n * C + c) * HW;
            for (std::int64_t j = 0; j < HW; ++j) {
              s += gp[j];
              sx += static_cast<double>(gp[j]) * (p[j] - mean_c[c]) * inv_c[c];
            }
          }
          sum_g[c] = s;
          sum_gx[c] = sx;
        }
        if (gin[1]) {
          for (std::int64_t c = 0; c < C; ++c) gin[1][c] += static_cast<float>(sum_gx[c]);
        }
        if (gin[2]) {
          for (std::int64_t c = 0; c < C; ++c) gin[2][c] += static_cast<float>(sum_g[c]);
        }
        if (!gin[0]) return;
#pragma omp parallel for schedule(static) if (N * C > 1)
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
          const std::int64_t c = nc % C;
          const float* p = px + nc * HW;
          const float* gp = g.data() + nc * HW;
          float* dx = gin[0] + nc * HW;
          const float k = pg[c] * inv_c[c];
          if (train) {
            const float mg = static_cast<float>(sum_g[c] / static_cast<double>(count));
            const float mgx = static_cast<float>(sum_gx[c] / static_cast<double>(count));
            for (std::int64_t j = 0; j < HW; ++j) {
              const float xhat = (p[j] - mean_c[c]) * inv_c[c];
              dx[j] += k * (gp[j] - mg - xhat * mgx);
            }
          } else {
            for (std::int64_t j = 0; j < HW; ++j) dx[j] += k * gp[j];
          }
        }
      });
  return {result, next};
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float epsilon) {
  const std::int64_t D = x.dim(-1);
  if (gamma.ndim() != 1 || gamma.dim(0) != D || beta.ndim() != 1 || beta.dim(0) != D) {
    throw DimensionError("layer_norm: parameters must have extent " + std::to_string(D));
  }
  const std::int64_t rows = x.numel() / D;
  const float* px = x.ptr();
  const float* pg = gamma.ptr();
  const float* pb = beta.ptr();
  std::vector<float> out(static_cast<std::size_t>(x.numel()));
  std::vector<float> mean_r(rows), inv_r(rows);
#pragma omp parallel for schedule(static) if (rows > 64)
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* p = px + r * D;
    double s = 0.0;
    for (std::int64_t j = 0; j < D; ++j) s += p[j];
    const double m = s / static_cast<double>(D);
    double s2 = 0.0;
    for (std::int64_t j = 0; j < D; ++j) s2 += (p[j] - m) * (p[j] - m);
    const double inv = 1.0 / std::sqrt(s2 / static_cast<double>(D) + epsilon);
    mean_r[r] = static_cast<float>(m);
    inv_r[r] = static_cast<float>(inv);
    float* o = out.data() + r * D;
    for (std::int64_t j = 0; j < D; ++j) o[j] = static_cast<float>((p[j] - m) * inv * pg[j] + pb[j]);
  }
  return track(OpKind::layer_norm, {x, gamma, beta}, Tensor::from(x.shape(), std::move(out)),
               [x, gamma, mean_r, inv_r, rows, D](std::span<const float> g, std::span<float* const> gin) {
                 const float* px = x.ptr();
                 const float* pg = gamma.ptr();
                 if (gin[0]) {
#pragma omp parallel for schedule(static) if (rows > 64)
                   for (std::int64_t r = 0; r < rows; ++r) {
                     const float* p = px + r * D;
                     const float* gp = g.data() + r * D;
                     double s = 0.0, sx = 0.0;
                     for (std::int64_t j = 0; j < D; ++j) {
                       const double xhat = (p[j] - mean_r[r]) * inv_r[r];
                       const double dxhat = static_cast<double>(gp[j]) * pg[j];
                       s += dxhat;
                       sx += dxhat * xhat;
                     }
                     const float ms = static_cast<float>(s / D), msx = static_cast<float>(sx / D);
                     float* dx = gin[0] + r * D;
                     for (std::int64_t j = 0; j < D; ++j) {
                       const float xhat = (p[j] - mean_r[r]) * inv_r[r];
                       dx[j] += inv_r[r] * (gp[j] * pg[j] - ms - xhat * msx);
                     }
                   }
                 }
                 if (gin[1] || gin[2]) {
                   for (std::int64_t r = 0; r < rows; ++r) {
                     const float* p = px + r * D;
                     const float* gp = g.data() + r * D;
                     for (std::int64_t j = 0; j < D; ++j) {
                       if (gin[1]) gin[1][j] += gp[j] * (p[j] - mean_r[r]) * inv_r[r];
                       if (gin[2]) gin[2][j] += gp[j];
                     }
                   }
                 }
               });
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0f ? v : 0.0f;
  Tape* tape = active_tape();
  const bool guided = tape && tape->relu_backward() == ReluBackward::guided;
  return track(guided ? OpKind::guided_relu : OpKind::relu, {x}, Tensor::from(x.shape(), std::move(out)),
               [x, guided](std::span<const float> g, std::span<float* const> gin) {
                 const float* px = x.ptr();
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   const bool pass = px[i] > 0.0f && (!guided || g[i] > 0.0f);
                   if (pass) gin[0][i] += g[i];
                 }
               });
}

namespace {
constexpr float kSqrt2OverPi = 0.7978845608028654f;
constexpr float kGeluCubic = 0.044715f;
}  // namespace

Tensor gelu(const Tensor& x) {
  std::vector<float> out(static_cast<std::size_t>(x.numel()));
  const float* px = x.ptr();
  const std::int64_t n = x.numel();
#pragma omp parallel for schedule(static) if (n > 65536)
  for (std::int64_t i = 0; i < n; ++i) {
    const float v = px[i];
    out[i] = 0.5f * v * (1.0f + std::tanh(kSqrt2OverPi * (v + kGeluCubic * v * v * v)));
  }
  return track(OpKind::gelu, {x}, Tensor::from(x.shape(), std::move(out)),
               [x](std::span<const float> g, std::span<float* const> gin) {
                 const float* px = x.ptr();
                 const std::int64_t n = static_cast<std::int64_t>(g.size());
#pragma omp parallel for schedule(static) if (n > 65536)
                 for (std::int64_t i = 0; i < n; ++i) {
                   const float v = px[i];
                   const float t = std::tanh(kSqrt2OverPi * (v + kGeluCubic * v * v * v));
                   const float du = kSqrt2OverPi * (1.0f + 3.0f * kGeluCubic * v * v);
                   gin[0][i] += g[i] * (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du);
                 }
               });
}

Tensor softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.ndim());
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= x.shape()[d];
  for (std::size_t d = ax + 1; d < x.ndim(); ++d) inner *= x.shape()[d];
  const std::int64_t L = x.shape()[ax];
  const float* px = x.ptr();
  std::vector<float> out(static_cast<std::size_t>(x.numel()));
  const std::int64_t lanes = outer * inner;
#pragma omp parallel for schedule(static) if (lanes > 64)
  for (std::int64_t lane = 0; lane < lanes; ++lane) {
    const std::int64_t o = lane / inner, i = lane % inner;
    const float* p = px + o * L * inner + i;
    float* q = out.data() + o * L * inner + i;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::int64_t k = 0; k < L; ++k) mx = std::max(mx, p[k * inner]);
    double z = 0.0;
    for (std::int64_t k = 0; k < L; ++k) {
      const float e = std::exp(p[k * inner] - mx);
      q[k * inner] = e;
      z += e;
    }
    const float inv = static_cast<float>(1.0 / z);
    for (std::int64_t k = 0; k < L; ++k) q[k * inner] *= inv;
  }
  Tensor y = Tensor::from(x.shape(), std::move(out));
  const Tensor y_saved = y;
  return track(OpKind::softmax, {x}, y,
               [y_saved, outer, inner, L](std::span<const float> g, std::span<float* const> gin) {
                 const float* py = y_saved.ptr();
                 const std::int64_t lanes = outer * inner;
#pragma omp parallel for schedule(static) if (lanes > 64)
                 for (std::int64_t lane = 0; lane < lanes; ++lane) {
                   const std::int64_t base = (lane / inner) * L * inner + lane % inner;
                   double dot = 0.0;
                   for (std::int64_t k = 0; k < L; ++k) dot += static_cast<double>(g[base + k * inner]) * py[base + k * inner];
                   const float d = static_cast<float>(dot);
                   for (std::int64_t k = 0; k < L; ++k) {
                     const std::int64_t idx = base + k * inner;
                     gin[0][idx] += py[idx] * (g[idx] - d);
                   }
                 }
               });
}

Tensor max_pool2d(const Tensor& x, std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
  if (x.ndim() != 4) throw DimensionError("max_pool2d expects NCHW, got " + shape_str(x.shape()));
  if (kernel <= 0 || stride <= 0 || padding < 0 || padding * 2 > kernel) {
    throw ConfigError("max_pool2d: invalid kernel/stride/padding");
  }
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t oh = (H + 2 * padding - kernel) / stride + 1;
  const std::int64_t ow = (W + 2 * padding - kernel) / stride + 1;
  if (oh < 1 || ow < 1) throw ConfigError("max_pool2d: non-positive output extent");
  std::vector<float> out(static_cast<std::size_t>(N * C * oh * ow));
  std::vector<std::int64_t> argmax(out.size());
  const float* px = x.ptr();
#pragma omp parallel for schedule(static) if (N * C > 1)
  for (std::int64_t p = 0; p < N * C; ++p) {
    const float* plane = px + p * H * W;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xo = 0; xo < ow; ++xo) {
        float best = -std::numeric_limits<float>::infinity();
        std::int64_t at = -1;
        for (std::int64_t i = 0; i < kernel; ++i) {
          const std::int64_t iy = y * stride - padding + i;
          if (iy < 0 || iy >= H) continue;
          for (std::int64_t j = 0; j < kernel; ++j) {
            const std::int64_t ix = xo * stride - padding + j;
            if (ix < 0 || ix >= W) continue;
            const float v = plane[iy * W + ix];
            if (at < 0 || v > best || std::isnan(v)) {  // NaN propagates
              best = v;
              at = iy * W + ix;
            }
          }
        }
        const std::int64_t o = (p * oh + y) * ow + xo;
        out[o] = best;
        argmax[o] = p * H * W + at;
      }
    }
  }
  return track(OpKind::max_pool2d, {x}, Tensor::from({N, C, oh, ow}, std::move(out)),
               [argmax = std::move(argmax)](std::span<const float> g, std::span<float* const> gin) {
                 for (std::size_t i = 0; i < g.size(); ++i) gin[0][argmax[i]] += g[i];
               });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 4) throw DimensionError("global_avg_pool expects NCHW, got " + shape_str(x.shape()));
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<float> out(static_cast<std::size_t>(N * C));
  const float* px = x.ptr();
  for (std::int64_t p = 0; p < N * C; ++p) {
    double s = 0.0;
    for (std::int64_t j = 0; j < HW; ++j) s += px[p * HW + j];
    out[p] = static_cast<float>(s / static_cast<double>(HW));
  }
  return track(OpKind::global_avg_pool, {x}, Tensor::from({N, C}, std::move(out)),
               [HW](std::span<const float> g, std::span<float* const> gin) {
                 const float inv = 1.0f / static_cast<float>(HW);
                 for (std::size_t p = 0; p < g.size(); ++p) {
                   const float v = g[p] * inv;
                   float* dst = gin[0] + p * HW;
                   for (std::int64_t j = 0; j < HW; ++j) dst[j] += v;
                 }
               });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.ndim() != 2) throw DimensionError("cross_entropy expects N x K logits, got " + shape_str(logits.shape()));
  const std::int64_t N = logits.dim(0), K = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != N) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(N) +
                         " rows");
  }
  for (int l : labels) {
    if (l < 0 || l >= K) throw IndexError("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(K) + ")");
  }
  const float* p = logits.ptr();
  std::vector<float> probs(static_cast<std::size_t>(N * K));
  double total = 0.0;
  for (std::int64_t r = 0; r < N; ++r) {
    const float* row = p + r * K;
    double mx = row[0];
    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    for (std::int64_t k = 0; k < K; ++k) probs[r * K + k] = static_cast<float>(std::exp(row[k] - mx) / z);
    total += std::log(z) + mx - row[labels[r]];
  }
  std::vector<int> saved(labels.begin(), labels.end());
  return track(OpKind::cross_entropy, {logits}, Tensor::scalar(static_cast<float>(total / static_cast<double>(N))),
               [probs = std::move(probs), saved = std::move(saved), N, K](std::span<const float> g,
                                                                         std::span<float* const> gin) {
                 const float s = g[0] / static_cast<float>(N);
                 for (std::int64_t r = 0; r < N; ++r) {
                   for (std::int64_t k = 0; k < K; ++k) {
                     const float onehot = k == saved[r] ? 1.0f : 0.0f;
                     gin[0][r * K + k] += s * (probs[r * K + k] - onehot);
                   }
                 }
               });
}

}  // namespace thinsec
