#include "thinsec/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include <omp.h>

namespace thinsec::kernels {

namespace {

constexpr std::int64_t kRows = 4;
constexpr std::int64_t kCols = 64;

// One kRows x kCols tile of C += A * B for row-major contiguous A (lda) and B (ldb).
void tile_full(std::int64_t K, const float* A, std::int64_t lda, const float* B, std::int64_t ldb, float beta,
               float* C, std::int64_t ldc) {
  alignas(64) float acc[kRows][kCols];
  for (std::int64_t r = 0; r < kRows; ++r) {
    for (std::int64_t j = 0; j < kCols; ++j) acc[r][j] = beta != 0.0f ? C[r * ldc + j] : 0.0f;
  }
  for (std::int64_t k = 0; k < K; ++k) {
    const float* b = B + k * ldb;
    const float a0 = A[0 * lda + k];
    const float a1 = A[1 * lda + k];
    const float a2 = A[2 * lda + k];
    const float a3 = A[3 * lda + k];
#pragma omp simd
    for (std::int64_t j = 0; j < kCols; ++j) {
      acc[0][j] += a0 * b[j];
      acc[1][j] += a1 * b[j];
      acc[2][j] += a2 * b[j];
      acc[3][j] += a3 * b[j];
    }
  }
  for (std::int64_t r = 0; r < kRows; ++r) {
    for (std::int64_t j = 0; j < kCols; ++j) C[r * ldc + j] = acc[r][j];
  }
}

void tile_edge(std::int64_t rows, std::int64_t cols, std::int64_t K, const float* A, std::int64_t lda,
               const float* B, std::int64_t ldb, float beta, float* C, std::int64_t ldc) {
  alignas(64) float acc[kCols];
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < cols; ++j) acc[j] = beta != 0.0f ? C[r * ldc + j] : 0.0f;
    const float* a = A + r * lda;
    for (std::int64_t k = 0; k < K; ++k) {
      const float av = a[k];
      const float* b = B + k * ldb;
#pragma omp simd
      for (std::int64_t j = 0; j < cols; ++j) acc[j] += av * b[j];
    }
    for (std::int64_t j = 0; j < cols; ++j) C[r * ldc + j] = acc[j];
  }
}

void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const float* A, std::int64_t lda, const float* B,
             std::int64_t ldb, float beta, float* C, std::int64_t ldc) {
  const std::int64_t row_tiles = (M + kRows - 1) / kRows;
  const std::int64_t col_tiles = (N + kCols - 1) / kCols;
  const std::int64_t tiles = row_tiles * col_tiles;
  const bool parallel = !omp_in_parallel() && tiles > 1 && M * N * K > 32768;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::int64_t t = 0; t < tiles; ++t) {
    const std::int64_t i0 = (t / col_tiles) * kRows;
    const std::int64_t j0 = (t % col_tiles) * kCols;
    const std::int64_t rows = std::min(kRows, M - i0);
    const std::int64_t cols = std::min(kCols, N - j0);
    const float* a = A + i0 * lda;
    const float* b = B + j0;
    float* c = C + i0 * ldc + j0;
    if (rows == kRows && cols == kCols) {
      tile_full(K, a, lda, b, ldb, beta, c, ldc);
    } else {
      tile_edge(rows, cols, K, a, lda, b, ldb, beta, c, ldc);
    }
  }
}

std::vector<float> transpose_copy(const float* src, std::int64_t rows, std::int64_t cols, std::int64_t ld) {
  // src is rows x cols with leading dimension ld; result is cols x rows.
  std::vector<float> dst(static_cast<std::size_t>(rows * cols));
  constexpr std::int64_t B = 32;
  for (std::int64_t i0 = 0; i0 < rows; i0 += B) {
    for (std::int64_t j0 = 0; j0 < cols; j0 += B) {
      const std::int64_t i1 = std::min(rows, i0 + B), j1 = std::min(cols, j0 + B);
      for (std::int64_t i = i0; i < i1; ++i) {
        for (std::int64_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * ld + j];
      }
    }
  }
  return dst;
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::int64_t M, std::int64_t N, std::int64_t K, const float* A,
          std::int64_t lda, const float* B, std::int64_t ldb, float beta, float* C, std::int64_t ldc) {
  if (M <= 0 || N <= 0) return;
  if (K <= 0) {
    if (beta == 0.0f) {
      for (std::int64_t i = 0; i < M; ++i) std::fill(C + i * ldc, C + i * ldc + N, 0.0f);
    }
    return;
  }
  std::vector<float> a_packed, b_packed;
  if (trans_a) {
    // A is stored K x M
    a_packed = transpose_copy(A, K, M, lda);
    A = a_packed.data();
    lda = K;
  }
  if (trans_b) {
    // B is stored N x K
    b_packed = transpose_copy(B, N, K, ldb);
    B = b_packed.data();
    ldb = N;
  }
  gemm_nn(M, N, K, A, lda, B, ldb, beta, C, ldc);
}

void im2col(const float* image, const ConvGeometry& g, float* col) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  const std::int64_t rows = g.patch();
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t kw = r % g.kernel_w;
    const std::int64_t kh = (r / g.kernel_w) % g.kernel_h;
    const std::int64_t c = r / (g.kernel_w * g.kernel_h);
    const float* plane = image + c * g.height * g.width;
    float* out = col + r * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      const std::int64_t iy = y * g.stride_h - g.pad_h + kh;
      float* dst = out + y * ow;
      if (iy < 0 || iy >= g.height) {
        std::fill(dst, dst + ow, 0.0f);
        continue;
      }
      const float* src = plane + iy * g.width;
      if (g.stride_w == 1) {
        for (std::int64_t x = 0; x < ow; ++x) {
          const std::int64_t ix = x - g.pad_w + kw;
          dst[x] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
        }
      } else {
        for (std::int64_t x = 0; x < ow; ++x) {
          const std::int64_t ix = x * g.stride_w - g.pad_w + kw;
          dst[x] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvGeometry& g, float* image) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  const std::int64_t rows = g.patch();
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t kw = r % g.kernel_w;
    const std::int64_t kh = (r / g.kernel_w) % g.kernel_h;
    const std::int64_t c = r / (g.kernel_w * g.kernel_h);
    float* plane = image + c * g.height * g.width;
    const float* in = col + r * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      const std::int64_t iy = y * g.stride_h - g.pad_h + kh;
      if (iy < 0 || iy >= g.height) continue;
      float* dst = plane + iy * g.width;
      const float* src = in + y * ow;
      for (std::int64_t x = 0; x < ow; ++x) {
        const std::int64_t ix = x * g.stride_w - g.pad_w + kw;
        if (ix >= 0 && ix < g.width) dst[ix] += src[x];
      }
    }
  }
}

void set_threads(int threads) { omp_set_num_threads(threads > 0 ? threads : omp_get_num_procs()); }

int threads() { return omp_get_max_threads(); }

}  // namespace thinsec::kernels
