#pragma once

#include <cstdint>

// Raw OpenMP kernels behind the differentiable ops. Parallel loops only ever
// split independent outputs across threads and every output element is
// reduced in a fixed order, so results do not depend on the thread count.
namespace thinsec::kernels {

// C = op(A) * op(B) + beta * C, with beta restricted to 0 or 1.
// op(A) is M x K, op(B) is K x N, all matrices row-major.
void gemm(bool trans_a, bool trans_b, std::int64_t M, std::int64_t N, std::int64_t K, const float* A,
          std::int64_t lda, const float* B, std::int64_t ldb, float beta, float* C, std::int64_t ldc);

struct ConvGeometry {
  std::int64_t channels, height, width;
  std::int64_t kernel_h, kernel_w;
  std::int64_t stride_h, stride_w;
  std::int64_t pad_h, pad_w;
  std::int64_t out_h() const { return (height + 2 * pad_h - kernel_h) / stride_h + 1; }
  std::int64_t out_w() const { return (width + 2 * pad_w - kernel_w) / stride_w + 1; }
  std::int64_t patch() const { return channels * kernel_h * kernel_w; }
};

// image: C x H x W  ->  col: (C*kh*kw) x (oh*ow), zero outside the image.
void im2col(const float* image, const ConvGeometry& g, float* col);
// Adjoint of im2col: scatters col back into image (accumulating).
void col2im_add(const float* col, const ConvGeometry& g, float* image);

// 0 restores the default of one thread per processor.
void set_threads(int threads);
int threads();

}  // namespace thinsec::kernels
