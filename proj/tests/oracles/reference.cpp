#include "reference.hpp"

#include <cmath>
#include <limits>

namespace thinsec::reference {

std::vector<float> matmul(const std::vector<float>& a, const std::vector<float>& b, std::int64_t M, std::int64_t K,
                          std::int64_t N) {
  std::vector<float> c(static_cast<std::size_t>(M * N));
  for (std::int64_t i = 0; i < M; ++i) {
    for (std::int64_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::int64_t k = 0; k < K; ++k) s += static_cast<double>(a[i * K + k]) * b[k * N + j];
      c[i * N + j] = static_cast<float>(s);
    }
  }
  return c;
}

std::vector<float> conv2d(const std::vector<float>& input, const std::vector<float>& weight,
                          const std::vector<float>& bias, std::int64_t N, std::int64_t C, std::int64_t H,
                          std::int64_t W, std::int64_t O, std::int64_t kh, std::int64_t kw, std::int64_t stride_h,
                          std::int64_t stride_w, std::int64_t pad_h, std::int64_t pad_w) {
  const std::int64_t oh = (H + 2 * pad_h - kh) / stride_h + 1;
  const std::int64_t ow = (W + 2 * pad_w - kw) / stride_w + 1;
  std::vector<float> out(static_cast<std::size_t>(N * O * oh * ow));
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t o = 0; o < O; ++o) {
      for (std::int64_t y = 0; y < oh; ++y) {
        for (std::int64_t x = 0; x < ow; ++x) {
          double s = bias.empty() ? 0.0 : bias[o];
          for (std::int64_t c = 0; c < C; ++c) {
            for (std::int64_t i = 0; i < kh; ++i) {
              for (std::int64_t j = 0; j < kw; ++j) {
                const std::int64_t iy = y * stride_h - pad_h + i;
                const std::int64_t ix = x * stride_w - pad_w + j;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                s += static_cast<double>(input[((n * C + c) * H + iy) * W + ix]) *
                     weight[((o * C + c) * kh + i) * kw + j];
              }
            }
          }
          out[((n * O + o) * oh + y) * ow + x] = static_cast<float>(s);
        }
      }
    }
  }
  return out;
}

std::vector<float> max_pool2d(const std::vector<float>& input, std::int64_t N, std::int64_t C, std::int64_t H,
                              std::int64_t W, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  const std::int64_t oh = (H + 2 * pad - k) / stride + 1;
  const std::int64_t ow = (W + 2 * pad - k) / stride + 1;
  std::vector<float> out(static_cast<std::size_t>(N * C * oh * ow));
  for (std::int64_t p = 0; p < N * C; ++p) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        float best = -std::numeric_limits<float>::infinity();
        for (std::int64_t i = 0; i < k; ++i) {
          for (std::int64_t j = 0; j < k; ++j) {
            const std::int64_t iy = y * stride - pad + i, ix = x * stride - pad + j;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
            best = std::max(best, input[(p * H + iy) * W + ix]);
          }
        }
        out[(p * oh + y) * ow + x] = best;
      }
    }
  }
  return out;
}

std::vector<float> global_avg_pool(const std::vector<float>& input, std::int64_t N, std::int64_t C, std::int64_t H,
                                   std::int64_t W) {
  std::vector<float> out(static_cast<std::size_t>(N * C));
  for (std::int64_t p = 0; p < N * C; ++p) {
    double s = 0.0;
    for (std::int64_t i = 0; i < H * W; ++i) s += input[p * H * W + i];
    out[p] = static_cast<float>(s / static_cast<double>(H * W));
  }
  return out;
}

std::vector<float> softmax_rows(const std::vector<float>& x, std::int64_t rows, std::int64_t cols) {
  std::vector<float> out(x.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < cols; ++c) mx = std::max(mx, static_cast<double>(x[r * cols + c]));
    double z = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) z += std::exp(static_cast<double>(x[r * cols + c]) - mx);
    for (std::int64_t c = 0; c < cols; ++c) {
      out[r * cols + c] = static_cast<float>(std::exp(static_cast<double>(x[r * cols + c]) - mx) / z);
    }
  }
  return out;
}

double cross_entropy(const std::vector<float>& logits, const std::vector<int>& labels, std::int64_t rows,
                     std::int64_t cols) {
  long double total = 0.0L;
  for (std::int64_t r = 0; r < rows; ++r) {
    long double mx = -std::numeric_limits<long double>::infinity();
    for (std::int64_t c = 0; c < cols; ++c) mx = std::max(mx, static_cast<long double>(logits[r * cols + c]));
    long double z = 0.0L;
    for (std::int64_t c = 0; c < cols; ++c) z += std::exp(static_cast<long double>(logits[r * cols + c]) - mx);
    total += std::log(z) + mx - static_cast<long double>(logits[r * cols + labels[r]]);
  }
  return static_cast<double>(total / rows);
}

}  // namespace thinsec::reference
