#pragma once

// Central finite-difference oracle for the reverse-mode tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "thinsec/ops.hpp"
#include "thinsec/rng.hpp"
#include "thinsec/tensor.hpp"

namespace thinsec::oracle {

inline Tensor random_tensor(RngStream& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                            double keep_away_from_zero = 0.0) {
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) {
    double d;
    do {
      d = rng.uniform(lo, hi);
    } while (std::abs(d) < keep_away_from_zero);
    x = static_cast<float>(d);
  }
  return Tensor::from(std::move(shape), std::move(v));
}

// Values drawn from a shuffled grid with spacing `gap`, so no two entries
// are within a finite-difference step of each other (ties make max-pool
// non-differentiable).
inline Tensor distinct_tensor(RngStream& rng, Shape shape, double gap = 0.05) {
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  const double offset = -0.5 * gap * static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(offset + gap * static_cast<double>(i));
  rng.shuffle(v);
  return Tensor::from(std::move(shape), std::move(v));
}

struct GradCheckResult {
  bool ok = true;
  double worst_abs = 0.0;
  double worst_rel = 0.0;
  std::string detail;
};

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// The forward pass runs in float32, so one evaluation of an output y is only
/// resolved to about |y| * 6e-8; at h = 1e-3 that puts the difference quotient
/// noise near 3e-5 * |y|. Callers keep outputs of order one so that noise
/// stays below the absolute tolerance.
///
/// Compares the full tape Jacobian of f against central differences with
/// step `h`, one output element at a time so that float rounding in large
/// outputs does not swamp small entries. An entry passes when its relative
/// error is at most rel_tol or its absolute error at most abs_tol.
inline GradCheckResult gradcheck(const TensorFn& f, std::vector<Tensor> inputs, std::uint64_t /*seed*/,
                                 double h = 1e-3, double rel_tol = 1e-2, double abs_tol = 1e-4) {
  const Tensor probe = f(inputs);
  const auto n_out = static_cast<std::size_t>(probe.numel());

  // analytic[t][j * numel(t) + i] = d out_j / d in_t[i]
  std::vector<std::vector<double>> analytic(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t)
    analytic[t].resize(n_out * static_cast<std::size_t>(inputs[t].numel()));
  std::vector<Tensor> tracked;
  for (auto& t : inputs) tracked.push_back(t.requiring_grad(true));
  for (std::size_t j = 0; j < n_out; ++j) {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      Tensor out = f(tracked);
      std::vector<float> onehot(n_out, 0.0f);
      onehot[j] = 1.0f;
      loss = sum(mul(out, Tensor::from(out.shape(), onehot)));
    }
    GradientMap grads = tape.backward(loss);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      Tensor g = grads.of(tracked[t]);
      const auto n_in = static_cast<std::size_t>(g.numel());
      for (std::size_t i = 0; i < n_in; ++i) analytic[t][j * n_in + i] = g[static_cast<std::int64_t>(i)];
    }
  }

  GradCheckResult result;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    std::vector<float> base = inputs[t].to_vector();
    for (std::size_t i = 0; i < base.size(); ++i) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      auto vp = base, vm = base;
      vp[i] += static_cast<float>(h);
      vm[i] -= static_cast<float>(h);
      const double step = static_cast<double>(vp[i]) - static_cast<double>(vm[i]);
      plus[t] = Tensor::from(inputs[t].shape(), vp);
      minus[t] = Tensor::from(inputs[t].shape(), vm);
      const Tensor op = f(plus), om = f(minus);
      for (std::size_t j = 0; j < n_out; ++j) {
        const auto jj = static_cast<std::int64_t>(j);
        const double numeric = (static_cast<double>(op[jj]) - static_cast<double>(om[jj])) / step;
        const double a = analytic[t][j * base.size() + i];
        const double abs_err = std::abs(a - numeric);
        const double rel_err = abs_err / std::max(std::abs(a), std::abs(numeric));
        const bool pass = abs_err <= abs_tol || rel_err <= rel_tol;
        if (!pass) {
          result.ok = false;
          if (result.detail.empty()) {
            result.detail = "d out[" + std::to_string(j) + "] / d input" + std::to_string(t) + "[" +
                            std::to_string(i) + "]: analytic " + std::to_string(a) + " numeric " +
                            std::to_string(numeric);
          }
        }
        result.worst_abs = std::max(result.worst_abs, abs_err);
        if (abs_err > abs_tol) result.worst_rel = std::max(result.worst_rel, rel_err);
      }
    }
  }
  return result;
}

}  // namespace thinsec::oracle
