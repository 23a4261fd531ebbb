#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "thinsec/model.hpp"

namespace thinsec {

struct AdamWConfig {
  double lr = 3e-4;
  double weight_decay = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One AdamW update of a single tensor at step t (1-based):
//   theta <- theta - lr * wd * theta                     (decoupled decay)
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps),   m_hat = m / (1 - b1^t), v_hat = v / (1 - b2^t)
// Arithmetic is done in double and rounded once per element.
void adamw_update(std::span<float> theta, std::span<const float> grad, std::span<double> m, std::span<double> v,
                  std::int64_t t, const AdamWConfig& cfg);

class AdamW {
 public:
  AdamW(const Model& model, AdamWConfig cfg);

  // Updates every trainable parameter from `grads`; frozen parameters are
  // not touched. A non-finite gradient aborts the whole step (nothing is
  // written) with a NumericError naming the parameter.
  void step(Model& model, const GradientMap& grads);

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

enum class SchedulerKind { none, plateau, cosine };
SchedulerKind parse_scheduler(const std::string& name);
const char* scheduler_name(SchedulerKind kind);

struct SchedulerConfig {
  SchedulerKind kind = SchedulerKind::none;
  double factor = 0.1;         // plateau
  int patience = 5;            // plateau
  double min_delta = 1e-4;     // plateau, absolute
  double final_fraction = 0.0; // cosine: lr_final = final_fraction * lr0
};

// Epoch-level learning-rate schedule.
//   plateau: after more than `patience` consecutive epochs whose monitored
//            value (lower is better) fails to drop below best - min_delta,
//            multiply lr by `factor` and reset the counter.
//   cosine:  lr(t) = lr_final + (lr0 - lr_final) (1 + cos(pi t / T)) / 2.
class LrScheduler {
 public:
  LrScheduler(SchedulerConfig cfg, double lr0, int total_epochs);

  double lr() const { return lr_; }
  // Called after epoch `epoch` (0-based) finished; returns the lr for the next epoch.
  double end_epoch(int epoch, double monitored);
  static double cosine(double lr0, double lr_final, double t, double T);

 private:
  SchedulerConfig cfg_;
  double lr0_;
  int total_;
  double lr_;
  double best_;
  int bad_epochs_ = 0;
};

}  // namespace thinsec
