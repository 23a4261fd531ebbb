#include "thinsec/optim.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace thinsec {

void adamw_update(std::span<float> theta, std::span<const float> grad, std::span<double> m, std::span<double> v,
                  std::int64_t t, const AdamWConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mh = m[i] / bc1, vh = v[i] / bc2;
    theta[i] = static_cast<float>(theta[i] * decay - cfg.lr * mh / (std::sqrt(vh) + cfg.eps));
  }
}

AdamW::AdamW(const Model& model, AdamWConfig cfg) : cfg_(cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (cfg.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto n = static_cast<std::size_t>(model.params.at(i).numel());
    m_.emplace_back(model.trainable[i] ? n : 0, 0.0);
    v_.emplace_back(model.trainable[i] ? n : 0, 0.0);
  }
}

void AdamW::step(Model& model, const GradientMap& grads) {
  const std::size_t P = model.params.size();
  std::vector<const std::vector<float>*> g(P, nullptr);
  for (std::size_t i = 0; i < P; ++i) {
    if (!model.trainable[i]) continue;
    g[i] = grads.find(model.params.at(i));
    if (!g[i]) continue;
    for (float x : *g[i]) {
      if (!std::isfinite(x)) {
        throw NumericError("non-finite gradient for parameter '" + model.params.names()[i] + "' at step " +
                           std::to_string(t_ + 1));
      }
    }
  }
  ++t_;
  static const std::vector<float> no_grad;
  for (std::size_t i = 0; i < P; ++i) {
    if (!model.trainable[i]) continue;
    const Tensor& p = model.params.at(i);
    std::vector<float> theta = p.to_vector();
    std::vector<float> zeros;
    std::span<const float> gi;
    if (g[i]) {
      gi = *g[i];
    } else {
      // a trainable parameter outside the graph still decays
      zeros.assign(theta.size(), 0.0f);
      gi = zeros;
    }
    adamw_update(theta, gi, m_[i], v_[i], t_, cfg_);
    model.params.set(model.params.names()[i], Tensor::from(p.shape(), std::move(theta)));
  }
}

SchedulerKind parse_scheduler(const std::string& name) {
  if (name == "none") return SchedulerKind::none;
  if (name == "plateau") return SchedulerKind::plateau;
  if (name == "cosine") return SchedulerKind::cosine;
  throw ConfigError("unknown scheduler '" + name + "' (expected none, plateau or cosine)");
}

const char* scheduler_name(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::none: return "none";
    case SchedulerKind::plateau: return "plateau";
    case SchedulerKind::cosine: return "cosine";
  }
  return "?";
}

LrScheduler::LrScheduler(SchedulerConfig cfg, double lr0, int total_epochs)
    : cfg_(cfg), lr0_(lr0), total_(total_epochs), lr_(lr0), best_(std::numeric_limits<double>::infinity()) {
  if (cfg.kind == SchedulerKind::plateau && !(cfg.factor > 0.0 && cfg.factor < 1.0)) {
    throw ConfigError("plateau factor must lie in (0, 1)");
  }
  if (cfg.patience < 0) throw ConfigError("plateau patience must be non-negative");
  if (cfg.final_fraction < 0.0 || cfg.final_fraction > 1.0) throw ConfigError("cosine final fraction must lie in [0, 1]");
}

double LrScheduler::cosine(double lr0, double lr_final, double t, double T) {
  return lr_final + (lr0 - lr_final) * (1.0 + std::cos(std::numbers::pi * t / T)) / 2.0;
}

double LrScheduler::end_epoch(int epoch, double monitored) {
  switch (cfg_.kind) {
    case SchedulerKind::none: break;
    case SchedulerKind::cosine:
      if (total_ > 0) lr_ = cosine(lr0_, cfg_.final_fraction * lr0_, epoch + 1, total_);
      break;
    case SchedulerKind::plateau:
      if (monitored < best_ - cfg_.min_delta) {
        best_ = monitored;
        bad_epochs_ = 0;
      } else if (++bad_epochs_ > cfg_.patience) {
        lr_ *= cfg_.factor;
        bad_epochs_ = 0;
      }
      break;
  }
  return lr_;
}

}  // namespace thinsec
