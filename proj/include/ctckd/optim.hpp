#pragma once

// Adam with a warm-up-then-inverse-sqrt learning-rate schedule.

#include <cmath>
#include <string>
#include <vector>

#include "ctckd/common.hpp"
#include "ctckd/nn.hpp"
#include "ctckd/tensor.hpp"

namespace ctckd {

struct OptimizerConfig {
  double peak_lr = 1e-3;
  int warmup_steps = 400;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// lr(step): linear ramp to peak over warmup_steps, then peak * sqrt(warmup/step).
inline double schedule_lr(const OptimizerConfig& cfg, int64_t step) {
  if (step <= 0) return 0.0;
  const double w = static_cast<double>(cfg.warmup_steps);
  if (step <= cfg.warmup_steps) return cfg.peak_lr * static_cast<double>(step) / w;
  return cfg.peak_lr * std::sqrt(w / static_cast<double>(step));
}

class Adam {
 public:
  explicit Adam(const OptimizerConfig& cfg = {}) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }
  double current_lr() const { return schedule_lr(cfg_, step_); }

  // Applies one update to every parameter with a populated grad, then zeros
  // the grads. A NaN gradient aborts the step before any parameter moves.
  void step(ParamMap& params) {
    if (moments_m_.empty()) init_state(params);
    check_state(moments_m_.size() == params.size(),
                "optimizer: parameter set changed after first step");
    for (size_t p = 0; p < params.items().size(); p++) {
      const auto& [name, t] = params.items()[p];
      if (!t.has_grad()) continue;
      for (double g : t.grad())
        check_state(std::isfinite(g), "optimizer: non-finite gradient in '", name, "'");
    }
    step_++;
    const double lr = schedule_lr(cfg_, step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t p = 0; p < params.items().size(); p++) {
      auto& [name, t] = params.items()[p];
      if (!t.has_grad()) continue;
      const std::vector<double>& g = t.grad();
      std::vector<double>& m = moments_m_[p];
      std::vector<double>& v = moments_v_[p];
      double* w = t.mutable_data();
      for (size_t i = 0; i < g.size(); i++) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      t.zero_grad();
    }
  }

 private:
  void init_state(const ParamMap& params) {
    moments_m_.resize(params.size());
    moments_v_.resize(params.size());
    for (size_t p = 0; p < params.items().size(); p++) {
      const size_t n = static_cast<size_t>(params.items()[p].second.numel());
      moments_m_[p].assign(n, 0.0);
      moments_v_[p].assign(n, 0.0);
    }
  }

  OptimizerConfig cfg_;
  int64_t step_ = 0;
  std::vector<std::vector<double>> moments_m_;
  std::vector<std::vector<double>> moments_v_;
};

}  // namespace ctckd
