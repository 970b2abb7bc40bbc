#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "hdcs/params.hpp"
#include "hdcs/tensor.hpp"

namespace hdcs {

struct OptimizerConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double encoder_lr_scale = 0.1;  // encoder group trains at 10% of the base rate
};

// Linear warmup to 1, then cosine decay to 0 over the remaining steps.
// Steps are 1-based; the multiplier stays in [0, 1].
inline double schedule_multiplier(std::size_t step, std::size_t warmup_steps,
                                  std::size_t total_steps) {
  if (total_steps == 0) return 1.0;
  if (step > total_steps) step = total_steps;
  if (warmup_steps > 0 && step <= warmup_steps) return double(step) / double(warmup_steps);
  double denom = double(total_steps - warmup_steps);
  double progress = denom > 0.0 ? double(step - warmup_steps) / denom : 1.0;
  return 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// AdamW with decoupled weight decay. The decay is applied to the parameter
// values directly, scaled by the same scheduled, group-scaled step size as
// the moment update.
class AdamW {
 public:
  AdamW(ParameterStore& store, OptimizerConfig cfg) : store_(&store), cfg_(cfg) {}

  // One update over all trainable parameters; gradients are zeroed after.
  void step(double schedule_mult = 1.0) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (const auto& name : store_->names()) {
      Parameter& p = store_->get(name);
      if (!p.trainable) continue;
      auto it = moments_.find(name);
      if (it == moments_.end()) {
        it = moments_.emplace(name, Moments{Tensor::zeros(p.value.shape()),
                                            Tensor::zeros(p.value.shape())}).first;
      }
      double group_scale = p.group == LrGroup::encoder ? cfg_.encoder_lr_scale : 1.0;
      double step_size = cfg_.lr * schedule_mult * group_scale;
      auto& val = p.value.writable();
      auto& grad = p.grad.writable();
      auto& m = it->second.m.writable();
      auto& v = it->second.v.writable();
      for (std::size_t i = 0; i < val.size(); ++i) {
        double g = grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        val[i] -= step_size * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * val[i]);
        grad[i] = 0.0;
      }
    }
  }

  std::size_t step_count() const { return t_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  ParameterStore* store_;
  OptimizerConfig cfg_;
  std::map<std::string, Moments> moments_;
  std::size_t t_ = 0;
};

}  // namespace hdcs
