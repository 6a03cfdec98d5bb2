#pragma once

#include <cstdint>
#include <vector>

#include "posr/tensor.hpp"

namespace posr::optim {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. One shared step counter covers every
// parameter; a parameter with no accumulated gradient is treated as having
// a zero gradient for that step.
class Adam {
 public:
  explicit Adam(std::vector<autodiff::Parameter> params, AdamConfig cfg = {});

  void step(double lr);
  void zero_grad();
  std::int64_t step_count() const { return t_; }

 private:
  std::vector<autodiff::Parameter> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

// Half-cosine decay from eta_max at t=0 to eta_min at t=total_steps.
struct CosineSchedule {
  double eta_max = 0.005;
  double eta_min = 0.0;
  std::int64_t total_steps = 100;
};

double cosine_lr(const CosineSchedule& schedule, std::int64_t t);

}  // namespace posr::optim
