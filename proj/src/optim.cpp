#include "posr/optim.hpp"

#include <cmath>
#include <numbers>

#include "posr/errors.hpp"

namespace posr::optim {

Adam::Adam(std::vector<autodiff::Parameter> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p.value.defined()) throw ValueError("Adam: undefined parameter");
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

void Adam::step(double lr) {
  if (!(lr > 0.0)) throw ValueError("Adam: lr must be positive");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto& node = *params_[p].value.node();
    auto& vals = node.values;
    const auto& grad = node.grad;  // may be empty: zero gradient
    if (!grad.empty() && grad.size() != vals.size())
      throw ShapeError("Adam: gradient size " + std::to_string(grad.size()) +
                       " does not match parameter '" + params_[p].name + "'");
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      vals[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.value.clear_grad();
}

double cosine_lr(const CosineSchedule& schedule, std::int64_t t) {
  if (schedule.total_steps <= 0)
    throw ValueError("cosine_lr: total_steps must be positive");
  if (t < 0 || t > schedule.total_steps)
    throw ValueError("cosine_lr: step " + std::to_string(t) +
                     " outside [0, " + std::to_string(schedule.total_steps) +
                     "]");
  const double frac =
      static_cast<double>(t) / static_cast<double>(schedule.total_steps);
  return schedule.eta_min + 0.5 * (schedule.eta_max - schedule.eta_min) *
                                (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace posr::optim
