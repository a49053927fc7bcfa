// SPDX-License-Identifier: Apache-2.0

#include "advlora/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "advlora/error.hpp"

namespace advlora::optim {

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return base_lr;
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_norm(const std::vector<const Tensor*>& grads) {
  double s = 0.0;
  for (const Tensor* g : grads)
    for (double v : g->data()) s += v * v;
  return std::sqrt(s);
}

AdamW::AdamW(AdamWConfig config, const std::vector<Tensor*>& params) : config_(config), params_(params) {
  if (!(config_.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  for (const Tensor* p : params_) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

double AdamW::current_lr() const { return cosine_lr(config_.lr, t_, config_.total_steps); }

void AdamW::step(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size()) throw ContractError("gradient count does not match parameter count");
  double clip = 1.0;
  if (config_.max_grad_norm > 0.0) {
    std::vector<const Tensor*> view;
    for (const auto& g : grads) view.push_back(&g);
    const double norm = global_norm(view);
    if (norm > config_.max_grad_norm) clip = config_.max_grad_norm / norm;
  }
  const double lr = current_lr();
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    const Tensor& g = grads[i];
    if (g.shape() != p.shape()) throw DimensionError("gradient shape mismatch for parameter " + std::to_string(i));
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
      p[j] -= lr * (update + config_.weight_decay * p[j]);
    }
  }
}

}  // namespace advlora::optim
