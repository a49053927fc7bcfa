// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "advlora/tensor.hpp"

namespace advlora::optim {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  // Cosine decay from lr to 0 over this many steps; 0 keeps lr constant.
  std::size_t total_steps = 0;
  // Rescale gradients whose global L2 norm exceeds this; 0 disables clipping.
  double max_grad_norm = 1.0;
};

// Learning rate at `step` (0-based) under cosine decay.
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

// Global L2 norm over a set of gradient tensors.
double global_norm(const std::vector<const Tensor*>& grads);

// AdamW with decoupled weight decay. Parameters are owned elsewhere and
// addressed by position; the same tensors must be passed to every step.
class AdamW {
 public:
  AdamW(AdamWConfig config, const std::vector<Tensor*>& params);

  // Applies one update. grads[i] must match params[i] in shape.
  void step(const std::vector<Tensor>& grads);

  std::size_t steps_taken() const { return t_; }
  double current_lr() const;

 private:
  AdamWConfig config_;
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

}  // namespace advlora::optim
