// SPDX-License-Identifier: Apache-2.0

// White-box l-infinity attacks on the vision input. All three families share
// one iteration:
//
//   delta <- Proj_[-eps, eps]( delta + xi * sign(grad_v L(v + delta, w)) )
//
// followed by an optional clamp of v + delta into the data range. FGSM is a
// single step with xi = eps from delta = 0; BIM is PGD without a random start.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "advlora/dual_encoder.hpp"
#include "advlora/rng.hpp"
#include "advlora/tensor.hpp"

namespace advlora::attack {

enum class Family : std::uint8_t { kFgsm, kPgd, kBim };

std::string to_string(Family f);
Family parse_family(const std::string& name);

struct AttackSpec {
  Family family = Family::kPgd;
  double epsilon = 1.0 / 255.0;
  double xi = 1.0 / 255.0;
  std::size_t steps = 3;
  bool random_start = false;
  std::optional<std::pair<double, double>> clip_data_range = std::make_pair(0.0, 1.0);

  // epsilon = 0 is accepted and yields the identity attack.
  void validate() const;
  std::string label() const;
};

struct AdversarialBatch {
  Tensor v_adv;
  Tensor delta;
};

// Gradient of the attacked loss with respect to the input batch.
using GradientOracle = std::function<Tensor(const Tensor& v)>;
// Called after every iteration with the current adversarial batch.
using StepObserver = std::function<void(std::size_t step, const Tensor& v_adv)>;

// sign with sign(0) = 0.
double sign(double x);

AdversarialBatch pgd(const GradientOracle& gradient, const Tensor& v, const AttackSpec& spec, Rng& rng,
                     const StepObserver& observer = {});
AdversarialBatch fgsm(const GradientOracle& gradient, const Tensor& v, const AttackSpec& spec);
AdversarialBatch bim(const GradientOracle& gradient, const Tensor& v, const AttackSpec& spec,
                     const StepObserver& observer = {});
// Dispatches on spec.family.
AdversarialBatch run(const GradientOracle& gradient, const Tensor& v, const AttackSpec& spec, Rng& rng);

// Contrastive loss of the paired batch (v, w) as a function of v, with every
// model parameter held fixed.
GradientOracle contrastive_gradient(const model::AdaptedModel& model, const Tensor& w, double temperature);

// Attacks the vision views of a paired batch against `model`.
AdversarialBatch attack_batch(const model::AdaptedModel& model, const Tensor& v, const Tensor& w,
                              const AttackSpec& spec, double temperature, Rng& rng);

}  // namespace advlora::attack
