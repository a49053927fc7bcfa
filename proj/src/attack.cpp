// SPDX-License-Identifier: Apache-2.0

#include "advlora/attack.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "advlora/error.hpp"

namespace advlora::attack {

namespace ad = advlora::autodiff;

std::string to_string(Family f) {
  switch (f) {
    case Family::kFgsm:
      return "fgsm";
    case Family::kPgd:
      return "pgd";
    case Family::kBim:
      return "bim";
  }
  return "unknown";
}

Family parse_family(const std::string& name) {
  if (name == "fgsm") return Family::kFgsm;
  if (name == "pgd") return Family::kPgd;
  if (name == "bim") return Family::kBim;
  throw ConfigError("unknown attack family '" + name + "'");
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack epsilon must be >= 0");
  if (!(xi > 0.0) || !std::isfinite(xi)) throw ConfigError("attack step size must be > 0");
  if (steps == 0) throw ConfigError("attack needs at least one step");
  if (family == Family::kFgsm && steps != 1) throw ConfigError("fgsm takes exactly one step");
  if (clip_data_range && !(clip_data_range->first <= clip_data_range->second))
    throw ConfigError("attack clip range is empty");
}

std::string AttackSpec::label() const {
  std::ostringstream out;
  out << to_string(family) << "(eps=" << epsilon << ",xi=" << xi << ",steps=" << steps
      << (random_start ? ",rs" : "") << ")";
  return out.str();
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

namespace {

// Projects delta into the eps-ball and, when a data range is set, moves
// v + delta back inside it. Returns v + delta.
Tensor project(const Tensor& v, Tensor& delta, const AttackSpec& spec) {
  Tensor v_adv(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double d = std::clamp(delta[i], -spec.epsilon, spec.epsilon);
    double x = v[i] + d;
    if (spec.clip_data_range) {
      x = std::clamp(x, spec.clip_data_range->first, spec.clip_data_range->second);
      d = x - v[i];
    }
    delta[i] = d;
    v_adv[i] = x;
  }
  return v_adv;
}

AdversarialBatch iterate(const GradientOracle& gradient, const Tensor& v, const AttackSpec& spec, bool random_start,
                         Rng* rng, const StepObserver& observer) {
  spec.validate();
  Tensor delta(v.shape());
  if (random_start) {
    for (double& d : delta.data()) d = rng->uniform(-spec.epsilon, spec.epsilon);
  }
  Tensor v_adv = project(v, delta, spec);
  for (std::size_t step = 0; step < spec.steps; ++step) {
    const Tensor g = gradient(v_adv);
    if (g.shape() != v.shape()) throw DimensionError("attack gradient has shape " + shape_to_string(g.shape()));
    if (!g.all_finite()) throw AttackError("non-finite input gradient at attack step " + std::to_string(step));
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += spec.xi * sign(g[i]);
    v_adv = project(v, delta, spec);
    if (observer) observer(step, v_adv);
  }
  return AdversarialBatch{std::move(v_adv), std::move(delta)};
}

}  // namespace

AdversarialBatch pgd(const GradientOracle& gradient, const Tensor& v, const AttackSpec& spec, Rng& rng,
                     const StepObserver& observer) {
  return iterate(gradient, v, spec, spec.random_start, &rng, observer);
}

AdversarialBatch fgsm(const GradientOracle& gradient, const Tensor& v, const AttackSpec& spec) {
  AttackSpec single = spec;
  single.family = Family::kFgsm;
  single.steps = 1;
  single.xi = spec.epsilon > 0.0 ? spec.epsilon : spec.xi;
  return iterate(gradient, v, single, false, nullptr, {});
}

AdversarialBatch bim(const GradientOracle& gradient, const Tensor& v, const AttackSpec& spec,
                     const StepObserver& observer) {
  return iterate(gradient, v, spec, false, nullptr, observer);
}

AdversarialBatch run(const GradientOracle& gradient, const Tensor& v, const AttackSpec& spec, Rng& rng) {
  switch (spec.family) {
    case Family::kFgsm:
      return fgsm(gradient, v, spec);
    case Family::kPgd:
      return pgd(gradient, v, spec, rng);
    case Family::kBim:
      return bim(gradient, v, spec);
  }
  throw ConfigError("unknown attack family");
}

GradientOracle contrastive_gradient(const model::AdaptedModel& model, const Tensor& w, double temperature) {
  // The text tower is fixed during an attack, so its embeddings enter as constants.
  Tensor zw = model::embed(model, Modality::kText, w);
  return [&model, zw = std::move(zw), temperature](const Tensor& v) {
    ad::Graph graph;
    model::ParameterBinder binder(graph);
    ad::Var input = graph.parameter(v);
    ad::Var zv = model::encode(binder, model, Modality::kVision, input);
    ad::Var loss = model::contrastive_loss(model::similarity_matrix(zv, graph.constant(zw)), temperature);
    return graph.backward(loss)[input];
  };
}

AdversarialBatch attack_batch(const model::AdaptedModel& model, const Tensor& v, const Tensor& w,
                              const AttackSpec& spec, double temperature, Rng& rng) {
  return run(contrastive_gradient(model, w, temperature), v, spec, rng);
}

}  // namespace advlora::attack
