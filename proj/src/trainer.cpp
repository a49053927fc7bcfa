// SPDX-License-Identifier: Apache-2.0

#include "advlora/trainer.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"

#include "advlora/error.hpp"
#include "advlora/optimizer.hpp"
#include "advlora/retrieval.hpp"

namespace advlora::train {

namespace ad = advlora::autodiff;

std::string to_string(Method m) {
  switch (m) {
    case Method::kAdvLora:
      return "advlora";
    case Method::kLora:
      return "lora";
    case Method::kLinearProbe:
      return "lp";
    case Method::kFullFineTune:
      return "fft";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "advlora") return Method::kAdvLora;
  if (name == "lora") return Method::kLora;
  if (name == "lp" || name == "linear_probe") return Method::kLinearProbe;
  if (name == "fft" || name == "full_ft") return Method::kFullFineTune;
  throw ConfigError("unknown adaptation method '" + name + "'");
}

Toggles AdaptConfig::effective_toggles() const {
  if (method == Method::kAdvLora) return toggles;
  return Toggles{false, false, false};
}

void AdaptConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (rank == 0 && (method == Method::kAdvLora || method == Method::kLora)) throw ConfigError("rank must be positive");
  if (adversarial) attack.validate();
}

AdaptedState build_method_state(const model::DualEncoder& frozen, const AdaptConfig& config) {
  AdaptedState state;
  state.model.backbone = frozen;
  const bool needs_frozen = config.method != Method::kFullFineTune;
  if (needs_frozen && !(frozen.vision.frozen && frozen.text.frozen))
    throw ConfigError(to_string(config.method) + " expects a frozen backbone");

  switch (config.method) {
    case Method::kFullFineTune:
      state.model.backbone.vision.frozen = false;
      state.model.backbone.text.frozen = false;
      break;
    case Method::kLinearProbe:
      state.model.vision_probe = model::ProbeHead::identity(frozen.vision.output_dim());
      state.model.text_probe = model::ProbeHead::identity(frozen.text.output_dim());
      break;
    case Method::kAdvLora:
    case Method::kLora: {
      const Toggles t = config.effective_toggles();
      const SeedTree init = SeedTree(config.seed).child("init");
      // Anything that leaves AB != 0 at init starts from the small alpha; plain LoRA keeps 1.
      const double alpha = (t.pc || t.pa || t.pu) ? config.alpha_init : 1.0;
      for (Modality m : {Modality::kVision, Modality::kText}) {
        const auto& layers = frozen.stack(m).layers;
        for (std::uint32_t l = 0; l < layers.size(); ++l) {
          const LayerId target{m, l};
          const Tensor& w0 = layers[l].weight;
          const std::uint64_t seed = init.seed_for(to_string(target));
          adapter::LoraAdapter lora;
          if (t.pc) {
            lora = adapter::init_cluster(w0, config.rank, config.kmeans, seed, alpha, t.pu, target);
          } else {
            Rng rng(seed);
            lora = adapter::init_standard(w0.rows(), w0.cols(), config.rank, config.init_sigma, rng, target);
            lora.alpha = Tensor::scalar(alpha);
            lora.alpha_trainable = t.pu;
          }
          if (t.pa) state.align_reports.push_back(adapter::align(lora, w0, config.align));
          state.model.adapters.push_back(std::move(lora));
        }
      }
      break;
    }
  }
  state.model.validate();
  return state;
}

std::size_t TunableSet::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* p : params) n += p->size();
  return n;
}

TunableSet tunable_set(model::AdaptedModel& model, const AdaptConfig& config) {
  TunableSet set;
  auto add = [&set](Tensor& t, std::string name) {
    set.params.push_back(&t);
    set.names.push_back(std::move(name));
  };
  switch (config.method) {
    case Method::kFullFineTune:
      for (Modality m : {Modality::kVision, Modality::kText}) {
        auto& layers = model.backbone.stack(m).layers;
        for (std::size_t l = 0; l < layers.size(); ++l) {
          const std::string base = to_string(m) + "." + std::to_string(l);
          add(layers[l].weight, base + ".weight");
          add(layers[l].bias, base + ".bias");
        }
      }
      break;
    case Method::kLinearProbe:
      if (model.vision_probe) {
        add(model.vision_probe->weight, "vision.probe.weight");
        add(model.vision_probe->bias, "vision.probe.bias");
      }
      if (model.text_probe) {
        add(model.text_probe->weight, "text.probe.weight");
        add(model.text_probe->bias, "text.probe.bias");
      }
      break;
    case Method::kAdvLora:
    case Method::kLora:
      for (auto& a : model.adapters) {
        const std::string base = to_string(a.target);
        add(a.a, base + ".A");
        add(a.b, base + ".B");
        if (a.alpha_trainable) add(a.alpha, base + ".alpha");
      }
      break;
  }
  return set;
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (std::size_t i = 0; i < step_loss.size(); ++i) {
    nlohmann::json rec = {{"type", "step"}, {"step", i}, {"loss", step_loss[i]}};
    if (i < step_clean_loss.size()) rec["clean_loss"] = step_clean_loss[i];
    out += rec.dump() + "\n";
  }
  for (const auto& e : epochs) {
    nlohmann::json rec = {{"type", "epoch"},
                          {"epoch", e.epoch},
                          {"mean_loss", e.mean_loss},
                          {"val_natural_rmean", e.val_natural_rmean},
                          {"val_attacked_rmean", e.val_attacked_rmean}};
    out += rec.dump() + "\n";
  }
  nlohmann::json summary = {{"type", "summary"}, {"tunable_parameters", tunable_parameters}};
  out += summary.dump() + "\n";
  return out;
}

AdaptResult adversarial_adapt(const model::DualEncoder& frozen, const data::DatasetSplit& train,
                              const AdaptConfig& config, const data::DatasetSplit* val) {
  config.validate();
  AdaptResult result;
  result.state = build_method_state(frozen, config);
  model::AdaptedModel& model = result.state.model;
  const TunableSet tunable = tunable_set(model, config);
  result.log.tunable_parameters = tunable.parameter_count();

  const SeedTree seeds(config.seed);
  Rng shuffle = seeds.stream("shuffle");
  Rng attack_rng = seeds.stream("attack");

  const std::size_t full = train.size() / config.batch_size;
  const std::size_t batches_per_epoch = full + (train.size() % config.batch_size >= 2 ? 1 : 0);
  optim::AdamWConfig opt;
  opt.lr = config.lr;
  opt.beta1 = config.beta1;
  opt.beta2 = config.beta2;
  opt.weight_decay = config.weight_decay;
  opt.max_grad_norm = config.max_grad_norm;
  opt.total_steps = config.epochs * batches_per_epoch;
  optim::AdamW optimizer(opt, tunable.params);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    double epoch_loss = 0.0;
    std::size_t count = 0;
    for (const auto& batch : data::shuffled_batches(train.size(), config.batch_size, shuffle)) {
      const Tensor v = gather_rows(train.view_v, batch);
      const Tensor w = gather_rows(train.view_w, batch);
      const double clean = model::batch_loss_value(model, v, w, config.temperature);

      ad::Graph graph;
      model::ParameterBinder binder(graph, tunable.params);
      ad::Var wv = graph.constant(w);
      ad::Var loss;
      if (config.adversarial) {
        // Regenerated against the current parameters at every step.
        const Tensor v_adv = attack::attack_batch(model, v, w, config.attack, config.temperature, attack_rng).v_adv;
        loss = model::batch_loss(binder, model, graph.constant(v_adv), wv, config.temperature);
        if (config.mix_clean)
          loss = ad::scalar_mul(0.5, ad::add(loss, model::batch_loss(binder, model, graph.constant(v), wv,
                                                                     config.temperature)));
      } else {
        loss = model::batch_loss(binder, model, graph.constant(v), wv, config.temperature);
      }
      const double value = loss.value().item();
      const std::size_t step = result.log.step_loss.size();
      if (!std::isfinite(value) || !std::isfinite(clean))
        throw TrainingError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                            ")");
      optimizer.step(binder.gradients(graph.backward(loss)));
      result.log.step_loss.push_back(value);
      result.log.step_clean_loss.push_back(clean);
      epoch_loss += value;
      ++count;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.mean_loss = count ? epoch_loss / static_cast<double>(count) : 0.0;
    if (val != nullptr) {
      eval::EvalOptions options;
      options.temperature = config.temperature;
      options.seed = config.seed;
      record.val_natural_rmean = eval::evaluate(model, *val, options).mean();
      options.attack = config.attack;
      record.val_attacked_rmean = eval::evaluate(model, *val, options).mean();
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.epochs.push_back(record);
  }
  return result;
}

AdaptResult natural_adapt(const model::DualEncoder& frozen, const data::DatasetSplit& train, AdaptConfig config,
                          const data::DatasetSplit* val) {
  config.adversarial = false;
  return adversarial_adapt(frozen, train, config, val);
}

}  // namespace advlora::train
