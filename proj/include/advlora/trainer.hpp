// SPDX-License-Identifier: Apache-2.0

// Adaptation of a frozen dual encoder, adversarial or natural.
//
// Each mini-batch: (1) clean loss at the current parameters, (2) adversarial
// vision views generated against those same parameters, (3) loss on the
// adversarial batch, (4) one AdamW step on the method's tunable set only.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "advlora/adapter.hpp"
#include "advlora/attack.hpp"
#include "advlora/dataset.hpp"
#include "advlora/dual_encoder.hpp"

namespace advlora::train {

enum class Method : std::uint8_t { kAdvLora, kLora, kLinearProbe, kFullFineTune };

std::string to_string(Method m);
// Accepts advlora, lora, lp / linear_probe, fft / full_ft.
Method parse_method(const std::string& name);

// Parameter clustering, parameter alignment, adaptive update scale.
struct Toggles {
  bool pc = true;
  bool pa = true;
  bool pu = true;

  bool operator==(const Toggles&) const = default;
};

struct AdaptConfig {
  Method method = Method::kAdvLora;
  bool adversarial = true;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double max_grad_norm = 1.0;
  double temperature = 0.07;
  attack::AttackSpec attack;
  std::uint64_t seed = 0;
  Toggles toggles;
  std::size_t rank = 10;
  // Standard init: A ~ N(0, init_sigma^2).
  double init_sigma = 0.02;
  // Initial alpha whenever any toggle is on.
  double alpha_init = 1e-3;
  adapter::KMeansParams kmeans;
  adapter::AlignParams align;
  // Also add the clean-batch loss to each update (off: adversarial batches only).
  bool mix_clean = false;

  // Toggles only apply to advlora; lora forces them all off.
  Toggles effective_toggles() const;
  void validate() const;
};

struct AdaptedState {
  model::AdaptedModel model;
  std::vector<adapter::AlignReport> align_reports;
};

// Builds the starting point for a method on top of a frozen backbone.
AdaptedState build_method_state(const model::DualEncoder& frozen, const AdaptConfig& config);

struct TunableSet {
  std::vector<Tensor*> params;
  std::vector<std::string> names;

  std::size_t parameter_count() const;
};

// Pointers into `model` for the parameters `config.method` updates.
TunableSet tunable_set(model::AdaptedModel& model, const AdaptConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double val_natural_rmean = 0.0;
  double val_attacked_rmean = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<double> step_loss;        // loss used for the update
  std::vector<double> step_clean_loss;  // clean loss at the same parameters
  std::vector<EpochRecord> epochs;
  std::size_t tunable_parameters = 0;

  // Line-delimited JSON: one "step" record per update, one "epoch" record per epoch.
  std::string to_jsonl() const;
};

struct AdaptResult {
  AdaptedState state;
  TrainLog log;
};

// `val` may be null, which skips the per-epoch validation metrics.
AdaptResult adversarial_adapt(const model::DualEncoder& frozen, const data::DatasetSplit& train,
                              const AdaptConfig& config, const data::DatasetSplit* val = nullptr);
AdaptResult natural_adapt(const model::DualEncoder& frozen, const data::DatasetSplit& train, AdaptConfig config,
                          const data::DatasetSplit* val = nullptr);

}  // namespace advlora::train
