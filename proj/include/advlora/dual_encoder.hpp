// SPDX-License-Identifier: Apache-2.0

// Two-tower MLP retrieval model. Each tower maps its modality to a unit-norm
// embedding; retrieval scores are cosine similarities between towers. Frozen
// base weights can be augmented with low-rank adapters on any dense layer and
// with an optional linear head per tower (the linear-probe baseline).

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "advlora/adapter.hpp"
#include "advlora/autodiff.hpp"
#include "advlora/dataset.hpp"
#include "advlora/layer_id.hpp"
#include "advlora/rng.hpp"
#include "advlora/tensor.hpp"

namespace advlora::model {

struct DenseLayer {
  Tensor weight;  // W0, m x n
  Tensor bias;    // n
  bool apply_tanh = true;

  bool operator==(const DenseLayer&) const = default;
};

struct EncoderStack {
  std::vector<DenseLayer> layers;
  bool frozen = false;

  std::size_t input_dim() const { return layers.front().weight.rows(); }
  std::size_t output_dim() const { return layers.back().weight.cols(); }
  std::size_t parameter_count() const;
  // Consecutive layer dimensions must compose.
  void validate() const;

  bool operator==(const EncoderStack&) const = default;
};

struct EncoderConfig {
  std::size_t hidden_dim = 64;
  // Dense layers per tower; the last one is the linear output projection.
  std::size_t num_layers = 3;
  std::size_t embed_dim = 32;
};

struct DualEncoder {
  EncoderStack vision;
  EncoderStack text;

  EncoderStack& stack(Modality m) { return m == Modality::kVision ? vision : text; }
  const EncoderStack& stack(Modality m) const { return m == Modality::kVision ? vision : text; }
  std::size_t embed_dim() const { return vision.output_dim(); }
  std::size_t parameter_count() const { return vision.parameter_count() + text.parameter_count(); }
  void freeze() { vision.frozen = text.frozen = true; }

  bool operator==(const DualEncoder&) const = default;
};

DualEncoder init_dual_encoder(std::size_t d_v, std::size_t d_w, const EncoderConfig& config, Rng& rng);

// Trainable linear map applied to a tower's output before normalization.
struct ProbeHead {
  Tensor weight;  // d_emb x d_emb
  Tensor bias;    // d_emb

  static ProbeHead identity(std::size_t dim);
  bool operator==(const ProbeHead&) const = default;
};

// A frozen backbone plus whatever the adaptation method trains on top of it.
struct AdaptedModel {
  DualEncoder backbone;
  std::vector<adapter::LoraAdapter> adapters;
  std::optional<ProbeHead> vision_probe;
  std::optional<ProbeHead> text_probe;

  const adapter::LoraAdapter* adapter_for(const LayerId& id) const;
  const std::optional<ProbeHead>& probe(Modality m) const { return m == Modality::kVision ? vision_probe : text_probe; }
  // Checks every adapter against the layer it targets.
  void validate() const;

  bool operator==(const AdaptedModel&) const = default;
};

// Puts model tensors on a graph. Tensors listed as tunable become
// requires_grad leaves; everything else enters as a constant.
class ParameterBinder {
 public:
  explicit ParameterBinder(autodiff::Graph& graph, std::span<Tensor* const> tunable = {});

  autodiff::Var bind(const Tensor& tensor);
  // Gradients for the tunable tensors, in the order they were given.
  std::vector<Tensor> gradients(const autodiff::GradientMap& grads) const;
  autodiff::Graph& graph() { return graph_; }

 private:
  autodiff::Graph& graph_;
  std::vector<Tensor*> tunable_;
  std::unordered_map<const Tensor*, std::size_t> tunable_index_;
  std::unordered_map<const Tensor*, autodiff::Var> bound_;
};

// Embeds a batch. At each adapted layer Y = X W0 + alpha X A B + bias,
// otherwise Y = X W0 + bias; tanh on hidden layers; rows L2-normalized last.
autodiff::Var encode(ParameterBinder& binder, const AdaptedModel& model, Modality modality, autodiff::Var batch);

// Value-only forward pass.
Tensor embed(const AdaptedModel& model, Modality modality, const Tensor& batch);

// Entry (i, j) is the cosine similarity of row i of zv and row j of zw.
autodiff::Var similarity_matrix(autodiff::Var zv, autodiff::Var zw);
Tensor similarity_matrix(const Tensor& zv, const Tensor& zw);

// Symmetric InfoNCE: mean of the row-wise and column-wise cross-entropy of
// sim / temperature against the diagonal.
autodiff::Var contrastive_loss(autodiff::Var sim, double temperature);

// Contrastive loss of a paired batch under the model.
autodiff::Var batch_loss(ParameterBinder& binder, const AdaptedModel& model, autodiff::Var v, autodiff::Var w,
                         double temperature);
double batch_loss_value(const AdaptedModel& model, const Tensor& v, const Tensor& w, double temperature);

struct PretrainConfig {
  EncoderConfig architecture;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 3e-3;
  double weight_decay = 0.0;
  double temperature = 0.07;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  DualEncoder model;
  std::vector<double> epoch_loss;
};

// Contrastive training of both towers on clean pairs; the returned model is
// frozen.
PretrainResult pretrain(DualEncoder model, const data::DatasetSplit& train, const PretrainConfig& config);

}  // namespace advlora::model
