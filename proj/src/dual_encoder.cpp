// SPDX-License-Identifier: Apache-2.0

#include "advlora/dual_encoder.hpp"

#include <cmath>

#include "advlora/error.hpp"
#include "advlora/optimizer.hpp"

namespace advlora::model {

namespace ad = advlora::autodiff;

std::size_t EncoderStack::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weight.size() + layer.bias.size();
  return n;
}

void EncoderStack::validate() const {
  if (layers.empty()) throw ConfigError("encoder stack has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weight.rank() != 2 || layer.bias.rank() != 1 || layer.bias.size() != layer.weight.cols())
      throw DimensionError("layer " + std::to_string(l) + " has inconsistent weight/bias shapes");
    if (l > 0 && layers[l - 1].weight.cols() != layer.weight.rows())
      throw DimensionError("layer " + std::to_string(l) + " input does not match previous output");
  }
}

namespace {

EncoderStack init_stack(std::size_t input_dim, const EncoderConfig& config, Rng& rng) {
  if (config.num_layers == 0 || config.hidden_dim == 0 || config.embed_dim == 0)
    throw ConfigError("encoder dimensions must be positive");
  EncoderStack stack;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const bool last = l + 1 == config.num_layers;
    const std::size_t out = last ? config.embed_dim : config.hidden_dim;
    DenseLayer layer;
    layer.weight = Tensor({in, out});
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : layer.weight.data()) v = rng.normal(0.0, scale);
    layer.bias = Tensor({out});
    layer.apply_tanh = !last;
    stack.layers.push_back(std::move(layer));
    in = out;
  }
  return stack;
}

}  // namespace

DualEncoder init_dual_encoder(std::size_t d_v, std::size_t d_w, const EncoderConfig& config, Rng& rng) {
  DualEncoder model;
  model.vision = init_stack(d_v, config, rng);
  model.text = init_stack(d_w, config, rng);
  return model;
}

ProbeHead ProbeHead::identity(std::size_t dim) { return ProbeHead{Tensor::identity(dim), Tensor({dim})}; }

const adapter::LoraAdapter* AdaptedModel::adapter_for(const LayerId& id) const {
  for (const auto& a : adapters)
    if (a.target == id) return &a;
  return nullptr;
}

void AdaptedModel::validate() const {
  backbone.vision.validate();
  backbone.text.validate();
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    const auto& a = adapters[i];
    const auto& stack = backbone.stack(a.target.modality);
    if (a.target.index >= stack.layers.size())
      throw ConfigError("adapter targets missing layer " + to_string(a.target));
    a.validate();
    const Tensor& w = stack.layers[a.target.index].weight;
    if (a.in_dim() != w.rows() || a.out_dim() != w.cols())
      throw ConfigError("adapter for " + to_string(a.target) + " has shape " + std::to_string(a.in_dim()) + "x" +
                        std::to_string(a.out_dim()) + ", layer is " + shape_to_string(w.shape()));
    for (std::size_t j = 0; j < i; ++j)
      if (adapters[j].target == a.target) throw ConfigError("two adapters target " + to_string(a.target));
  }
  for (Modality m : {Modality::kVision, Modality::kText}) {
    const auto& head = probe(m);
    const std::size_t d = backbone.stack(m).output_dim();
    if (head && (head->weight.shape() != Shape{d, d} || head->bias.shape() != Shape{d}))
      throw ConfigError("probe head does not match embedding width");
  }
}

ParameterBinder::ParameterBinder(ad::Graph& graph, std::span<Tensor* const> tunable)
    : graph_(graph), tunable_(tunable.begin(), tunable.end()) {
  for (std::size_t i = 0; i < tunable_.size(); ++i) tunable_index_.emplace(tunable_[i], i);
}

ad::Var ParameterBinder::bind(const Tensor& tensor) {
  if (auto it = bound_.find(&tensor); it != bound_.end()) return it->second;
  const bool trainable = tunable_index_.contains(&tensor);
  ad::Var v = graph_.leaf(tensor, trainable);
  bound_.emplace(&tensor, v);
  return v;
}

std::vector<Tensor> ParameterBinder::gradients(const ad::GradientMap& grads) const {
  std::vector<Tensor> out;
  out.reserve(tunable_.size());
  for (Tensor* t : tunable_) {
    auto it = bound_.find(t);
    if (it == bound_.end() || !grads.contains(it->second))
      out.emplace_back(t->shape());
    else
      out.push_back(grads[it->second]);
  }
  return out;
}

ad::Var encode(ParameterBinder& binder, const AdaptedModel& model, Modality modality, ad::Var batch) {
  const EncoderStack& stack = model.backbone.stack(modality);
  if (batch.value().rank() != 2 || batch.value().cols() != stack.input_dim())
    throw DimensionError(to_string(modality) + " batch " + shape_to_string(batch.shape()) + " needs " +
                         std::to_string(stack.input_dim()) + " features");
  ad::Var x = batch;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const DenseLayer& layer = stack.layers[l];
    ad::Var y = ad::matmul(x, binder.bind(layer.weight));
    if (const auto* lora = model.adapter_for(LayerId{modality, static_cast<std::uint32_t>(l)})) {
      if (lora->in_dim() != layer.weight.rows() || lora->out_dim() != layer.weight.cols())
        throw ConfigError("adapter shape incompatible with layer " + to_string(lora->target));
      ad::Var low = ad::matmul(ad::matmul(x, binder.bind(lora->a)), binder.bind(lora->b));
      y = ad::add(y, ad::mul(low, binder.bind(lora->alpha)));
    }
    y = ad::add(y, binder.bind(layer.bias));
    x = layer.apply_tanh ? ad::tanh(y) : y;
  }
  if (const auto& head = model.probe(modality)) {
    x = ad::add(ad::matmul(x, binder.bind(head->weight)), binder.bind(head->bias));
  }
  return ad::l2_normalize_rows(x);
}

Tensor embed(const AdaptedModel& model, Modality modality, const Tensor& batch) {
  ad::Graph graph;
  ParameterBinder binder(graph);
  return encode(binder, model, modality, graph.constant(batch)).value();
}

ad::Var similarity_matrix(ad::Var zv, ad::Var zw) { return ad::matmul(zv, ad::transpose(zw)); }

Tensor similarity_matrix(const Tensor& zv, const Tensor& zw) {
  if (zv.rank() != 2 || zw.rank() != 2 || zv.cols() != zw.cols())
    throw DimensionError("similarity between " + shape_to_string(zv.shape()) + " and " + shape_to_string(zw.shape()));
  return matmul(zv, transpose(zw));
}

ad::Var contrastive_loss(ad::Var sim, double temperature) {
  const Tensor& s = sim.value();
  if (s.rank() != 2 || s.rows() != s.cols()) throw DimensionError("contrastive loss needs a square similarity matrix");
  if (s.rows() < 2) throw ContractError("contrastive loss needs a batch of at least 2");
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  ad::Var logits = ad::scalar_mul(1.0 / temperature, sim);
  ad::Var positives = ad::mean(ad::diagonal(logits));
  ad::Var rows = ad::sub(ad::mean(ad::logsumexp_rows(logits)), positives);
  ad::Var cols = ad::sub(ad::mean(ad::logsumexp_rows(ad::transpose(logits))), positives);
  return ad::scalar_mul(0.5, ad::add(rows, cols));
}

ad::Var batch_loss(ParameterBinder& binder, const AdaptedModel& model, ad::Var v, ad::Var w, double temperature) {
  ad::Var zv = encode(binder, model, Modality::kVision, v);
  ad::Var zw = encode(binder, model, Modality::kText, w);
  return contrastive_loss(similarity_matrix(zv, zw), temperature);
}

double batch_loss_value(const AdaptedModel& model, const Tensor& v, const Tensor& w, double temperature) {
  ad::Graph graph;
  ParameterBinder binder(graph);
  return batch_loss(binder, model, graph.constant(v), graph.constant(w), temperature).value().item();
}

PretrainResult pretrain(DualEncoder model, const data::DatasetSplit& train, const PretrainConfig& config) {
  model.vision.validate();
  model.text.validate();
  if (model.vision.frozen || model.text.frozen) throw ConfigError("pretraining needs unfrozen stacks");
  if (config.batch_size < 2) throw ConfigError("pretrain batch size must be at least 2");

  AdaptedModel wrapper;
  wrapper.backbone = std::move(model);
  std::vector<Tensor*> params;
  for (Modality m : {Modality::kVision, Modality::kText})
    for (auto& layer : wrapper.backbone.stack(m).layers) {
      params.push_back(&layer.weight);
      params.push_back(&layer.bias);
    }

  const std::size_t batches_per_epoch = train.size() / config.batch_size + 1;
  optim::AdamWConfig opt_config;
  opt_config.lr = config.lr;
  opt_config.weight_decay = config.weight_decay;
  opt_config.total_steps = config.epochs * batches_per_epoch;
  opt_config.max_grad_norm = 0.0;
  optim::AdamW optimizer(opt_config, params);

  Rng shuffle = SeedTree(config.seed).stream("shuffle");
  PretrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& batch : data::shuffled_batches(train.size(), config.batch_size, shuffle)) {
      ad::Graph graph;
      ParameterBinder binder(graph, params);
      ad::Var v = graph.constant(gather_rows(train.view_v, batch));
      ad::Var w = graph.constant(gather_rows(train.view_w, batch));
      ad::Var loss = batch_loss(binder, wrapper, v, w, config.temperature);
      const double value = loss.value().item();
      if (!std::isfinite(value))
        throw TrainingError("pretraining loss diverged at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(optimizer.steps_taken()));
      optimizer.step(binder.gradients(graph.backward(loss)));
      total += value;
      ++count;
    }
    result.epoch_loss.push_back(count ? total / static_cast<double>(count) : 0.0);
  }
  result.model = std::move(wrapper.backbone);
  result.model.freeze();
  return result;
}

}  // namespace advlora::model
