// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "advlora/adapter.hpp"
#include "advlora/dual_encoder.hpp"
#include "advlora/error.hpp"
#include "advlora/retrieval.hpp"
#include "support.hpp"

namespace ad = advlora::autodiff;
namespace model = advlora::model;
using advlora::LayerId;
using advlora::Modality;
using advlora::Rng;
using advlora::Tensor;
using advlora::testing::random_tensor;

namespace {

model::DualEncoder tiny_encoder(std::uint64_t seed = 1) {
  model::EncoderConfig c;
  c.hidden_dim = 6;
  c.embed_dim = 4;
  Rng rng(seed);
  auto enc = model::init_dual_encoder(5, 3, c, rng);
  enc.freeze();
  return enc;
}

std::vector<advlora::adapter::LoraAdapter> random_adapters(const model::DualEncoder& enc, std::size_t k,
                                                           std::uint64_t seed) {
  std::vector<advlora::adapter::LoraAdapter> out;
  for (Modality m : {Modality::kVision, Modality::kText})
    for (std::uint32_t l = 0; l < enc.stack(m).layers.size(); ++l) {
      const Tensor& w = enc.stack(m).layers[l].weight;
      advlora::adapter::LoraAdapter a;
      a.a = random_tensor({w.rows(), k}, seed + 2 * l + 10 * static_cast<int>(m), 0.3);
      a.b = random_tensor({k, w.cols()}, seed + 2 * l + 1 + 10 * static_cast<int>(m), 0.3);
      a.alpha = Tensor::scalar(0.7);
      a.target = LayerId{m, l};
      out.push_back(a);
    }
  return out;
}

}  // namespace

TEST(DualEncoder, ArchitectureMatchesConfig) {
  Rng rng(1);
  const auto enc = model::init_dual_encoder(64, 48, model::EncoderConfig{}, rng);
  ASSERT_EQ(enc.vision.layers.size(), 3u);
  EXPECT_EQ(enc.vision.layers[0].weight.shape(), (advlora::Shape{64, 64}));
  EXPECT_EQ(enc.text.layers[0].weight.shape(), (advlora::Shape{48, 64}));
  EXPECT_EQ(enc.vision.layers[2].weight.shape(), (advlora::Shape{64, 32}));
  EXPECT_FALSE(enc.vision.layers[2].apply_tanh);
  EXPECT_TRUE(enc.vision.layers[0].apply_tanh);
}

TEST(DualEncoder, EmbeddingsAreUnitRows) {
  model::AdaptedModel m{tiny_encoder(), {}, {}, {}};
  const Tensor z = model::embed(m, Modality::kVision, random_tensor({7, 5}, 2));
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double n = 0.0;
    for (double v : z.row(r)) n += v * v;
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(DualEncoder, ZeroBAdapterIsANoOp) {
  const auto enc = tiny_encoder();
  model::AdaptedModel base{enc, {}, {}, {}};
  model::AdaptedModel adapted = base;
  Rng rng(4);
  for (Modality m : {Modality::kVision, Modality::kText})
    for (std::uint32_t l = 0; l < enc.stack(m).layers.size(); ++l) {
      const Tensor& w = enc.stack(m).layers[l].weight;
      adapted.adapters.push_back(advlora::adapter::init_standard(w.rows(), w.cols(), 2, 0.02, rng, LayerId{m, l}));
    }
  const Tensor x = random_tensor({6, 5}, 3);
  EXPECT_EQ(model::embed(adapted, Modality::kVision, x), model::embed(base, Modality::kVision, x));
}

TEST(DualEncoder, ZeroAlphaAdapterIsANoOp) {
  const auto enc = tiny_encoder();
  model::AdaptedModel base{enc, {}, {}, {}};
  model::AdaptedModel adapted{enc, random_adapters(enc, 2, 5), {}, {}};
  for (auto& a : adapted.adapters) a.alpha = Tensor::scalar(0.0);
  const Tensor w = random_tensor({6, 3}, 3);
  EXPECT_EQ(model::embed(adapted, Modality::kText, w), model::embed(base, Modality::kText, w));
}

TEST(DualEncoder, MergedWeightsMatchModularForward) {
  const auto enc = tiny_encoder();
  model::AdaptedModel adapted{enc, random_adapters(enc, 2, 7), {}, {}};
  model::AdaptedModel merged{enc, {}, {}, {}};
  for (const auto& a : adapted.adapters) {
    auto& layer = merged.backbone.stack(a.target.modality).layers[a.target.index];
    layer.weight = advlora::adapter::merge(a, layer.weight);
  }
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tensor x = random_tensor({9, 5}, seed);
    EXPECT_LT(advlora::max_abs_diff(model::embed(adapted, Modality::kVision, x), model::embed(merged, Modality::kVision, x)),
              1e-10);
  }
}

TEST(DualEncoder, SimilarityMatchesPerPairCosine) {
  const Tensor zv = random_tensor({4, 3}, 1);
  const Tensor zw = random_tensor({4, 3}, 2);
  // Inputs are not normalized here: the entry must still be a cosine.
  auto norm = [](std::span<const double> r) {
    double s = 0.0;
    for (double v : r) s += v * v;
    return std::sqrt(s);
  };
  ad::Graph g;
  const Tensor sim = model::similarity_matrix(ad::l2_normalize_rows(g.constant(zv)), ad::l2_normalize_rows(g.constant(zw))).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < 3; ++d) dot += zv(i, d) * zw(j, d);
      EXPECT_NEAR(sim(i, j), dot / (norm(zv.row(i)) * norm(zw.row(j))), 1e-12);
    }
}

TEST(DualEncoder, InfoNceOfUniformSimilarityIsLogB) {
  for (std::size_t b : {2, 5, 16}) {
    ad::Graph g;
    const double loss = model::contrastive_loss(g.constant(Tensor::full({b, b}, 0.3)), 0.07).value().item();
    EXPECT_NEAR(loss, std::log(static_cast<double>(b)), 1e-12);
  }
}

TEST(DualEncoder, InfoNceTwoByTwoHandCase) {
  ad::Graph g;
  const Tensor sim = Tensor::matrix({{1.0, 0.0}, {0.5, 1.0}});
  const double t = 0.5;
  const double loss = model::contrastive_loss(g.constant(sim), t).value().item();
  // Rows: -log softmax of the diagonal; columns likewise.
  auto ce = [](double pos, double neg) { return std::log(std::exp(pos) + std::exp(neg)) - pos; };
  const double rows = 0.5 * (ce(1.0 / t, 0.0 / t) + ce(1.0 / t, 0.5 / t));
  const double cols = 0.5 * (ce(1.0 / t, 0.5 / t) + ce(1.0 / t, 0.0 / t));
  EXPECT_NEAR(loss, 0.5 * (rows + cols), 1e-12);
  EXPECT_THROW(model::contrastive_loss(g.constant(sim), 0.0), advlora::ContractError);
}

TEST(DualEncoder, BatchLossGradientMatchesFiniteDifferences) {
  const auto enc = tiny_encoder();
  model::AdaptedModel m{enc, random_adapters(enc, 2, 3), {}, {}};
  const Tensor v = random_tensor({5, 5}, 8);
  const Tensor w = random_tensor({5, 3}, 9);
  std::vector<Tensor*> tunable = {&m.adapters[1].a, &m.adapters[4].b, &m.adapters[0].alpha};
  ad::Graph g;
  model::ParameterBinder binder(g, tunable);
  const ad::Var loss = model::batch_loss(binder, m, g.constant(v), g.constant(w), 0.1);
  const auto grads = binder.gradients(g.backward(loss));
  for (std::size_t i = 0; i < tunable.size(); ++i) {
    const Tensor original = *tunable[i];
    auto f = [&](const Tensor& p) {
      *tunable[i] = p;
      const double value = model::batch_loss_value(m, v, w, 0.1);
      *tunable[i] = original;
      return value;
    };
    EXPECT_LT(advlora::testing::max_rel_error(grads[i], advlora::testing::finite_difference(f, original, 1e-6)), 1e-5);
  }
}

TEST(DualEncoder, BatchShapeMismatchIsDimensionError) {
  model::AdaptedModel m{tiny_encoder(), {}, {}, {}};
  EXPECT_THROW(model::embed(m, Modality::kVision, random_tensor({4, 3}, 1)), advlora::DimensionError);
}

TEST(DualEncoder, UntrainedModelRetrievesAtChanceLevel) {
  const auto& f = advlora::testing::default_fixture();
  Rng rng = advlora::SeedTree(7).stream("init");
  model::AdaptedModel untrained{model::init_dual_encoder(64, 48, model::EncoderConfig{}, rng), {}, {}, {}};
  const auto r = advlora::eval::evaluate(untrained, f.data.test, {});
  EXPECT_LT(r.vision_to_text.recall[0], 0.03);
  EXPECT_LT(r.text_to_vision.recall[0], 0.03);
}

TEST(DualEncoder, PretrainedFixtureIsLearnable) {
  const auto& f = advlora::testing::default_fixture();
  EXPECT_TRUE(f.base.vision.frozen);
  EXPECT_TRUE(f.base.text.frozen);
  const auto r = advlora::eval::evaluate(model::AdaptedModel{f.base, {}, {}, {}}, f.data.test, {});
  EXPECT_GT(r.vision_to_text.recall[0], 0.5);
  EXPECT_GT(r.text_to_vision.recall[0], 0.5);
}

TEST(DualEncoder, PretrainIsDeterministic) {
  const auto& f = advlora::testing::small_fixture();
  model::PretrainConfig pc;
  pc.seed = 7;
  pc.epochs = 15;
  pc.architecture.hidden_dim = 16;
  pc.architecture.embed_dim = 8;
  Rng rng = advlora::SeedTree(7).stream("init");
  auto init = model::init_dual_encoder(12, 10, pc.architecture, rng);
  EXPECT_EQ(model::pretrain(init, f.data.train, pc).model, f.base);
}
