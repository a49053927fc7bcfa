// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "advlora/autodiff.hpp"
#include "advlora/error.hpp"
#include "support.hpp"

namespace ad = advlora::autodiff;
using advlora::Tensor;
using advlora::testing::finite_difference;
using advlora::testing::max_rel_error;
using advlora::testing::random_tensor;

namespace {

// Gradient of a unary scalar function of one leaf, by backward() and by FD.
void expect_gradient_matches(const std::function<ad::Var(ad::Graph&, ad::Var)>& fn, const Tensor& x,
                             double tol = 1e-6) {
  ad::Graph g;
  ad::Var leaf = g.parameter(x);
  const ad::GradientMap grads = g.backward(fn(g, leaf));
  auto f = [&](const Tensor& p) {
    ad::Graph h;
    return h.value(fn(h, h.parameter(p))).item();
  };
  EXPECT_LT(max_rel_error(grads[leaf], finite_difference(f, x, 1e-5)), tol);
}

}  // namespace

TEST(Autodiff, MatmulMatchesHandComputation) {
  ad::Graph g;
  ad::Var a = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  ad::Var b = g.constant(Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(ad::matmul(a, b).value(), Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST(Autodiff, SumOfProductGradientIsOtherFactor) {
  ad::Graph g;
  ad::Var a = g.parameter(Tensor::matrix({{1, 2}, {3, 4}}));
  ad::Var b = g.parameter(Tensor::matrix({{5, 6}, {7, 8}}));
  const auto grads = g.backward(ad::sum(ad::mul(a, b)));
  EXPECT_EQ(grads[a], Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(grads[b], Tensor::matrix({{1, 2}, {3, 4}}));
}

TEST(Autodiff, EachOpAgreesWithFiniteDifferences) {
  const Tensor x = random_tensor({3, 4}, 11);
  const Tensor w = random_tensor({4, 2}, 12);
  const Tensor bias = random_tensor({4}, 13);
  expect_gradient_matches([&](ad::Graph& g, ad::Var v) { return ad::sum(ad::matmul(v, g.constant(w))); }, x);
  expect_gradient_matches([&](ad::Graph&, ad::Var v) { return ad::sum(ad::mul(ad::transpose(v), ad::transpose(v))); }, x);
  expect_gradient_matches([&](ad::Graph& g, ad::Var v) { return ad::sum(ad::tanh(ad::add(v, g.constant(bias)))); }, x);
  expect_gradient_matches([&](ad::Graph& g, ad::Var v) { return ad::mean(ad::exp(ad::sub(v, g.constant(x)))); }, x);
  expect_gradient_matches([](ad::Graph& g, ad::Var v) {
    return ad::sum(ad::log(ad::add(ad::mul(v, v), g.constant(Tensor::full({3, 4}, 0.5)))));
  }, x);
  expect_gradient_matches([](ad::Graph&, ad::Var v) { return ad::sum(ad::mul(ad::l2_normalize_rows(v), v)); }, x);
  expect_gradient_matches([](ad::Graph&, ad::Var v) { return ad::sum(ad::logsumexp_rows(3.0 * v)); }, x);
  expect_gradient_matches([](ad::Graph&, ad::Var v) {
    return ad::sum(ad::diagonal(ad::matmul(v, ad::transpose(v))));
  }, x);
  // Entries of x sit well away from the relu kink.
  Tensor shifted = x;
  for (double& v : shifted.data()) v += (v >= 0 ? 0.1 : -0.1);
  expect_gradient_matches([](ad::Graph&, ad::Var v) { return ad::sum(ad::mul(ad::relu(v), ad::relu(v))); }, shifted);
}

TEST(Autodiff, ScalarBroadcastGradientSumsOverMatrix) {
  ad::Graph g;
  ad::Var s = g.parameter(Tensor::scalar(2.0));
  ad::Var m = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  const auto grads = g.backward(ad::sum(ad::mul(s, m)));
  EXPECT_DOUBLE_EQ(grads[s].item(), 10.0);
}

TEST(Autodiff, RandomGraphsAgreeWithFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 40; ++seed)
    EXPECT_LT(advlora::testing::RandomGraph(seed).gradient_error(), 1e-4) << "seed " << seed;
}

TEST(Autodiff, BackwardIsLinearInTheLoss) {
  const Tensor x = random_tensor({3, 3}, 5);
  auto grad_of = [&](double scale) {
    ad::Graph g;
    ad::Var v = g.parameter(x);
    return g.backward(scale * ad::sum(ad::tanh(ad::matmul(v, v))))[v];
  };
  const Tensor g1 = grad_of(1.0);
  const Tensor g3 = grad_of(3.0);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g3[i], 3.0 * g1[i], 1e-12);
}

TEST(Autodiff, BackwardIsDeterministic) {
  const Tensor x = random_tensor({4, 3}, 9);
  auto run = [&] {
    ad::Graph g;
    ad::Var v = g.parameter(x);
    return g.backward(ad::sum(ad::logsumexp_rows(ad::l2_normalize_rows(v))))[v];
  };
  EXPECT_EQ(run(), run());
}

TEST(Autodiff, UnreachedParameterGetsZeros) {
  ad::Graph g;
  ad::Var used = g.parameter(Tensor::vector({1, 2}));
  ad::Var unused = g.parameter(Tensor::matrix({{1, 2}, {3, 4}}));
  const auto grads = g.backward(ad::sum(used));
  EXPECT_EQ(grads[unused], Tensor::zeros({2, 2}));
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  ad::Graph g;
  ad::Var c = g.constant(Tensor::vector({1, 2}));
  ad::Var p = g.parameter(Tensor::vector({3, 4}));
  const auto grads = g.backward(ad::sum(ad::mul(c, p)));
  EXPECT_FALSE(grads.contains(c));
  EXPECT_EQ(grads[p], Tensor::vector({1, 2}));
}

TEST(Autodiff, ErrorPaths) {
  ad::Graph g;
  ad::Var a = g.constant(Tensor::zeros({2, 3}));
  ad::Var b = g.constant(Tensor::zeros({2, 3}));
  EXPECT_THROW(ad::matmul(a, b), advlora::DimensionError);
  EXPECT_THROW(ad::add(a, g.constant(Tensor::zeros({2}))), advlora::DimensionError);
  EXPECT_THROW(ad::sub(g.constant(Tensor::zeros({3})), a), advlora::DimensionError);
  EXPECT_THROW(ad::diagonal(a), advlora::DimensionError);
  EXPECT_THROW(ad::log(g.constant(Tensor::vector({1.0, 0.0}))), advlora::DomainError);
  EXPECT_THROW(ad::l2_normalize_rows(a), advlora::DegenerateInputError);
  EXPECT_THROW(g.backward(a), advlora::ContractError);
}

TEST(Autodiff, LogSumExpIsStableForLargeInputs) {
  ad::Graph g;
  ad::Var v = g.constant(Tensor::matrix({{1000.0, 1000.0}}));
  EXPECT_NEAR(ad::logsumexp_rows(v).value()[0], 1000.0 + std::log(2.0), 1e-9);
}
