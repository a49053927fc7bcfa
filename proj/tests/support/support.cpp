// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

#include "advlora/rng.hpp"

namespace advlora::testing {

Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_rel_error(const Tensor& a, const Tensor& b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
  return worst;
}

namespace ad = advlora::autodiff;

ad::Var RandomGraph::build(ad::Graph& g, std::vector<ad::Var>* leaves, std::size_t override_index,
                           const Tensor* override_value) const {
  Rng rng(seed_);
  std::size_t next_leaf = 0;
  auto leaf = [&](Shape shape, double scale) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = scale * rng.normal();
    if (next_leaf == override_index) t = *override_value;
    ++next_leaf;
    ad::Var v = g.parameter(std::move(t));
    if (leaves != nullptr) leaves->push_back(v);
    return v;
  };
  auto dim = [&] { return static_cast<std::size_t>(2 + rng.below(3)); };

  const std::size_t r = dim();
  std::size_t c = dim();
  ad::Var cur = leaf({r, c}, 1.0);
  const std::size_t depth = 2 + rng.below(5);
  for (std::size_t step = 0; step < depth; ++step) {
    switch (rng.below(10)) {
      case 0:
        cur = ad::tanh(cur);
        break;
      case 1:
        cur = ad::exp(0.5 * cur);
        break;
      case 2:
        cur = ad::log(ad::add(ad::mul(cur, cur), g.constant(Tensor::full(cur.shape(), 1.0))));
        break;
      case 3:
        cur = ad::add(cur, leaf({c}, 1.0));
        break;
      case 4:
        cur = ad::sub(cur, leaf({r, c}, 1.0));
        break;
      case 5:
        cur = ad::mul(cur, leaf({r, c}, 1.0));
        break;
      case 6:
        cur = ad::mul(cur, leaf({}, 1.0));
        break;
      case 7: {
        const std::size_t c2 = dim();
        cur = ad::matmul(cur, leaf({c, c2}, 0.7));
        c = c2;
        break;
      }
      case 8:
        cur = ad::l2_normalize_rows(cur);
        break;
      default:
        // [r x c] -> [c x c]
        cur = ad::matmul(ad::transpose(cur), leaf({r, c}, 0.7));
        cur = ad::matmul(leaf({r, c}, 0.7), cur);
        break;
    }
  }
  switch (rng.below(4)) {
    case 0:
      return ad::sum(cur);
    case 1:
      return ad::mean(cur);
    case 2:
      return ad::sum(ad::logsumexp_rows(cur));
    default:
      // Square it up first so the diagonal exists.
      return ad::sum(ad::diagonal(ad::matmul(cur, ad::transpose(cur))));
  }
}

double RandomGraph::gradient_error(std::size_t* entries_checked) const {
  ad::Graph g;
  std::vector<ad::Var> leaves;
  const ad::Var loss = build(g, &leaves);
  const ad::GradientMap grads = g.backward(loss);
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto f = [&](const Tensor& x) {
      ad::Graph h;
      return h.value(build(h, nullptr, i, &x)).item();
    };
    const Tensor fd = finite_difference(f, g.value(leaves[i]), 1e-5);
    worst = std::max(worst, max_rel_error(grads[leaves[i]], fd));
    checked += fd.size();
  }
  if (entries_checked != nullptr) *entries_checked = checked;
  return worst;
}

std::vector<double> singular_values(const Tensor& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(e);
  const auto& s = svd.singularValues();
  return {s.data(), s.data() + s.size()};
}

double eckart_young_bound(const Tensor& w, std::size_t k) {
  const auto s = singular_values(w);
  double tail = 0.0;
  for (std::size_t i = k; i < s.size(); ++i) tail += s[i] * s[i];
  return tail;
}

namespace {

double objective_of(const Tensor& w, const std::vector<std::size_t>& label, std::size_t k) {
  const std::size_t n = w.cols();
  std::vector<std::vector<double>> sums(k, std::vector<double>(n, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    ++counts[label[i]];
    for (std::size_t d = 0; d < n; ++d) sums[label[i]][d] += w(i, d);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t d = 0; d < n; ++d) {
      const double mean = sums[label[i]][d] / static_cast<double>(counts[label[i]]);
      total += (w(i, d) - mean) * (w(i, d) - mean);
    }
  return total;
}

}  // namespace

double brute_force_kmeans(const Tensor& w, std::size_t k) {
  const std::size_t m = w.rows();
  std::vector<std::size_t> label(m, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    best = std::min(best, objective_of(w, label, k));
    std::size_t i = 0;
    while (i < m && ++label[i] == k) label[i++] = 0;
    if (i == m) break;
  }
  return best;
}

Tensor plus_plus_seeds(const Tensor& w, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t m = w.rows();
  auto d2 = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) s += (w(i, c) - w(j, c)) * (w(i, c) - w(j, c));
    return s;
  };
  std::vector<std::size_t> chosen = {static_cast<std::size_t>(rng.below(m))};
  while (chosen.size() < k) {
    std::vector<double> weight(m);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      weight[i] = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) weight[i] = std::min(weight[i], d2(i, c));
      total += weight[i];
    }
    std::size_t pick = m - 1;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < m; ++i) {
        if (u < weight[i]) {
          pick = i;
          break;
        }
        u -= weight[i];
      }
    } else {
      pick = rng.below(m);
    }
    chosen.push_back(pick);
  }
  Tensor centers({k, w.cols()});
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t c = 0; c < w.cols(); ++c) centers(j, c) = w(chosen[j], c);
  return centers;
}

double reference_lloyd(const Tensor& w, Tensor centers, std::size_t max_iter) {
  const std::size_t m = w.rows(), n = w.cols(), k = centers.rows();
  std::vector<std::size_t> label(m, k);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        double d = 0.0;
        for (std::size_t c = 0; c < n; ++c) d += (w(i, c) - centers(j, c)) * (w(i, c) - centers(j, c));
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      changed |= label[i] != best;
      label[i] = best;
    }
    if (!changed) break;
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t count = 0;
      std::vector<double> s(n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        if (label[i] == j) {
          ++count;
          for (std::size_t c = 0; c < n; ++c) s[c] += w(i, c);
        }
      if (count == 0) continue;
      for (std::size_t c = 0; c < n; ++c) centers(j, c) = s[c] / static_cast<double>(count);
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < n; ++c) total += (w(i, c) - centers(label[i], c)) * (w(i, c) - centers(label[i], c));
  return total;
}

std::size_t reference_rank(const Tensor& sim, std::size_t i) {
  const double target = sim(i, i);
  std::size_t rank = 0;
  for (std::size_t j = 0; j < sim.cols(); ++j)
    if (sim(i, j) > target || (sim(i, j) == target && j < i)) ++rank;
  return rank;
}

namespace {

Fixture build(const data::GeneratorParams& gp, const model::PretrainConfig& pc) {
  Fixture f;
  f.data = data::generate(gp, 7);
  Rng rng = SeedTree(7).stream("init");
  auto init = model::init_dual_encoder(gp.d_v, gp.d_w, pc.architecture, rng);
  f.base = model::pretrain(std::move(init), f.data.train, pc).model;
  return f;
}

}  // namespace

const Fixture& default_fixture() {
  static const Fixture f = [] {
    model::PretrainConfig pc;
    pc.seed = 7;
    return build(data::GeneratorParams{}, pc);
  }();
  return f;
}

const Fixture& small_fixture() {
  static const Fixture f = [] {
    data::GeneratorParams gp;
    gp.num_classes = 8;
    gp.d_latent = 6;
    gp.d_v = 12;
    gp.d_w = 10;
    gp.n_train = 240;
    gp.n_val = 60;
    gp.n_test = 60;
    model::PretrainConfig pc;
    pc.seed = 7;
    pc.epochs = 15;
    pc.architecture.hidden_dim = 16;
    pc.architecture.embed_dim = 8;
    return build(gp, pc);
  }();
  return f;
}

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

}  // namespace advlora::testing
