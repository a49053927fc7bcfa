// SPDX-License-Identifier: Apache-2.0

#include "advlora/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advlora/error.hpp"

namespace advlora::adapter {

namespace {

double squared_distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

Tensor distance_matrix(const Tensor& w0, const Tensor& centers) {
  const std::size_t m = w0.rows(), k = centers.rows();
  Tensor d({m, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) d(i, j) = std::sqrt(squared_distance(w0.row(i), centers.row(j)));
  return d;
}

std::uint32_t row_argmin(std::span<const double> row) {
  std::uint32_t best = 0;
  for (std::uint32_t j = 1; j < row.size(); ++j)
    if (row[j] < row[best]) best = j;
  return best;
}

Tensor seed_centers(const Tensor& w0, std::size_t k, Seeding seeding, Rng& rng) {
  const std::size_t m = w0.rows();
  std::vector<std::size_t> chosen;
  if (seeding == Seeding::kUniform) {
    auto perm = rng.permutation(m);
    chosen.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    chosen.push_back(rng.below(m));
    std::vector<double> nearest(m, std::numeric_limits<double>::infinity());
    while (chosen.size() < k) {
      double total = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        nearest[i] = std::min(nearest[i], squared_distance(w0.row(i), w0.row(chosen.back())));
        total += nearest[i];
      }
      std::size_t pick = m - 1;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        for (std::size_t i = 0; i < m; ++i) {
          if (u < nearest[i]) {
            pick = i;
            break;
          }
          u -= nearest[i];
        }
      } else {
        pick = rng.below(m);
      }
      chosen.push_back(pick);
    }
  }
  return gather_rows(w0, chosen);
}

Tensor cluster_means(const Tensor& w0, std::span<const std::uint32_t> assignment, std::size_t k) {
  const std::size_t n = w0.cols();
  Tensor centers({k, n});
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    auto c = centers.row(assignment[i]);
    auto w = w0.row(i);
    for (std::size_t d = 0; d < n; ++d) c[d] += w[d];
    ++counts[assignment[i]];
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] == 0) continue;
    for (double& v : centers.row(j)) v /= static_cast<double>(counts[j]);
  }
  return centers;
}

// Assigns every row to its nearest center, then gives each empty cluster the
// row farthest from its own center (taken from a cluster with >1 members).
std::vector<std::uint32_t> assign_rows(const Tensor& w0, Tensor& centers) {
  const std::size_t m = w0.rows(), k = centers.rows();
  const Tensor d = distance_matrix(w0, centers);
  std::vector<std::uint32_t> assignment(m);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < m; ++i) {
    assignment[i] = row_argmin(d.row(i));
    ++counts[assignment[i]];
  }
  std::vector<bool> moved(m, false);
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] != 0) continue;
    std::size_t far = m;
    double far_dist = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (moved[i] || counts[assignment[i]] <= 1) continue;
      const double di = d(i, assignment[i]);
      if (di > far_dist) {
        far_dist = di;
        far = i;
      }
    }
    if (far == m) break;  // fewer movable rows than clusters; k <= m rules this out
    --counts[assignment[far]];
    assignment[far] = static_cast<std::uint32_t>(j);
    counts[j] = 1;
    moved[far] = true;
    std::copy_n(w0.row(far).begin(), w0.cols(), centers.row(j).begin());
  }
  return assignment;
}

ClusterResult lloyd(const Tensor& w0, std::size_t k, const KMeansParams& params, Rng& rng) {
  ClusterResult result;
  Tensor centers = seed_centers(w0, k, params.seeding, rng);
  std::vector<std::uint32_t> assignment;
  for (std::size_t it = 0; it < params.max_iter; ++it) {
    assignment = assign_rows(w0, centers);
    Tensor updated = cluster_means(w0, assignment, k);
    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) shift = std::max(shift, std::sqrt(squared_distance(updated.row(j), centers.row(j))));
    centers = std::move(updated);
    result.iterations = it + 1;
    result.objective_history.push_back(kmeans_objective(w0, assignment, k));
    if (shift <= params.tol) {
      result.converged = true;
      break;
    }
  }
  result.distances = distance_matrix(w0, centers);
  result.assignment.resize(w0.rows());
  for (std::size_t i = 0; i < w0.rows(); ++i) result.assignment[i] = row_argmin(result.distances.row(i));
  result.centers = std::move(centers);
  result.objective = 0.0;
  for (std::size_t i = 0; i < w0.rows(); ++i) {
    const double d = result.distances(i, result.assignment[i]);
    result.objective += d * d;
  }
  return result;
}

}  // namespace

std::string to_string(InitKind kind) {
  switch (kind) {
    case InitKind::kStandard:
      return "standard";
    case InitKind::kCluster:
      return "cluster";
    case InitKind::kClusterAligned:
      return "cluster+aligned";
    case InitKind::kStandardAligned:
      return "standard+aligned";
  }
  return "unknown";
}

void LoraAdapter::validate() const {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("adapter factors " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) +
                         " do not compose");
  if (rank() == 0 || rank() > std::min(in_dim(), out_dim()))
    throw DimensionError("adapter rank " + std::to_string(rank()) + " must be in [1, min(m, n)]");
  if (alpha.size() != 1) throw DimensionError("adapter alpha must be a scalar");
}

LoraAdapter init_standard(std::size_t m, std::size_t n, std::size_t k, double sigma, Rng& rng, LayerId target) {
  if (k == 0 || k > std::min(m, n))
    throw ConfigError("rank " + std::to_string(k) + " invalid for a " + std::to_string(m) + "x" + std::to_string(n) +
                      " weight");
  if (!(sigma > 0.0)) throw ConfigError("init sigma must be positive");
  LoraAdapter adapter;
  adapter.a = Tensor({m, k});
  for (double& v : adapter.a.data()) v = rng.normal(0.0, sigma);
  adapter.b = Tensor({k, n});
  adapter.alpha = Tensor::scalar(1.0);
  adapter.alpha_trainable = false;
  adapter.init_kind = InitKind::kStandard;
  adapter.target = target;
  return adapter;
}

double kmeans_objective(const Tensor& w0, std::span<const std::uint32_t> assignment, std::size_t k) {
  const Tensor centers = cluster_means(w0, assignment, k);
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += squared_distance(w0.row(i), centers.row(assignment[i]));
  return total;
}

ClusterResult kmeans(const Tensor& w0, std::size_t k, const KMeansParams& params, std::uint64_t seed) {
  if (w0.rank() != 2) throw DimensionError("kmeans expects a matrix");
  if (k == 0 || k > w0.rows())
    throw ConfigError("cannot form " + std::to_string(k) + " clusters from " + std::to_string(w0.rows()) + " rows");
  if (!w0.all_finite()) throw ConfigError("kmeans input contains non-finite values");
  if (params.max_iter == 0) throw ConfigError("kmeans max_iter must be positive");
  Rng rng(seed);
  ClusterResult best;
  const std::size_t restarts = std::max<std::size_t>(1, params.restarts);
  for (std::size_t r = 0; r < restarts; ++r) {
    ClusterResult run = lloyd(w0, k, params, rng);
    if (r == 0 || run.objective < best.objective) best = std::move(run);
  }
  return best;
}

LoraAdapter init_cluster(const Tensor& w0, std::size_t k, const KMeansParams& params, std::uint64_t seed,
                         double alpha_init, bool alpha_trainable, LayerId target) {
  if (w0.rank() != 2 || k == 0 || k > std::min(w0.rows(), w0.cols()))
    throw ConfigError("rank " + std::to_string(k) + " invalid for weight " + shape_to_string(w0.shape()));
  ClusterResult clusters = kmeans(w0, k, params, seed);
  LoraAdapter adapter;
  adapter.a = std::move(clusters.distances);
  adapter.b = std::move(clusters.centers);
  adapter.alpha = Tensor::scalar(alpha_init);
  adapter.alpha_trainable = alpha_trainable;
  adapter.init_kind = InitKind::kCluster;
  adapter.target = target;
  return adapter;
}

double alignment_loss(const Tensor& a, const Tensor& b, const Tensor& w0) {
  const Tensor ab = matmul(a, b);
  if (ab.shape() != w0.shape())
    throw DimensionError("AB " + shape_to_string(ab.shape()) + " vs W0 " + shape_to_string(w0.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < ab.size(); ++i) {
    const double r = w0[i] - ab[i];
    s += r * r;
  }
  return s;
}

AlignReport align(LoraAdapter& adapter, const Tensor& w0, const AlignParams& params) {
  adapter.validate();
  if (w0.rank() != 2 || w0.rows() != adapter.in_dim() || w0.cols() != adapter.out_dim())
    throw DimensionError("alignment target " + shape_to_string(w0.shape()) + " does not match adapter");
  if (!(params.lr > 0.0)) throw ConfigError("alignment lr must be positive");

  AlignReport report;
  double loss = alignment_loss(adapter.a, adapter.b, w0);
  if (!std::isfinite(loss)) throw OptimizationError("alignment loss is not finite at the start");
  report.loss_history.push_back(loss);
  adapter.init_kind = adapter.init_kind == InitKind::kStandard ? InitKind::kStandardAligned : InitKind::kClusterAligned;
  if (loss == 0.0) {
    report.reached_tolerance = true;
    return report;
  }

  double lr = params.lr;
  Tensor& a = adapter.a;
  Tensor& b = adapter.b;
  while (report.steps < params.max_steps) {
    ++report.steps;
    // Residual R = W0 - AB; dL/dA = -2 R B^T, dL/dB = -2 A^T R.
    Tensor residual = matmul(a, b);
    for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = w0[i] - residual[i];
    const Tensor grad_a = matmul(residual, transpose(b));
    const Tensor grad_b = matmul(transpose(a), residual);
    Tensor next_a = a;
    Tensor next_b = b;
    for (std::size_t i = 0; i < a.size(); ++i) next_a[i] += 2.0 * lr * grad_a[i];
    for (std::size_t i = 0; i < b.size(); ++i) next_b[i] += 2.0 * lr * grad_b[i];
    const double next_loss = alignment_loss(next_a, next_b, w0);
    if (!std::isfinite(next_loss) || next_loss > loss) {
      lr *= 0.5;
      if (lr < std::numeric_limits<double>::min()) throw OptimizationError("alignment step size underflowed");
      continue;
    }
    a = std::move(next_a);
    b = std::move(next_b);
    const double improvement = (loss - next_loss) / loss;
    loss = next_loss;
    ++report.accepted_steps;
    report.loss_history.push_back(loss);
    if (loss == 0.0 || improvement < params.rel_tol) {
      report.reached_tolerance = true;
      break;
    }
  }
  return report;
}

Tensor forward_contribution(const LoraAdapter& adapter, const Tensor& x) {
  adapter.validate();
  if (x.rank() != 2 || x.cols() != adapter.in_dim())
    throw DimensionError("adapter input " + shape_to_string(x.shape()) + " needs " + std::to_string(adapter.in_dim()) +
                         " columns");
  Tensor out = matmul(matmul(x, adapter.a), adapter.b);
  const double alpha = adapter.alpha.item();
  for (double& v : out.data()) v *= alpha;
  return out;
}

Tensor merge(const LoraAdapter& adapter, const Tensor& w0) {
  adapter.validate();
  if (w0.rank() != 2 || w0.rows() != adapter.in_dim() || w0.cols() != adapter.out_dim())
    throw DimensionError("cannot merge adapter into weight " + shape_to_string(w0.shape()));
  Tensor merged = matmul(adapter.a, adapter.b);
  const double alpha = adapter.alpha.item();
  for (std::size_t i = 0; i < merged.size(); ++i) merged[i] = w0[i] + alpha * merged[i];
  return merged;
}

}  // namespace advlora::adapter
