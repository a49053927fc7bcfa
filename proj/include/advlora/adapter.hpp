// SPDX-License-Identifier: Apache-2.0

// Low-rank adapters for a frozen dense weight W0 (m x n):
//
//   Y = X W0 + alpha * X A B,   A: m x k,  B: k x n.
//
// Besides the usual Gaussian/zero initialization, an adapter can be built from
// the weight itself: the m rows of W0 are clustered into k groups, the
// row-to-center distance matrix D (m x k) becomes A and the stacked centers
// C (k x n) become B. An optional alignment pass then runs gradient descent on
// ||W0 - AB||_F^2 so that AB starts out close to W0.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "advlora/layer_id.hpp"
#include "advlora/rng.hpp"
#include "advlora/tensor.hpp"

namespace advlora::adapter {

enum class InitKind : std::uint8_t {
  kStandard = 0,
  kCluster = 1,
  kClusterAligned = 2,
  // Standard init followed by alignment (alignment toggled on without clustering).
  kStandardAligned = 3,
};

std::string to_string(InitKind kind);

struct LoraAdapter {
  Tensor a;                      // m x k
  Tensor b;                      // k x n
  Tensor alpha = Tensor::scalar(1.0);
  bool alpha_trainable = false;
  InitKind init_kind = InitKind::kStandard;
  LayerId target;

  std::size_t rank() const { return a.cols(); }
  std::size_t in_dim() const { return a.rows(); }
  std::size_t out_dim() const { return b.cols(); }
  // Throws DimensionError unless A: m x k, B: k x n with k <= min(m, n).
  void validate() const;
  // A and B entries; alpha is reported separately.
  std::size_t factor_parameter_count() const { return a.size() + b.size(); }

  bool operator==(const LoraAdapter&) const = default;
};

// A ~ N(0, sigma^2), B = 0, alpha fixed at 1.
LoraAdapter init_standard(std::size_t m, std::size_t n, std::size_t k, double sigma, Rng& rng, LayerId target = {});

enum class Seeding : std::uint8_t { kPlusPlus, kUniform };

struct KMeansParams {
  std::size_t max_iter = 100;
  // Stop once no center moves farther than this.
  double tol = 1e-10;
  // Independent seedings; the lowest objective wins (earliest on ties).
  std::size_t restarts = 10;
  Seeding seeding = Seeding::kPlusPlus;
};

struct ClusterResult {
  Tensor centers;                         // k x n
  std::vector<std::uint32_t> assignment;  // per row of W0
  Tensor distances;                       // m x k, Euclidean row-to-center
  std::size_t iterations = 0;
  bool converged = false;
  // Sum of squared distances of rows to their assigned centers.
  double objective = 0.0;
  // Objective after each center update of the winning run.
  std::vector<double> objective_history;
};

// Lloyd's algorithm over the rows of w0. Distance ties go to the lowest
// cluster index; a cluster left empty takes the row farthest from its center.
ClusterResult kmeans(const Tensor& w0, std::size_t k, const KMeansParams& params, std::uint64_t seed);

// Objective of a fixed assignment with centers at the cluster means.
double kmeans_objective(const Tensor& w0, std::span<const std::uint32_t> assignment, std::size_t k);

// A := D, B := C from k-means on the rows of w0.
LoraAdapter init_cluster(const Tensor& w0, std::size_t k, const KMeansParams& params, std::uint64_t seed,
                         double alpha_init, bool alpha_trainable, LayerId target = {});

struct AlignParams {
  double lr = 1e-3;
  std::size_t max_steps = 1000;
  double rel_tol = 1e-6;
};

struct AlignReport {
  // Gradient steps attempted, including rejected ones.
  std::size_t steps = 0;
  std::size_t accepted_steps = 0;
  // Stopped on the relative-improvement criterion (or an exact fit).
  bool reached_tolerance = false;
  // Loss before the first step, then after every accepted step.
  std::vector<double> loss_history;
  double initial_loss() const { return loss_history.front(); }
  double final_loss() const { return loss_history.back(); }
};

double alignment_loss(const Tensor& a, const Tensor& b, const Tensor& w0);

// Gradient descent on ||W0 - AB||_F^2, updating the adapter's A and B in
// place. A step that would raise the loss is rejected and the step size
// halved, so accepted losses never increase.
AlignReport align(LoraAdapter& adapter, const Tensor& w0, const AlignParams& params);

// alpha * X A B.
Tensor forward_contribution(const LoraAdapter& adapter, const Tensor& x);

// W0 + alpha * A B.
Tensor merge(const LoraAdapter& adapter, const Tensor& w0);

}  // namespace advlora::adapter
