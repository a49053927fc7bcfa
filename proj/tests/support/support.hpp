// SPDX-License-Identifier: Apache-2.0

// Reference computations used by both the unit tests and the acceptance
// binary. Nothing here calls into the code it is used to check, except to
// evaluate the function being differentiated.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "advlora/autodiff.hpp"
#include "advlora/dataset.hpp"
#include "advlora/dual_encoder.hpp"
#include "advlora/tensor.hpp"

namespace advlora::testing {

// Central differences of f at x, one coordinate at a time.
Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-6);

// max |a - b| / max(|a|, |b|, floor), elementwise.
double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-3);

// A random expression over a few small leaves, reduced to a scalar. The
// structure depends only on the seed, so the same program can be rebuilt with
// one leaf replaced, which is what the finite-difference check needs.
class RandomGraph {
 public:
  explicit RandomGraph(std::uint64_t seed) : seed_(seed) {}

  // Leaf `override_index` (if any) takes `override_value` instead of its own.
  autodiff::Var build(autodiff::Graph& g, std::vector<autodiff::Var>* leaves = nullptr,
                      std::size_t override_index = SIZE_MAX, const Tensor* override_value = nullptr) const;
  // Worst relative error of backward() against central differences over
  // every leaf entry.
  double gradient_error(std::size_t* entries_checked = nullptr) const;

 private:
  std::uint64_t seed_;
};

// Singular values, largest first (Eigen JacobiSVD).
std::vector<double> singular_values(const Tensor& m);
// min over rank-k products of ||W - AB||_F^2, i.e. sum of sigma_i^2 for i > k.
double eckart_young_bound(const Tensor& w, std::size_t k);

// Smallest k-means objective over every assignment of rows to k labels
// (m <= 10 or so).
double brute_force_kmeans(const Tensor& w, std::size_t k);

// The k-means++ centers a run seeded with `seed` starts from: the first row
// uniformly, each further row with probability proportional to its squared
// distance to the nearest chosen row.
Tensor plus_plus_seeds(const Tensor& w, std::size_t k, std::uint64_t seed);

// Plain Lloyd iteration from given centers; assignment ties go to the lowest
// index. Returns the objective at the fixed point.
double reference_lloyd(const Tensor& w, Tensor centers, std::size_t max_iter = 1000);

// Rank of row i's diagonal entry with ties broken toward lower column index,
// by counting.
std::size_t reference_rank(const Tensor& sim, std::size_t i);

struct Fixture {
  data::Dataset data;
  model::DualEncoder base;
};

// The default generator and pretraining setup with data and init seed 7.
const Fixture& default_fixture();
// A much smaller problem for unit tests that only need a trained model.
const Fixture& small_fixture();

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0);

}  // namespace advlora::testing
