// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace advlora {

// Portable random source. Wraps mt19937_64 (whose output sequence is fixed by
// the standard) and does its own conversion to doubles, so draws are
// bit-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

// Derives independent named sub-streams ("data", "init", "attack", "shuffle",
// ...) from one root seed.
class SeedTree {
 public:
  explicit SeedTree(std::uint64_t root) : root_(root) {}

  std::uint64_t root() const { return root_; }
  std::uint64_t seed_for(std::string_view stream) const;
  Rng stream(std::string_view name) const { return Rng(seed_for(name)); }
  SeedTree child(std::string_view name) const { return SeedTree(seed_for(name)); }

 private:
  std::uint64_t root_;
};

}  // namespace advlora
