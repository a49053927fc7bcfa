// SPDX-License-Identifier: Apache-2.0

// Synthetic paired two-modality data with a known latent correspondence.
//
// Each pair shares a latent code z = center[class] + jitter * sigma * e. The "pixel"
// view is squash(M_v z + sigma * n_v), affinely min-max mapped into [0, 1];
// the "text" view is M_w z + sigma * n_w. M_v and M_w are fixed random linear
// maps drawn once from the seed.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advlora/rng.hpp"
#include "advlora/tensor.hpp"

namespace advlora::data {

enum class SplitKind : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

std::string to_string(SplitKind s);

struct GeneratorParams {
  std::uint32_t num_classes = 32;
  std::uint32_t d_latent = 16;
  std::uint32_t d_v = 64;
  std::uint32_t d_w = 48;
  double noise_sigma = 0.05;
  // Per-pair latent offset, in units of noise_sigma. It is the only thing that
  // tells two pairs of the same class apart.
  double pair_jitter = 3.0;
  std::uint32_t n_train = 2000;
  std::uint32_t n_val = 500;
  std::uint32_t n_test = 500;

  void validate() const;
  bool operator==(const GeneratorParams&) const = default;
};

struct PairedSample {
  std::vector<double> view_v;
  std::vector<double> view_w;
  std::uint32_t latent_id = 0;
  std::uint64_t pair_id = 0;
};

struct DatasetSplit {
  SplitKind split = SplitKind::kTrain;
  std::uint64_t generator_seed = 0;
  GeneratorParams params;
  // Affine squash constants: view_v = (raw - lo) / (hi - lo).
  double squash_lo = 0.0;
  double squash_hi = 1.0;
  Tensor view_v;  // [N x d_v], values in [0, 1]
  Tensor view_w;  // [N x d_w]
  std::vector<std::uint32_t> latent_id;
  std::vector<std::uint64_t> pair_id;

  std::size_t size() const { return pair_id.size(); }
  PairedSample sample(std::size_t i) const;
  // Subset of rows, in the given order.
  DatasetSplit select(std::span<const std::size_t> indices) const;

  bool operator==(const DatasetSplit&) const = default;
};

struct Dataset {
  DatasetSplit train;
  DatasetSplit val;
  DatasetSplit test;
};

Dataset generate(const GeneratorParams& params, std::uint64_t seed);

void save(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit load(const std::filesystem::path& path);

std::vector<std::uint8_t> encode(const DatasetSplit& split);
DatasetSplit decode(std::span<const std::uint8_t> bytes);

}  // namespace advlora::data

namespace advlora::data {

// One epoch of mini-batches over n rows in a random order. A trailing batch
// with fewer than two rows is dropped (contrastive losses need negatives).
std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size, Rng& rng);

}  // namespace advlora::data
