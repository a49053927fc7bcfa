// SPDX-License-Identifier: Apache-2.0

#include "advlora/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advlora/binary_io.hpp"
#include "advlora/error.hpp"
#include "advlora/rng.hpp"

namespace advlora::data {

namespace {

constexpr io::Magic kMagic = {'A', 'D', 'V', 'L'};
constexpr std::uint16_t kVersion = 1;

Tensor gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Tensor t({rows, cols});
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

// Class labels for one split: round-robin then shuffled, so every class count
// is within one of uniform.
std::vector<std::uint32_t> balanced_labels(Rng& rng, std::size_t n, std::uint32_t num_classes) {
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint32_t>(i % num_classes);
  auto perm = rng.permutation(n);
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = labels[perm[i]];
  return out;
}

}  // namespace

std::string to_string(SplitKind s) {
  switch (s) {
    case SplitKind::kTrain:
      return "train";
    case SplitKind::kVal:
      return "val";
    case SplitKind::kTest:
      return "test";
  }
  return "unknown";
}

void GeneratorParams::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (d_latent == 0 || d_v == 0 || d_w == 0) throw ConfigError("dimensions must be positive");
  if (d_latent > std::min(d_v, d_w)) throw ConfigError("d_latent must not exceed min(d_v, d_w)");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
  if (!(pair_jitter >= 0.0) || !std::isfinite(pair_jitter)) throw ConfigError("pair_jitter must be >= 0");
  if (n_train < 2 || n_val < 2 || n_test < 2) throw ConfigError("each split needs at least 2 samples");
}

PairedSample DatasetSplit::sample(std::size_t i) const {
  PairedSample s;
  auto v = view_v.row(i);
  auto w = view_w.row(i);
  s.view_v.assign(v.begin(), v.end());
  s.view_w.assign(w.begin(), w.end());
  s.latent_id = latent_id.at(i);
  s.pair_id = pair_id.at(i);
  return s;
}

DatasetSplit DatasetSplit::select(std::span<const std::size_t> indices) const {
  DatasetSplit out;
  out.split = split;
  out.generator_seed = generator_seed;
  out.params = params;
  out.squash_lo = squash_lo;
  out.squash_hi = squash_hi;
  out.view_v = gather_rows(view_v, indices);
  out.view_w = gather_rows(view_w, indices);
  for (std::size_t i : indices) {
    out.latent_id.push_back(latent_id.at(i));
    out.pair_id.push_back(pair_id.at(i));
  }
  return out;
}

Dataset generate(const GeneratorParams& params, std::uint64_t seed) {
  params.validate();
  Rng rng = SeedTree(seed).stream("data");

  const std::size_t dl = params.d_latent;
  const Tensor centers = gaussian(rng, params.num_classes, dl, 1.0);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(dl));
  const Tensor map_v = gaussian(rng, dl, params.d_v, map_scale);
  const Tensor map_w = gaussian(rng, dl, params.d_w, map_scale);
  const double sigma = params.noise_sigma;
  const double jitter = params.pair_jitter * sigma;

  const std::array<std::pair<SplitKind, std::size_t>, 3> layout = {{
      {SplitKind::kTrain, params.n_train},
      {SplitKind::kVal, params.n_val},
      {SplitKind::kTest, params.n_test},
  }};

  std::array<DatasetSplit, 3> splits;
  std::uint64_t next_pair_id = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < layout.size(); ++s) {
    const auto [kind, n] = layout[s];
    DatasetSplit& split = splits[s];
    split.split = kind;
    split.generator_seed = seed;
    split.params = params;
    split.latent_id = balanced_labels(rng, n, params.num_classes);
    split.view_v = Tensor({n, params.d_v});
    split.view_w = Tensor({n, params.d_w});
    Tensor z({1, dl});
    for (std::size_t i = 0; i < n; ++i) {
      split.pair_id.push_back(next_pair_id++);
      const auto center = centers.row(split.latent_id[i]);
      for (std::size_t d = 0; d < dl; ++d) z[d] = center[d] + jitter * rng.normal();
      const Tensor raw_v = matmul(z, map_v);
      const Tensor raw_w = matmul(z, map_w);
      auto out_v = split.view_v.row(i);
      auto out_w = split.view_w.row(i);
      for (std::size_t d = 0; d < params.d_v; ++d) out_v[d] = raw_v[d] + sigma * rng.normal();
      for (std::size_t d = 0; d < params.d_w; ++d) out_w[d] = raw_w[d] + sigma * rng.normal();
    }
    for (double v : split.view_v.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }

  // One squash map for every split generated together, so the same raw value
  // lands on the same pixel value in train and test.
  const double range = hi > lo ? hi - lo : 1.0;
  for (auto& split : splits) {
    split.squash_lo = lo;
    split.squash_hi = lo + range;
    for (double& v : split.view_v.data()) v = std::clamp((v - lo) / range, 0.0, 1.0);
  }
  return Dataset{std::move(splits[0]), std::move(splits[1]), std::move(splits[2])};
}

std::vector<std::uint8_t> encode(const DatasetSplit& split) {
  io::BinaryWriter w;
  w.magic(kMagic);
  w.u16(kVersion);
  w.u8(static_cast<std::uint8_t>(split.split));
  w.u64(split.generator_seed);
  const auto& p = split.params;
  w.u32(p.num_classes);
  w.u32(p.d_latent);
  w.u32(p.d_v);
  w.u32(p.d_w);
  w.f64(p.noise_sigma);
  w.f64(p.pair_jitter);
  w.u32(p.n_train);
  w.u32(p.n_val);
  w.u32(p.n_test);
  w.f64(split.squash_lo);
  w.f64(split.squash_hi);
  w.u64(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    w.u64(split.pair_id[i]);
    w.u32(split.latent_id[i]);
  }
  w.f64s(split.view_v.data());
  w.f64s(split.view_w.data());
  return w.buffer();
}

DatasetSplit decode(std::span<const std::uint8_t> bytes) {
  io::BinaryReader r(bytes);
  r.expect_magic(kMagic);
  const std::uint64_t version_at = r.offset();
  if (r.u16() != kVersion) throw FormatError("unsupported dataset version", version_at);

  DatasetSplit split;
  const std::uint64_t kind_at = r.offset();
  const std::uint8_t kind = r.u8();
  if (kind > 2) throw FormatError("unknown split kind " + std::to_string(kind), kind_at);
  split.split = static_cast<SplitKind>(kind);
  split.generator_seed = r.u64();
  auto& p = split.params;
  p.num_classes = r.u32();
  p.d_latent = r.u32();
  p.d_v = r.u32();
  p.d_w = r.u32();
  p.noise_sigma = r.f64();
  p.pair_jitter = r.f64();
  p.n_train = r.u32();
  p.n_val = r.u32();
  p.n_test = r.u32();
  split.squash_lo = r.f64();
  split.squash_hi = r.f64();
  const std::uint64_t count_at = r.offset();
  const std::uint64_t n = r.u64();
  const std::uint64_t per_sample = 12 + 8 * (static_cast<std::uint64_t>(p.d_v) + p.d_w);
  if (n != 0 && per_sample != 0 && r.remaining() / per_sample < n)
    throw FormatError("sample count " + std::to_string(n) + " exceeds file size", count_at);
  split.pair_id.resize(n);
  split.latent_id.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    split.pair_id[i] = r.u64();
    split.latent_id[i] = r.u32();
  }
  split.view_v = Tensor({n, p.d_v});
  split.view_w = Tensor({n, p.d_w});
  r.f64s(split.view_v.data());
  r.f64s(split.view_w.data());
  if (!r.at_end()) r.fail("trailing bytes after dataset payload");
  return split;
}

void save(const DatasetSplit& split, const std::filesystem::path& path) { io::write_file(path, encode(split)); }

DatasetSplit load(const std::filesystem::path& path) { return decode(io::read_file(path)); }

}  // namespace advlora::data

namespace advlora::data {

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  const auto order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace advlora::data
