// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advlora/attack.hpp"
#include "advlora/dataset.hpp"
#include "advlora/dual_encoder.hpp"
#include "advlora/tensor.hpp"

namespace advlora::eval {

enum class Direction : std::uint8_t { kVisionToText, kTextToVision };

std::string to_string(Direction d);

inline constexpr std::array<std::size_t, 3> kRecallCutoffs = {1, 5, 10};

struct RetrievalReport {
  Direction direction = Direction::kVisionToText;
  // Recall@1, @5, @10 as fractions.
  std::array<double, 3> recall{};
  double r_mean = 0.0;
  std::string condition = "natural";
  std::uint64_t seed = 0;
  std::string method;
};

struct ReportPair {
  RetrievalReport vision_to_text;
  RetrievalReport text_to_vision;

  // Average R@Mean over both directions (the "Mean" column).
  double mean() const { return 0.5 * (vision_to_text.r_mean + text_to_vision.r_mean); }
};

// Fraction of query rows whose diagonal entry ranks in the top k of its row.
// Ties go to the lower gallery index.
double recall_at_k(const Tensor& sim, std::size_t k);

// 0-based rank of the diagonal entry within row i.
std::size_t rank_of_match(const Tensor& sim, std::size_t i);

RetrievalReport report_from_similarity(const Tensor& sim, Direction direction);

struct EvalOptions {
  std::optional<attack::AttackSpec> attack;
  double temperature = 0.07;
  std::uint64_t seed = 0;
  std::string method;
};

// Embeds the whole split (attacking its vision views first when an attack is
// given, with the split as one batch) and scores retrieval both ways.
ReportPair evaluate(const model::AdaptedModel& model, const data::DatasetSplit& split, const EvalOptions& options);

std::string csv_header();
std::string csv_row(const RetrievalReport& report);
// One row per (method, condition) with both directions averaged.
std::string mean_table_header();
std::string mean_table_row(const ReportPair& pair);

}  // namespace advlora::eval
