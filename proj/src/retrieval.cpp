// SPDX-License-Identifier: Apache-2.0

#include "advlora/retrieval.hpp"

#include <cstdio>

#include "advlora/error.hpp"

namespace advlora::eval {

std::string to_string(Direction d) { return d == Direction::kVisionToText ? "v2w" : "w2v"; }

std::size_t rank_of_match(const Tensor& sim, std::size_t i) {
  const double target = sim(i, i);
  std::size_t rank = 0;
  for (std::size_t j = 0; j < sim.cols(); ++j) {
    const double s = sim(i, j);
    if (s > target || (s == target && j < i)) ++rank;
  }
  return rank;
}

double recall_at_k(const Tensor& sim, std::size_t k) {
  if (sim.rank() != 2 || sim.rows() != sim.cols() || sim.rows() == 0)
    throw DimensionError("recall needs a non-empty square similarity matrix");
  if (k == 0 || k > sim.rows())
    throw ConfigError("recall@" + std::to_string(k) + " undefined for " + std::to_string(sim.rows()) + " items");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sim.rows(); ++i)
    if (rank_of_match(sim, i) < k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(sim.rows());
}

RetrievalReport report_from_similarity(const Tensor& sim, Direction direction) {
  RetrievalReport report;
  report.direction = direction;
  if (sim.rank() != 2 || sim.rows() != sim.cols()) throw DimensionError("retrieval needs a square similarity matrix");
  if (sim.rows() < kRecallCutoffs.back())
    throw ConfigError("retrieval report needs at least " + std::to_string(kRecallCutoffs.back()) + " items");
  const Tensor oriented = direction == Direction::kVisionToText ? sim : transpose(sim);
  // A single pass over ranks gives all three cutoffs.
  std::array<std::size_t, 3> hits{};
  for (std::size_t i = 0; i < oriented.rows(); ++i) {
    const std::size_t r = rank_of_match(oriented, i);
    for (std::size_t c = 0; c < kRecallCutoffs.size(); ++c)
      if (r < kRecallCutoffs[c]) ++hits[c];
  }
  for (std::size_t c = 0; c < kRecallCutoffs.size(); ++c)
    report.recall[c] = static_cast<double>(hits[c]) / static_cast<double>(oriented.rows());
  report.r_mean = (report.recall[0] + report.recall[1] + report.recall[2]) / 3.0;
  return report;
}

ReportPair evaluate(const model::AdaptedModel& model, const data::DatasetSplit& split, const EvalOptions& options) {
  Tensor v = split.view_v;
  std::string condition = "natural";
  if (options.attack) {
    Rng rng = SeedTree(options.seed).stream("attack");
    v = attack::attack_batch(model, split.view_v, split.view_w, *options.attack, options.temperature, rng).v_adv;
    condition = "attacked:" + options.attack->label();
  }
  const Tensor zv = model::embed(model, Modality::kVision, v);
  const Tensor zw = model::embed(model, Modality::kText, split.view_w);
  const Tensor sim = model::similarity_matrix(zv, zw);

  ReportPair pair{report_from_similarity(sim, Direction::kVisionToText),
                  report_from_similarity(sim, Direction::kTextToVision)};
  for (auto* r : {&pair.vision_to_text, &pair.text_to_vision}) {
    r->condition = condition;
    r->seed = options.seed;
    r->method = options.method;
  }
  return pair;
}

namespace {

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// Conditions contain commas inside the parameter list; quote them.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string csv_header() { return "method,condition,direction,r1,r5,r10,rmean,seed"; }

std::string csv_row(const RetrievalReport& r) {
  return csv_field(r.method) + "," + csv_field(r.condition) + "," + to_string(r.direction) + "," +
         fmt6(r.recall[0]) + "," + fmt6(r.recall[1]) + "," + fmt6(r.recall[2]) + "," + fmt6(r.r_mean) + "," +
         std::to_string(r.seed);
}

std::string mean_table_header() {
  return "method,condition,v2w_r1,v2w_r5,v2w_r10,w2v_r1,w2v_r5,w2v_r10,mean,seed";
}

std::string mean_table_row(const ReportPair& p) {
  const auto& a = p.vision_to_text;
  const auto& b = p.text_to_vision;
  return csv_field(a.method) + "," + csv_field(a.condition) + "," + fmt6(a.recall[0]) + "," + fmt6(a.recall[1]) + "," +
         fmt6(a.recall[2]) + "," + fmt6(b.recall[0]) + "," + fmt6(b.recall[1]) + "," + fmt6(b.recall[2]) + "," +
         fmt6(p.mean()) + "," + std::to_string(a.seed);
}

}  // namespace advlora::eval
