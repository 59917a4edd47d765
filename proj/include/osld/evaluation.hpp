#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "osld/embeddings.hpp"

namespace osld {

using Matrix2D = std::vector<std::vector<double>>;

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, column), by row
  double total_cost = 0.0;
};

// Minimum-cost one-to-one assignment, O(n^3). Rectangular inputs are padded
// to square with (max entry + 1); padded pairs are not reported.
Assignment hungarian(const Matrix2D& cost);

enum class DegeneratePolicy { error, zero };

// Entry (j, c) = cosine(embed(discovered_texts[j]), embed(class_names[c])).
// With DegeneratePolicy::zero, rows or columns that embed to the zero vector
// get similarity 0 instead of raising.
Matrix2D similarity_matrix(const std::vector<std::string>& discovered_texts, const std::vector<std::string>& class_names,
                           const EmbeddingBackend& backend, DegeneratePolicy policy = DegeneratePolicy::error);

struct MatchResult {
  std::vector<std::string> discovered;
  std::vector<std::string> ground_truth;
  Matrix2D similarity;
  std::map<std::string, std::string> mapping;  // discovered -> ground truth
  double total_similarity = 0.0;
  std::vector<std::string> degenerate;

  nlohmann::json to_json() const;
};

// Maximises total similarity (Hungarian on negated similarities).
MatchResult match_classes(const std::vector<std::string>& discovered_ids,
                          const std::vector<std::string>& discovered_texts,
                          const std::vector<std::string>& ground_truth, const EmbeddingBackend& backend);

struct GroupMetrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

struct GroupedMetrics {
  GroupMetrics overall;
  GroupMetrics known;
  GroupMetrics unknown;
  std::map<std::string, std::map<std::string, std::size_t>> confusion;  // gold -> predicted -> count
};

// Accuracy and macro-F1 per group. Macro-F1 averages per-class F1, computed
// inside the group, over the classes present in the group's gold labels.
GroupedMetrics grouped_metrics(const std::map<std::string, std::string>& predictions,
                               const std::map<std::string, std::string>& golds, const std::set<std::string>& known,
                               const std::set<std::string>& stage_new);

GroupMetrics group_metrics(const std::vector<std::string>& predicted, const std::vector<std::string>& gold);

struct StageEvaluation {
  int stage = 0;
  std::size_t discovered_k = 0;
  bool discovery_failed = false;
  std::string failure_reason;
  GroupedMetrics metrics;
  MatchResult match;
};

struct EvaluationReport {
  std::string method;
  std::string backend;
  std::uint64_t seed = 0;
  double validation_accuracy = 0.0;
  std::vector<StageEvaluation> stages;

  nlohmann::json to_json() const;
  static EvaluationReport from_json(const nlohmann::json& j);
};

// Method x stage table for one group ("overall", "known" or "unknown"),
// cells formatted "acc / f1".
std::string format_table(const std::vector<EvaluationReport>& reports);

}  // namespace osld
