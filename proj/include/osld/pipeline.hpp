#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "osld/adaptation.hpp"
#include "osld/dataset.hpp"
#include "osld/discovery.hpp"
#include "osld/evaluation.hpp"

namespace osld {

struct RunConfig {
  std::filesystem::path manifest;
  std::string backend = "featurizer";  // "featurizer" or "file"
  Method method = Method::v1;
  std::optional<std::uint64_t> seed;   // falls back to the manifest seed
  std::size_t featurizer_dim = 256;
  double outlier_fraction = 0.15;
  KSelectionOptions k_selection;
  double keep_fraction = 0.40;
  std::size_t top_m = 10;
  ContrastiveConfig contrastive;
  TrainConfig train;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

class ValidationFailed : public std::runtime_error {
 public:
  explicit ValidationFailed(ValidationReport report);
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

// What method code may touch: labelled train/val data, the known class names
// and label-stripped test stages.
struct MethodInputs {
  std::vector<std::string> known_classes;
  const DocumentSet* train = nullptr;
  const DocumentSet* val = nullptr;
  std::vector<UnlabeledView> tests;
};

MethodInputs method_inputs(const LoadedBenchmark& bench);

struct StageOutcome {
  int stage = 0;
  std::vector<std::string> ids;
  std::vector<std::string> predictions;  // class ids of the label space below
  LabelSpace labels;
  std::size_t discovered_k = 0;
  bool discovery_failed = false;
  std::string failure_reason;
  nlohmann::json backend_state;
};

struct MethodRun {
  std::uint64_t seed = 0;
  double validation_accuracy = 0.0;
  Network network;
  std::vector<StageOutcome> stages;
};

std::unique_ptr<EmbeddingBackend> make_backend(const RunConfig& config, const StageManifest& manifest,
                                               std::uint64_t seed);

// Runs the method over all test stages. Artifacts go to out_dir when given.
MethodRun run_method(const RunConfig& config, const MethodInputs& inputs, EmbeddingBackend& backend,
                     std::uint64_t seed, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Hungarian renaming and grouped metrics for every stage outcome.
EvaluationReport evaluate_outcomes(const RunConfig& config, const LoadedBenchmark& bench, const MethodRun& run);

EvaluationReport run_baseline(RunConfig config, const std::optional<std::filesystem::path>& out_dir = std::nullopt);
EvaluationReport run_osld(RunConfig config, const std::optional<std::filesystem::path>& out_dir = std::nullopt);
// Dispatches on config.method.
EvaluationReport run(const RunConfig& config, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Recomputes the report of a finished run directory from its artifacts and
// rewrites report.json.
EvaluationReport evaluate_run(const std::filesystem::path& run_dir);

}  // namespace osld
