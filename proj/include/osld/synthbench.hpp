#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace osld {

struct SynthSpec {
  std::size_t classes = 10;
  std::size_t known = 4;
  std::size_t vocab_size = 20;        // exclusive tokens per class
  std::size_t noise_vocab_size = 60;  // tokens shared by all classes
  std::size_t train_per_class = 200;
  std::size_t val_per_class = 50;
  std::size_t test_per_class = 100;
  std::size_t doc_length = 24;
  double class_token_prob = 0.5;
  std::string mode = "embedding";  // "embedding" or "text"
  std::size_t dim = 16;
  double separation = 2.0;  // distance between blob centers
  double sigma = 0.2;
  std::uint64_t seed = 42;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

// Class names, in order; the first `known` are the initially known classes.
std::vector<std::string> synth_class_names(std::size_t count);

// Classes first seen at test stage 1..3 (remainder goes to the earliest stages).
std::vector<std::vector<std::string>> synth_stage_classes(const SynthSpec& spec);

struct SynthOutput {
  std::filesystem::path manifest;
  std::vector<std::filesystem::path> files;
};

// Writes manifest.json, one JSONL file per stage and, in embedding mode, one
// OSLDEMB1 file per stage plus lexicon.osldemb.
SynthOutput generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace osld
