#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace osld {

enum class Stage { train, val, test1, test2, test3 };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);
inline bool is_test_stage(Stage s) { return s == Stage::test1 || s == Stage::test2 || s == Stage::test3; }
// 1-based test index for test stages.
int test_index(Stage s);
Stage test_stage(int index);

// Thrown for unreadable or ill-formed input files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Document {
  std::string id;
  std::string text;
  std::optional<std::string> gold_label;
  Stage stage = Stage::train;

  bool operator==(const Document&) const = default;
};

class DocumentSet {
 public:
  DocumentSet() = default;
  DocumentSet(Stage stage, std::vector<Document> docs);
  DocumentSet(const DocumentSet& other);
  DocumentSet& operator=(const DocumentSet& other);
  DocumentSet(DocumentSet&&) noexcept;
  DocumentSet& operator=(DocumentSet&&) noexcept;

  Stage stage() const { return stage_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }

  const std::string& id(std::size_t i) const { return docs_.at(i).id; }
  const std::string& text(std::size_t i) const { return docs_.at(i).text; }
  std::optional<std::size_t> find(const std::string& id) const;

  // Gold-label reads are counted so tests can audit that method code never
  // touches test-stage labels.
  const std::optional<std::string>& gold_label(std::size_t i) const;
  std::size_t gold_label_reads() const { return label_reads_.load(); }

  // Full record access, counted as a label read.
  const Document& document(std::size_t i) const;

  bool operator==(const DocumentSet& other) const { return stage_ == other.stage_ && docs_ == other.docs_; }

 private:
  Stage stage_ = Stage::train;
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> index_;
  mutable std::atomic<std::size_t> label_reads_{0};
};

// Label-stripped view handed to method code for test stages.
class UnlabeledView {
 public:
  explicit UnlabeledView(const DocumentSet& set) : set_(&set) {}
  Stage stage() const { return set_->stage(); }
  std::size_t size() const { return set_->size(); }
  const std::string& id(std::size_t i) const { return set_->id(i); }
  const std::string& text(std::size_t i) const { return set_->text(i); }

 private:
  const DocumentSet* set_;
};

DocumentSet load_stage(const std::filesystem::path& path, Stage expected_stage);
DocumentSet parse_stage(const std::string& content, Stage expected_stage, const std::string& source_name = "<memory>");
void write_stage(const std::filesystem::path& path, const DocumentSet& set);
std::string serialize_stage(const DocumentSet& set);

struct StageEntry {
  Stage stage = Stage::train;
  std::filesystem::path path;
  std::vector<std::string> classes;
  std::optional<std::filesystem::path> embeddings;
};

struct StageManifest {
  std::vector<std::string> known_classes;
  std::vector<StageEntry> stages;
  std::string language;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> lexicon;
  std::filesystem::path base_dir;

  const StageEntry& entry(Stage s) const;
  bool has(Stage s) const;
  std::vector<std::string> classes_of(Stage s) const;
  // Classes introduced by test stage i (present at i, absent before it).
  std::vector<std::string> new_classes(int test_idx) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

StageManifest load_manifest(const std::filesystem::path& path);
StageManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir);
std::string serialize_manifest(const StageManifest& manifest);

struct ValidationReport {
  bool passed = true;
  std::vector<std::string> entries;

  void fail(std::string message) {
    passed = false;
    entries.push_back(std::move(message));
  }
};

struct LoadedBenchmark {
  StageManifest manifest;
  std::map<Stage, DocumentSet> sets;

  const DocumentSet& set(Stage s) const;
};

LoadedBenchmark load_benchmark(const std::filesystem::path& manifest_path);

ValidationReport validate_manifest(const StageManifest& manifest, const std::map<Stage, DocumentSet>& stages);

}  // namespace osld
