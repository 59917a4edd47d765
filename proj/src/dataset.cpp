#include "osld/dataset.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "json.hpp"

#include "osld/util.hpp"

namespace osld {

using nlohmann::json;

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::train: return "train";
    case Stage::val: return "val";
    case Stage::test1: return "test1";
    case Stage::test2: return "test2";
    case Stage::test3: return "test3";
  }
  return "unknown";
}

Stage stage_from_string(const std::string& name) {
  if (name == "train") return Stage::train;
  if (name == "val") return Stage::val;
  if (name == "test1") return Stage::test1;
  if (name == "test2") return Stage::test2;
  if (name == "test3") return Stage::test3;
  throw FormatError("unknown stage name '" + name + "'");
}

int test_index(Stage s) {
  switch (s) {
    case Stage::test1: return 1;
    case Stage::test2: return 2;
    case Stage::test3: return 3;
    default: throw std::invalid_argument("test_index: " + to_string(s) + " is not a test stage");
  }
}

Stage test_stage(int index) {
  switch (index) {
    case 1: return Stage::test1;
    case 2: return Stage::test2;
    case 3: return Stage::test3;
    default: throw std::invalid_argument("test_stage: index out of range");
  }
}

DocumentSet::DocumentSet(Stage stage, std::vector<Document> docs) : stage_(stage), docs_(std::move(docs)) {
  index_.reserve(docs_.size());
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (!index_.emplace(docs_[i].id, i).second) {
      throw std::invalid_argument("DocumentSet: duplicate id '" + docs_[i].id + "'");
    }
  }
}

DocumentSet::DocumentSet(const DocumentSet& other)
    : stage_(other.stage_), docs_(other.docs_), index_(other.index_), label_reads_(other.label_reads_.load()) {}

DocumentSet& DocumentSet::operator=(const DocumentSet& other) {
  if (this != &other) {
    stage_ = other.stage_;
    docs_ = other.docs_;
    index_ = other.index_;
    label_reads_.store(other.label_reads_.load());
  }
  return *this;
}

DocumentSet::DocumentSet(DocumentSet&& other) noexcept
    : stage_(other.stage_),
      docs_(std::move(other.docs_)),
      index_(std::move(other.index_)),
      label_reads_(other.label_reads_.load()) {}

DocumentSet& DocumentSet::operator=(DocumentSet&& other) noexcept {
  stage_ = other.stage_;
  docs_ = std::move(other.docs_);
  index_ = std::move(other.index_);
  label_reads_.store(other.label_reads_.load());
  return *this;
}

std::optional<std::size_t> DocumentSet::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::optional<std::string>& DocumentSet::gold_label(std::size_t i) const {
  label_reads_.fetch_add(1, std::memory_order_relaxed);
  return docs_.at(i).gold_label;
}

const Document& DocumentSet::document(std::size_t i) const {
  label_reads_.fetch_add(1, std::memory_order_relaxed);
  return docs_.at(i);
}

namespace {

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string require_string(const json& record, const char* field, const std::string& where) {
  auto it = record.find(field);
  if (it == record.end()) throw FormatError(where + ": malformed record, missing field '" + field + "'");
  if (!it->is_string()) throw FormatError(where + ": malformed record, field '" + std::string(field) + "' is not a string");
  return it->get<std::string>();
}

}  // namespace

DocumentSet parse_stage(const std::string& content, Stage expected_stage, const std::string& source_name) {
  if (content.size() >= 3 && static_cast<unsigned char>(content[0]) == 0xEF &&
      static_cast<unsigned char>(content[1]) == 0xBB && static_cast<unsigned char>(content[2]) == 0xBF) {
    throw FormatError(source_name + ": byte-order mark is not allowed");
  }
  std::vector<Document> docs;
  std::unordered_map<std::string, std::size_t> first_line;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string::npos) end = content.size();
    std::string_view line(content.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (is_blank(line)) continue;

    const std::string where = source_name + ":" + std::to_string(line_no);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(where + ": malformed record (" + e.what() + ")");
    }
    if (!record.is_object()) throw FormatError(where + ": malformed record, expected a JSON object");

    Document doc;
    doc.id = require_string(record, "id", where);
    doc.text = require_string(record, "text", where);
    doc.stage = expected_stage;
    if (auto it = record.find("label"); it != record.end() && !it->is_null()) {
      if (!it->is_string()) throw FormatError(where + ": malformed record, field 'label' is not a string");
      doc.gold_label = it->get<std::string>();
    }
    if (doc.id.empty()) throw FormatError(where + ": empty id");
    if (is_blank(doc.text)) throw FormatError(where + ": empty text for id '" + doc.id + "'");
    auto [it, inserted] = first_line.emplace(doc.id, line_no);
    if (!inserted) {
      throw FormatError(source_name + ": duplicate id '" + doc.id + "' at lines " + std::to_string(it->second) +
                        " and " + std::to_string(line_no));
    }
    docs.push_back(std::move(doc));
  }
  return DocumentSet(expected_stage, std::move(docs));
}

DocumentSet load_stage(const std::filesystem::path& path, Stage expected_stage) {
  if (!std::filesystem::exists(path)) throw FormatError("stage file not found: " + path.string());
  return parse_stage(read_file(path), expected_stage, path.string());
}

std::string serialize_stage(const DocumentSet& set) {
  std::string out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Document& d = set.document(i);
    json record = {{"id", d.id}, {"text", d.text}};
    if (d.gold_label) record["label"] = *d.gold_label;
    out += record.dump();
    out += '\n';
  }
  return out;
}

void write_stage(const std::filesystem::path& path, const DocumentSet& set) {
  write_file_atomic(path, serialize_stage(set));
}

const StageEntry& StageManifest::entry(Stage s) const {
  for (const auto& e : stages) {
    if (e.stage == s) return e;
  }
  throw std::out_of_range("manifest has no stage " + to_string(s));
}

bool StageManifest::has(Stage s) const {
  return std::any_of(stages.begin(), stages.end(), [s](const StageEntry& e) { return e.stage == s; });
}

std::vector<std::string> StageManifest::classes_of(Stage s) const {
  if (s == Stage::train || s == Stage::val) {
    if (has(s) && !entry(s).classes.empty()) return entry(s).classes;
    return known_classes;
  }
  return entry(s).classes;
}

std::vector<std::string> StageManifest::new_classes(int test_idx) const {
  const auto current = classes_of(test_stage(test_idx));
  std::set<std::string> before(known_classes.begin(), known_classes.end());
  if (test_idx > 1) {
    const auto prev = classes_of(test_stage(test_idx - 1));
    before.insert(prev.begin(), prev.end());
  }
  std::vector<std::string> out;
  for (const auto& c : current) {
    if (!before.count(c)) out.push_back(c);
  }
  return out;
}

std::filesystem::path StageManifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

StageManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  StageManifest m;
  m.base_dir = base_dir;
  try {
    m.known_classes = doc.at("known_classes").get<std::vector<std::string>>();
    m.language = doc.value("language", std::string{});
    m.seed = doc.value("seed", std::uint64_t{0});
    if (doc.contains("lexicon") && !doc["lexicon"].is_null()) m.lexicon = doc["lexicon"].get<std::string>();
    for (const auto& s : doc.at("stages")) {
      StageEntry e;
      e.stage = stage_from_string(s.at("name").get<std::string>());
      e.path = s.at("path").get<std::string>();
      if (s.contains("classes")) e.classes = s["classes"].get<std::vector<std::string>>();
      if (s.contains("embeddings") && !s["embeddings"].is_null()) e.embeddings = s["embeddings"].get<std::string>();
      m.stages.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  for (Stage required : {Stage::train, Stage::test1, Stage::test2, Stage::test3}) {
    if (!m.has(required)) throw FormatError("manifest: missing stage '" + to_string(required) + "'");
  }
  return m;
}

StageManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.parent_path());
}

std::string serialize_manifest(const StageManifest& m) {
  json doc;
  doc["known_classes"] = m.known_classes;
  doc["language"] = m.language;
  doc["seed"] = m.seed;
  if (m.lexicon) doc["lexicon"] = m.lexicon->generic_string();
  json stages = json::array();
  for (const auto& e : m.stages) {
    json s = {{"name", to_string(e.stage)}, {"path", e.path.generic_string()}, {"classes", e.classes}};
    if (e.embeddings) s["embeddings"] = e.embeddings->generic_string();
    stages.push_back(std::move(s));
  }
  doc["stages"] = std::move(stages);
  return doc.dump(2) + "\n";
}

const DocumentSet& LoadedBenchmark::set(Stage s) const {
  auto it = sets.find(s);
  if (it == sets.end()) throw std::out_of_range("benchmark has no stage " + to_string(s));
  return it->second;
}

LoadedBenchmark load_benchmark(const std::filesystem::path& manifest_path) {
  LoadedBenchmark b;
  b.manifest = load_manifest(manifest_path);
  for (const auto& e : b.manifest.stages) {
    b.sets.emplace(e.stage, load_stage(b.manifest.resolve(e.path), e.stage));
  }
  return b;
}

ValidationReport validate_manifest(const StageManifest& manifest, const std::map<Stage, DocumentSet>& stages) {
  ValidationReport report;

  std::set<std::string> seen;
  for (const auto& c : manifest.known_classes) {
    if (!seen.insert(c).second) report.fail("duplicate class name '" + c + "' in known_classes");
  }
  if (manifest.known_classes.empty()) report.fail("known_classes is empty");
  for (int i = 1; i <= 3; ++i) {
    std::set<std::string> distinct;
    for (const auto& c : manifest.classes_of(test_stage(i))) {
      if (!distinct.insert(c).second) report.fail("duplicate class name '" + c + "' in stage " + std::to_string(i));
    }
  }

  // Monotone chain: known ⊆ T1 ⊆ T2 ⊆ T3.
  std::set<std::string> previous(manifest.known_classes.begin(), manifest.known_classes.end());
  for (int i = 1; i <= 3; ++i) {
    const auto cls = manifest.classes_of(test_stage(i));
    std::set<std::string> current(cls.begin(), cls.end());
    std::vector<std::string> missing;
    for (const auto& c : previous) {
      if (!current.count(c)) missing.push_back(c);
    }
    if (!missing.empty()) {
      std::string names;
      for (const auto& c : missing) names += (names.empty() ? "" : ", ") + c;
      report.fail("monotonicity violated at stage " + std::to_string(i) + " (missing " + names + ")");
    }
    previous = std::move(current);
  }

  for (const auto& [stage, set] : stages) {
    const auto allowed_list = manifest.classes_of(stage);
    const std::set<std::string> allowed(allowed_list.begin(), allowed_list.end());
    const std::set<std::string> known(manifest.known_classes.begin(), manifest.known_classes.end());
    std::set<std::string> reported;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto& label = set.gold_label(i);
      if (!label) {
        report.fail(to_string(stage) + ": record '" + set.id(i) + "' has no label");
        continue;
      }
      if (reported.count(*label)) continue;
      if ((stage == Stage::train || stage == Stage::val) && !known.count(*label)) {
        report.fail(to_string(stage) + ": label '" + *label + "' is not a known class");
        reported.insert(*label);
      } else if (!allowed.count(*label)) {
        report.fail(to_string(stage) + ": label '" + *label + "' is not in the stage class set");
        reported.insert(*label);
      }
    }
  }
  return report;
}

}  // namespace osld
