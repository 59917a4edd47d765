#include "osld/embeddings.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <set>
#include <stdexcept>

#include "osld/text.hpp"
#include "osld/util.hpp"

namespace osld {

using nlohmann::json;

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim)
    : dim_(dim), ids_(rows), data_(rows * dim, 0.0f) {}

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim, std::vector<float> data)
    : dim_(dim), ids_(std::move(ids)), data_(std::move(data)) {
  if (data_.size() != ids_.size() * dim_) {
    throw std::invalid_argument("EmbeddingMatrix: payload size does not match rows x dim");
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) index_.emplace(ids_[i], i);
}

void EmbeddingMatrix::append(std::string id, std::span<const float> values) {
  if (ids_.empty() && dim_ == 0) dim_ = values.size();
  if (values.size() != dim_) throw std::invalid_argument("EmbeddingMatrix::append: dimension mismatch");
  index_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
  data_.insert(data_.end(), values.begin(), values.end());
}

EmbeddingMatrix EmbeddingMatrix::select(std::span<const std::size_t> rows) const {
  EmbeddingMatrix out;
  out.dim_ = dim_;
  out.ids_.reserve(rows.size());
  out.data_.reserve(rows.size() * dim_);
  for (std::size_t r : rows) out.append(ids_.at(r), row(r));
  return out;
}

std::optional<std::size_t> EmbeddingMatrix::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::uint32_t read_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int k = 3; k >= 0; --k) v = (v << 8) | static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(k)]);
  return v;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out += static_cast<char>((v >> (8 * k)) & 0xffu);
}

}  // namespace

EmbeddingMatrix parse_embeddings(std::string_view bytes, const std::string& source_name) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kEmbeddingMagic, 8) != 0) {
    throw FormatError(source_name + ": bad magic (expected OSLDEMB1)");
  }
  if (bytes.size() < 16) throw FormatError(source_name + ": truncated header");
  const std::uint32_t n = read_u32(bytes, 8);
  const std::uint32_t d = read_u32(bytes, 12);
  if (n == 0 || d == 0) throw FormatError(source_name + ": n and d must be non-zero");
  if (d < 2) throw FormatError(source_name + ": dimension must be at least 2");
  const std::uint64_t payload = static_cast<std::uint64_t>(n) * d * 4;
  if (bytes.size() - 16 < payload) throw FormatError(source_name + ": truncated payload");
  std::vector<float> data(static_cast<std::size_t>(n) * d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float v = std::bit_cast<float>(read_u32(bytes, 16 + 4 * i));
    if (!std::isfinite(v)) {
      throw FormatError(source_name + ": non-finite value at row " + std::to_string(i / d) + ", column " +
                        std::to_string(i % d));
    }
    data[i] = v;
  }
  const std::size_t id_offset = 16 + static_cast<std::size_t>(payload);
  if (bytes.size() < id_offset + 4) throw FormatError(source_name + ": truncated id section");
  const std::uint32_t id_len = read_u32(bytes, id_offset);
  if (bytes.size() - id_offset - 4 < id_len) throw FormatError(source_name + ": truncated id section");
  if (bytes.size() - id_offset - 4 > id_len) throw FormatError(source_name + ": trailing bytes after id section");
  std::vector<std::string> ids;
  try {
    ids = json::parse(bytes.substr(id_offset + 4, id_len)).get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(source_name + ": malformed id section (" + e.what() + ")");
  }
  if (ids.size() != n) {
    throw FormatError(source_name + ": id section has " + std::to_string(ids.size()) + " entries, expected " +
                      std::to_string(n));
  }
  std::set<std::string_view> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) throw FormatError(source_name + ": duplicate id '" + id + "'");
  }
  return EmbeddingMatrix(std::move(ids), d, std::move(data));
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  return parse_embeddings(read_file(path), path.string());
}

std::string serialize_embeddings(const EmbeddingMatrix& m) {
  if (m.rows() == 0 || m.dim() == 0) throw std::invalid_argument("serialize_embeddings: empty matrix");
  std::string out(kEmbeddingMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.dim()));
  out.reserve(out.size() + m.data().size() * 4);
  for (float v : m.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("serialize_embeddings: non-finite value");
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  const std::string ids = json(m.ids()).dump();
  put_u32(out, static_cast<std::uint32_t>(ids.size()));
  out += ids;
  return out;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  write_file_atomic(path, serialize_embeddings(m));
}

std::size_t Featurizer::bucket(std::string_view token) const {
  return static_cast<std::size_t>(fnv1a64(token, derive_seed(seed, 0)) % dim);
}

float Featurizer::sign(std::string_view token) const {
  return (fnv1a64(token, derive_seed(seed, 1)) >> 63) ? -1.0f : 1.0f;
}

namespace {

void compute_idf(Featurizer& f) {
  f.idf.clear();
  const double n = static_cast<double>(f.doc_count);
  for (const auto& [token, df] : f.document_frequency) {
    f.idf.emplace(token, std::log((1.0 + n) / (1.0 + static_cast<double>(df))) + 1.0);
  }
}

}  // namespace

json Featurizer::to_json() const {
  return {{"dim", dim}, {"seed", seed}, {"doc_count", doc_count}, {"document_frequency", document_frequency}};
}

Featurizer Featurizer::from_json(const json& j) {
  Featurizer f;
  f.dim = j.at("dim").get<std::size_t>();
  f.seed = j.at("seed").get<std::uint64_t>();
  f.doc_count = j.at("doc_count").get<std::size_t>();
  f.document_frequency = j.at("document_frequency").get<std::map<std::string, std::size_t>>();
  compute_idf(f);
  return f;
}

Featurizer fit_featurizer(std::span<const std::string_view> corpus, std::size_t dim, std::uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("fit_featurizer: empty corpus");
  if (dim < 2) throw std::invalid_argument("fit_featurizer: dimension must be at least 2");
  Featurizer f;
  f.dim = dim;
  f.seed = seed;
  f.doc_count = corpus.size();
  for (auto text : corpus) {
    auto tokens = tokenize(text);
    std::set<std::string> unique(tokens.begin(), tokens.end());
    for (const auto& t : unique) ++f.document_frequency[t];
  }
  compute_idf(f);
  return f;
}

Featurizer fit_featurizer(const DocumentSet& corpus, std::size_t dim, std::uint64_t seed) {
  std::vector<std::string_view> texts;
  texts.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) texts.emplace_back(corpus.text(i));
  return fit_featurizer(texts, dim, seed);
}

std::vector<float> embed(const Featurizer& featurizer, std::string_view text) {
  std::vector<double> acc(featurizer.dim, 0.0);
  bool any = false;
  for (const auto& token : tokenize(text)) {
    auto it = featurizer.idf.find(token);
    if (it == featurizer.idf.end()) continue;
    acc[featurizer.bucket(token)] += featurizer.sign(token) * it->second;
    any = true;
  }
  std::vector<float> out(featurizer.dim, 0.0f);
  if (!any) return out;
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  // Sign collisions can cancel every bucket.
  if (norm == 0.0) return out;
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / norm);
  return out;
}

Lexicon::Lexicon(EmbeddingMatrix table) : table_(std::move(table)) {
  for (std::size_t i = 0; i < table_.rows(); ++i) index_.emplace(table_.ids()[i], i);
}

std::vector<float> Lexicon::embed(std::string_view text) const {
  std::vector<double> acc(table_.dim(), 0.0);
  bool any = false;
  for (const auto& token : tokenize(text)) {
    auto it = index_.find(token);
    if (it == index_.end()) continue;
    const auto row = table_.row(it->second);
    for (std::size_t k = 0; k < row.size(); ++k) acc[k] += row[k];
    any = true;
  }
  std::vector<float> out(table_.dim(), 0.0f);
  if (!any) return out;
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) return out;
  for (std::size_t k = 0; k < acc.size(); ++k) out[k] = static_cast<float>(acc[k] / norm);
  return out;
}

FeaturizerBackend::FeaturizerBackend(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 2) throw std::invalid_argument("FeaturizerBackend: dimension must be at least 2");
}

FeaturizerBackend::FeaturizerBackend(Featurizer fitted)
    : dim_(fitted.dim), seed_(fitted.seed), featurizer_(std::move(fitted)) {}

void FeaturizerBackend::refit(std::span<const std::string_view> visible_texts) {
  featurizer_ = fit_featurizer(visible_texts, dim_, seed_);
}

const Featurizer& FeaturizerBackend::featurizer() const {
  if (!featurizer_) throw std::logic_error("FeaturizerBackend: not fitted");
  return *featurizer_;
}

EmbeddingMatrix FeaturizerBackend::embed_documents(std::span<const DocumentRef> docs) const {
  const Featurizer& f = featurizer();
  std::vector<std::string> ids;
  std::vector<float> data(docs.size() * dim_);
  ids.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    ids.emplace_back(docs[i].id);
    const auto v = embed(f, docs[i].text);
    std::copy(v.begin(), v.end(), data.begin() + static_cast<std::ptrdiff_t>(i * dim_));
  }
  return EmbeddingMatrix(std::move(ids), dim_, std::move(data));
}

std::vector<float> FeaturizerBackend::embed_text(std::string_view text) const { return embed(featurizer(), text); }

json FeaturizerBackend::state() const {
  return {{"backend", "featurizer"}, {"featurizer", featurizer().to_json()}};
}

FileBackend::FileBackend(std::map<Stage, EmbeddingMatrix> stage_embeddings, std::optional<Lexicon> lexicon)
    : stages_(std::move(stage_embeddings)), lexicon_(std::move(lexicon)) {
  if (stages_.empty()) throw std::invalid_argument("FileBackend: no embeddings supplied");
  dim_ = stages_.begin()->second.dim();
  for (const auto& [stage, m] : stages_) {
    if (m.dim() != dim_) throw FormatError("embedding dimension mismatch at stage " + to_string(stage));
  }
  if (lexicon_ && lexicon_->dim() != dim_) throw FormatError("lexicon dimension does not match stage embeddings");
}

std::unique_ptr<FileBackend> FileBackend::from_manifest(const StageManifest& manifest) {
  std::map<Stage, EmbeddingMatrix> stages;
  for (const auto& e : manifest.stages) {
    if (!e.embeddings) {
      if (e.stage == Stage::val) continue;
      throw FormatError("file backend: stage '" + to_string(e.stage) + "' has no embeddings path");
    }
    stages.emplace(e.stage, load_embeddings(manifest.resolve(*e.embeddings)));
  }
  std::optional<Lexicon> lexicon;
  if (manifest.lexicon) lexicon.emplace(load_embeddings(manifest.resolve(*manifest.lexicon)));
  return std::make_unique<FileBackend>(std::move(stages), std::move(lexicon));
}

EmbeddingMatrix FileBackend::embed_documents(std::span<const DocumentRef> docs) const {
  std::vector<std::string> ids;
  std::vector<float> data;
  ids.reserve(docs.size());
  data.reserve(docs.size() * dim_);
  for (const auto& doc : docs) {
    auto it = stages_.find(doc.stage);
    if (it == stages_.end()) throw FormatError("file backend: no embeddings for stage " + to_string(doc.stage));
    const std::string id(doc.id);
    auto row = it->second.find(id);
    if (!row) throw FormatError("file backend: id '" + id + "' missing from " + to_string(doc.stage) + " embeddings");
    const auto values = it->second.row(*row);
    ids.push_back(id);
    data.insert(data.end(), values.begin(), values.end());
  }
  return EmbeddingMatrix(std::move(ids), dim_, std::move(data));
}

std::vector<float> FileBackend::embed_text(std::string_view text) const {
  if (!lexicon_) throw std::runtime_error("file backend: free-text embedding needs a lexicon file");
  return lexicon_->embed(text);
}

json FileBackend::state() const { return {{"backend", "file"}, {"dim", dim_}}; }

std::vector<DocumentRef> document_refs(const DocumentSet& set) {
  std::vector<DocumentRef> refs;
  refs.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) refs.push_back({set.stage(), set.id(i), set.text(i)});
  return refs;
}

std::vector<DocumentRef> document_refs(const UnlabeledView& view) {
  std::vector<DocumentRef> refs;
  refs.reserve(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) refs.push_back({view.stage(), view.id(i), view.text(i)});
  return refs;
}

}  // namespace osld
