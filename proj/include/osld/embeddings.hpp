#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "osld/dataset.hpp"

namespace osld {

// n x d float32, row-major, rows aligned with ids.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t dim);
  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim, std::vector<float> data);

  std::size_t rows() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::vector<std::string>& ids() { return ids_; }
  std::span<const float> data() const { return data_; }

  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::span<float> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }

  void append(std::string id, std::span<const float> values);
  // Row subset in the given order.
  EmbeddingMatrix select(std::span<const std::size_t> rows) const;
  std::optional<std::size_t> find(const std::string& id) const;

  bool operator==(const EmbeddingMatrix& o) const { return dim_ == o.dim_ && ids_ == o.ids_ && data_ == o.data_; }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr char kEmbeddingMagic[8] = {'O', 'S', 'L', 'D', 'E', 'M', 'B', '1'};

EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
EmbeddingMatrix parse_embeddings(std::string_view bytes, const std::string& source_name = "<memory>");
std::string serialize_embeddings(const EmbeddingMatrix& m);
void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m);

// Sign-hashed TF-IDF featurizer. Tokens unseen at fit time are ignored.
struct Featurizer {
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::size_t doc_count = 0;
  std::map<std::string, std::size_t> document_frequency;
  std::unordered_map<std::string, double> idf;

  std::size_t bucket(std::string_view token) const;
  float sign(std::string_view token) const;

  nlohmann::json to_json() const;
  static Featurizer from_json(const nlohmann::json& j);
};

Featurizer fit_featurizer(std::span<const std::string_view> corpus, std::size_t dim, std::uint64_t seed);
Featurizer fit_featurizer(const DocumentSet& corpus, std::size_t dim, std::uint64_t seed);
std::vector<float> embed(const Featurizer& featurizer, std::string_view text);

// Token embedding table; text embeds to the normalized sum of its known
// token vectors.
class Lexicon {
 public:
  explicit Lexicon(EmbeddingMatrix table);
  std::size_t dim() const { return table_.dim(); }
  std::vector<float> embed(std::string_view text) const;

 private:
  EmbeddingMatrix table_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct DocumentRef {
  Stage stage;
  std::string_view id;
  std::string_view text;
};

// What the pipeline sees of an embedding source. Document embeddings are
// looked up (file) or computed (featurizer); free text such as keyword lists
// and class names goes through embed_text.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  // Called with every text the method may see at the current point.
  virtual void refit(std::span<const std::string_view> visible_texts) = 0;
  virtual EmbeddingMatrix embed_documents(std::span<const DocumentRef> docs) const = 0;
  virtual std::vector<float> embed_text(std::string_view text) const = 0;
  virtual nlohmann::json state() const = 0;
  virtual std::unique_ptr<EmbeddingBackend> clone() const = 0;
};

class FeaturizerBackend final : public EmbeddingBackend {
 public:
  FeaturizerBackend(std::size_t dim, std::uint64_t seed);
  explicit FeaturizerBackend(Featurizer fitted);

  std::string name() const override { return "featurizer"; }
  std::size_t dim() const override { return dim_; }
  void refit(std::span<const std::string_view> visible_texts) override;
  EmbeddingMatrix embed_documents(std::span<const DocumentRef> docs) const override;
  std::vector<float> embed_text(std::string_view text) const override;
  nlohmann::json state() const override;
  std::unique_ptr<EmbeddingBackend> clone() const override { return std::make_unique<FeaturizerBackend>(*this); }
  const Featurizer& featurizer() const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::optional<Featurizer> featurizer_;
};

class FileBackend final : public EmbeddingBackend {
 public:
  FileBackend(std::map<Stage, EmbeddingMatrix> stage_embeddings, std::optional<Lexicon> lexicon);
  static std::unique_ptr<FileBackend> from_manifest(const StageManifest& manifest);

  std::string name() const override { return "file"; }
  std::size_t dim() const override { return dim_; }
  void refit(std::span<const std::string_view>) override {}
  EmbeddingMatrix embed_documents(std::span<const DocumentRef> docs) const override;
  std::vector<float> embed_text(std::string_view text) const override;
  nlohmann::json state() const override;
  std::unique_ptr<EmbeddingBackend> clone() const override { return std::make_unique<FileBackend>(*this); }

 private:
  std::map<Stage, EmbeddingMatrix> stages_;
  std::optional<Lexicon> lexicon_;
  std::size_t dim_ = 0;
};

std::vector<DocumentRef> document_refs(const DocumentSet& set);
std::vector<DocumentRef> document_refs(const UnlabeledView& view);

}  // namespace osld
