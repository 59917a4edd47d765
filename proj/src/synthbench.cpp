#include "osld/synthbench.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "osld/dataset.hpp"
#include "osld/embeddings.hpp"
#include "osld/util.hpp"

namespace osld {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kTopics[] = {"politics", "sport",   "economy", "technology", "culture", "health",  "science",
                               "travel",   "education", "environment", "business", "music", "film", "food",
                               "fashion",  "law",     "religion", "weather",   "history", "art"};
constexpr std::size_t kTopicCount = sizeof(kTopics) / sizeof(kTopics[0]);

const char* const kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "st", "tr"};
const char* const kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};

std::string pseudo_word(Rng& rng) {
  std::string w;
  const std::size_t syllables = 2 + rng.index(2);
  for (std::size_t s = 0; s < syllables; ++s) {
    w += kOnsets[rng.index(std::size(kOnsets))];
    w += kVowels[rng.index(std::size(kVowels))];
  }
  return w;
}

struct Vocabulary {
  std::vector<std::vector<std::string>> per_class;
  std::vector<std::string> noise;
};

Vocabulary make_vocabulary(const SynthSpec& spec, const std::vector<std::string>& names) {
  Rng rng(derive_seed(spec.seed, 11));
  std::set<std::string> used(names.begin(), names.end());
  auto fresh = [&] {
    for (;;) {
      std::string w = pseudo_word(rng);
      if (used.insert(w).second) return w;
    }
  };
  Vocabulary v;
  v.per_class.resize(spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t t = 0; t < spec.vocab_size; ++t) v.per_class[c].push_back(fresh());
  }
  for (std::size_t t = 0; t < spec.noise_vocab_size; ++t) v.noise.push_back(fresh());
  return v;
}

// Class name weighted 3x against each exclusive token.
std::string make_text(const SynthSpec& spec, const Vocabulary& vocab, const std::string& name, std::size_t c, Rng& rng) {
  const auto& own = vocab.per_class[c];
  std::string text;
  for (std::size_t t = 0; t < spec.doc_length; ++t) {
    std::string_view token;
    if (rng.uniform() < spec.class_token_prob) {
      const std::size_t pick = rng.index(own.size() + 3);
      token = pick < 3 ? std::string_view(name) : std::string_view(own[pick - 3]);
    } else {
      token = vocab.noise[rng.index(vocab.noise.size())];
    }
    if (!text.empty()) text += ' ';
    text += token;
  }
  return text;
}

std::vector<float> blob_center(const SynthSpec& spec, std::size_t c) {
  std::vector<float> center(spec.dim, 0.0f);
  center[c] = static_cast<float>(spec.separation / std::sqrt(2.0));
  return center;
}

std::vector<float> sample_around(std::span<const float> center, double sigma, Rng& rng) {
  std::vector<float> v(center.begin(), center.end());
  for (auto& x : v) x = static_cast<float>(x + sigma * rng.normal());
  return v;
}

}  // namespace

void SynthSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("synth: need at least 2 classes");
  if (known < 2 || known >= classes) throw std::invalid_argument("synth: known count must be in [2, classes)");
  if (vocab_size == 0 || noise_vocab_size == 0) throw std::invalid_argument("synth: vocabularies must be non-empty");
  if (train_per_class == 0 || test_per_class == 0) throw std::invalid_argument("synth: document counts must be positive");
  if (doc_length == 0) throw std::invalid_argument("synth: doc_length must be positive");
  if (!(class_token_prob > 0.0 && class_token_prob <= 1.0)) throw std::invalid_argument("synth: class_token_prob must be in (0, 1]");
  if (mode != "embedding" && mode != "text") throw std::invalid_argument("synth: mode must be 'embedding' or 'text'");
  if (mode == "embedding") {
    if (dim < classes) throw std::invalid_argument("synth: dim must be >= class count in embedding mode");
    if (!(sigma > 0.0)) throw std::invalid_argument("synth: sigma must be > 0");
    if (!(separation > 0.0)) throw std::invalid_argument("synth: separation must be > 0");
  }
}

json SynthSpec::to_json() const {
  return {{"classes", classes},
          {"known", known},
          {"vocab_size", vocab_size},
          {"noise_vocab_size", noise_vocab_size},
          {"train_per_class", train_per_class},
          {"val_per_class", val_per_class},
          {"test_per_class", test_per_class},
          {"doc_length", doc_length},
          {"class_token_prob", class_token_prob},
          {"mode", mode},
          {"dim", dim},
          {"separation", separation},
          {"sigma", sigma},
          {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("synth spec must be a JSON object");
  static const std::set<std::string> keys = {"classes",    "known",        "vocab_size",       "noise_vocab_size",
                                             "train_per_class", "val_per_class", "test_per_class", "doc_length",
                                             "class_token_prob", "mode",      "dim",              "separation",
                                             "sigma",      "seed"};
  for (const auto& [k, _] : j.items()) {
    if (!keys.count(k)) throw std::invalid_argument("synth spec: unknown key '" + k + "'");
  }
  SynthSpec s;
  s.classes = j.value("classes", s.classes);
  s.known = j.value("known", s.known);
  s.vocab_size = j.value("vocab_size", s.vocab_size);
  s.noise_vocab_size = j.value("noise_vocab_size", s.noise_vocab_size);
  s.train_per_class = j.value("train_per_class", s.train_per_class);
  s.val_per_class = j.value("val_per_class", s.val_per_class);
  s.test_per_class = j.value("test_per_class", s.test_per_class);
  s.doc_length = j.value("doc_length", s.doc_length);
  s.class_token_prob = j.value("class_token_prob", s.class_token_prob);
  s.mode = j.value("mode", s.mode);
  s.dim = j.value("dim", s.dim);
  s.separation = j.value("separation", s.separation);
  // sigma defaults to a tenth of the separation.
  s.sigma = j.value("sigma", s.separation / 10.0);
  s.seed = j.value("seed", s.seed);
  return s;
}

std::vector<std::string> synth_class_names(std::size_t count) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < count; ++c) {
    names.push_back(c < kTopicCount ? std::string(kTopics[c]) : "topic" + std::to_string(c + 1));
  }
  return names;
}

std::vector<std::vector<std::string>> synth_stage_classes(const SynthSpec& spec) {
  const auto names = synth_class_names(spec.classes);
  const std::size_t unknown = spec.classes - spec.known;
  std::vector<std::vector<std::string>> out(3);
  std::size_t next = spec.known;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t take = unknown / 3 + (s < unknown % 3 ? 1 : 0);
    for (std::size_t t = 0; t < take; ++t) out[s].push_back(names[next++]);
  }
  return out;
}

SynthOutput generate(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  const auto names = synth_class_names(spec.classes);
  const Vocabulary vocab = make_vocabulary(spec, names);
  const auto fresh = synth_stage_classes(spec);
  const bool embedding_mode = spec.mode == "embedding";

  StageManifest manifest;
  manifest.known_classes.assign(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(spec.known));
  manifest.language = "en";
  manifest.seed = spec.seed;

  SynthOutput out;
  Rng text_rng(derive_seed(spec.seed, 12));
  Rng vec_rng(derive_seed(spec.seed, 13));

  std::vector<std::size_t> active(spec.known);
  for (std::size_t c = 0; c < spec.known; ++c) active[c] = c;

  auto emit = [&](Stage stage, const std::vector<std::size_t>& classes, std::size_t per_class) {
    std::vector<std::pair<std::size_t, std::size_t>> slots;  // (class, ordinal)
    for (std::size_t c : classes) {
      for (std::size_t n = 0; n < per_class; ++n) slots.emplace_back(c, n);
    }
    text_rng.shuffle(slots);
    std::vector<Document> docs;
    EmbeddingMatrix emb(0, spec.dim);
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const std::size_t c = slots[i].first;
      char id[32];
      std::snprintf(id, sizeof id, "%s-%06zu", to_string(stage).c_str(), i + 1);
      docs.push_back({id, make_text(spec, vocab, names[c], c, text_rng), names[c], stage});
      if (embedding_mode) emb.append(id, sample_around(blob_center(spec, c), spec.sigma, vec_rng));
    }
    StageEntry entry;
    entry.stage = stage;
    entry.path = to_string(stage) + ".jsonl";
    for (std::size_t c : classes) entry.classes.push_back(names[c]);
    write_stage(out_dir / entry.path, DocumentSet(stage, std::move(docs)));
    out.files.push_back(out_dir / entry.path);
    if (embedding_mode) {
      entry.embeddings = to_string(stage) + ".osldemb";
      write_embeddings(out_dir / *entry.embeddings, emb);
      out.files.push_back(out_dir / *entry.embeddings);
    }
    manifest.stages.push_back(std::move(entry));
  };

  emit(Stage::train, active, spec.train_per_class);
  if (spec.val_per_class > 0) emit(Stage::val, active, spec.val_per_class);
  std::size_t next = spec.known;
  for (int i = 1; i <= 3; ++i) {
    for (std::size_t t = 0; t < fresh[static_cast<std::size_t>(i - 1)].size(); ++t) active.push_back(next++);
    emit(test_stage(i), active, spec.test_per_class);
  }

  if (embedding_mode) {
    // Class names and exclusive tokens sit near their class center, noise
    // tokens near the origin.
    EmbeddingMatrix lexicon(0, spec.dim);
    const double token_sigma = spec.sigma / 4.0;
    const std::vector<float> origin(spec.dim, 0.0f);
    for (std::size_t c = 0; c < spec.classes; ++c) {
      const auto center = blob_center(spec, c);
      lexicon.append(names[c], sample_around(center, token_sigma, vec_rng));
      for (const auto& token : vocab.per_class[c]) lexicon.append(token, sample_around(center, token_sigma, vec_rng));
    }
    for (const auto& token : vocab.noise) lexicon.append(token, sample_around(origin, token_sigma, vec_rng));
    manifest.lexicon = "lexicon.osldemb";
    write_embeddings(out_dir / *manifest.lexicon, lexicon);
    out.files.push_back(out_dir / *manifest.lexicon);
  }

  out.manifest = out_dir / "manifest.json";
  write_file_atomic(out.manifest, serialize_manifest(manifest));
  out.files.push_back(out.manifest);
  return out;
}

}  // namespace osld
