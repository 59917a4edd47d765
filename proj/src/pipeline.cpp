#include "osld/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <iostream>
#include <set>

#include "osld/openset.hpp"
#include "osld/util.hpp"

namespace osld {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kRunFormat = "osld-run/1";

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST) throw std::runtime_error("run directory is locked by another run: " + path_.string());
      throw std::runtime_error("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

fs::path stage_dir(const fs::path& out, int stage) { return out / ("stage" + std::to_string(stage)); }

std::vector<std::string_view> texts_of(const DocumentSet& set) {
  std::vector<std::string_view> out;
  for (std::size_t i = 0; i < set.size(); ++i) out.push_back(set.text(i));
  return out;
}

std::vector<int> label_indices(const DocumentSet& set, const LabelSpace& labels) {
  std::vector<int> out;
  out.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& gold = set.gold_label(i);
    if (!gold) throw FormatError(to_string(set.stage()) + " document '" + set.id(i) + "' has no label");
    auto idx = labels.index_of(*gold);
    if (!idx) throw FormatError(to_string(set.stage()) + " label '" + *gold + "' is not a known class");
    out.push_back(static_cast<int>(*idx));
  }
  return out;
}

std::vector<std::string> predict_all(const Network& net, const LabelSpace& labels, const EmbeddingMatrix& X) {
  std::vector<std::string> out(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) out[r] = labels.classes[net.predict_index(X.row(r))].id;
  return out;
}

std::string predictions_jsonl(const StageOutcome& s) {
  std::string out;
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    out += json{{"id", s.ids[i]}, {"prediction", s.predictions[i]}}.dump();
    out += '\n';
  }
  return out;
}

json stage_status(const StageOutcome& s) {
  json j = {{"stage", s.stage}, {"discovered_k", s.discovered_k}, {"discovery_failed", s.discovery_failed}};
  if (s.discovery_failed) j["failure_reason"] = s.failure_reason;
  return j;
}

void write_stage_outcome(const fs::path& dir, const StageOutcome& s, const Network& net, const json& config_echo) {
  write_network(dir / "network.ckpt", net, config_echo);
  write_file_atomic(dir / "predictions.jsonl", predictions_jsonl(s));
  write_json(dir / "labels.json", s.labels.to_json());
  write_json(dir / "backend.json", s.backend_state);
  write_json(dir / "stage.json", stage_status(s));
}

StageOutcome read_stage_outcome(const fs::path& dir) {
  StageOutcome s;
  const json status = read_json(dir / "stage.json");
  s.stage = status.at("stage").get<int>();
  s.discovered_k = status.at("discovered_k").get<std::size_t>();
  s.discovery_failed = status.at("discovery_failed").get<bool>();
  s.failure_reason = status.value("failure_reason", std::string{});
  s.labels = LabelSpace::from_json(read_json(dir / "labels.json"));
  s.backend_state = read_json(dir / "backend.json");
  const std::string content = read_file(dir / "predictions.jsonl");
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string::npos) end = content.size();
    const std::string_view line(content.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const json rec = json::parse(line);
    s.ids.push_back(rec.at("id").get<std::string>());
    s.predictions.push_back(rec.at("prediction").get<std::string>());
  }
  return s;
}

struct ReplayItem {
  Stage stage;
  std::string id;
  std::string text;
  std::string class_id;
};

json clusters_json(const KSelection& sel, const std::vector<std::vector<Keyword>>& keywords,
                   const std::vector<std::vector<std::string>>& member_ids,
                   const std::vector<std::optional<std::vector<float>>>& centroids,
                   const std::vector<std::string>& notes) {
  json clusters = json::array();
  for (std::size_t j = 0; j < keywords.size(); ++j) {
    json kws = json::array();
    for (const auto& kw : keywords[j]) kws.push_back({{"token", kw.token}, {"score", kw.score}});
    json c = {{"cluster", j}, {"size", member_ids[j].size()}, {"keywords", kws}, {"members", member_ids[j]}};
    if (centroids[j]) {
      c["centroid_checksum"] = checksum_hex(*centroids[j]);
    } else {
      c["centroid_checksum"] = nullptr;
    }
    clusters.push_back(std::move(c));
  }
  return {{"k", sel.best_k}, {"inertia", sel.best.inertia}, {"clusters", clusters}, {"notes", notes}};
}

}  // namespace

void RunConfig::validate() const {
  if (backend != "featurizer" && backend != "file") throw std::invalid_argument("backend must be 'featurizer' or 'file'");
  if (backend == "featurizer" && featurizer_dim < 2) throw std::invalid_argument("featurizer_dim must be >= 2");
  if (!(outlier_fraction > 0.0 && outlier_fraction < 1.0)) throw std::invalid_argument("outlier_fraction must be in (0, 1)");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw std::invalid_argument("keep_fraction must be in (0, 1]");
  if (k_selection.k_min < 2 || k_selection.k_max < k_selection.k_min) throw std::invalid_argument("invalid k range");
  if (k_selection.restarts == 0) throw std::invalid_argument("restarts must be >= 1");
  if (top_m == 0) throw std::invalid_argument("top_m must be >= 1");
  contrastive.validate();
  train.validate();
}

json RunConfig::to_json() const {
  json j = {{"manifest", manifest.string()},
            {"backend", backend},
            {"method", osld::to_string(method)},
            {"featurizer_dim", featurizer_dim},
            {"outlier_fraction", outlier_fraction},
            {"k_min", k_selection.k_min},
            {"k_max", k_selection.k_max},
            {"restarts", k_selection.restarts},
            {"silhouette_cap", k_selection.silhouette_cap},
            {"kmeans_max_iterations", k_selection.kmeans.max_iterations},
            {"kmeans_tolerance", k_selection.kmeans.tolerance},
            {"keep_fraction", keep_fraction},
            {"top_m", top_m},
            {"contrastive", contrastive.to_json()},
            {"train", train.to_json()}};
  j["seed"] = seed ? json(*seed) : json(nullptr);
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  c.manifest = j.at("manifest").get<std::string>();
  c.backend = j.value("backend", c.backend);
  c.method = method_from_string(j.value("method", std::string("v1")));
  if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
  c.featurizer_dim = j.value("featurizer_dim", c.featurizer_dim);
  c.outlier_fraction = j.value("outlier_fraction", c.outlier_fraction);
  c.k_selection.k_min = j.value("k_min", c.k_selection.k_min);
  c.k_selection.k_max = j.value("k_max", c.k_selection.k_max);
  c.k_selection.restarts = j.value("restarts", c.k_selection.restarts);
  c.k_selection.silhouette_cap = j.value("silhouette_cap", c.k_selection.silhouette_cap);
  c.k_selection.kmeans.max_iterations = j.value("kmeans_max_iterations", c.k_selection.kmeans.max_iterations);
  c.k_selection.kmeans.tolerance = j.value("kmeans_tolerance", c.k_selection.kmeans.tolerance);
  c.keep_fraction = j.value("keep_fraction", c.keep_fraction);
  c.top_m = j.value("top_m", c.top_m);
  if (j.contains("contrastive")) {
    c.contrastive.lambda = j["contrastive"].value("lambda", c.contrastive.lambda);
    c.contrastive.tau = j["contrastive"].value("tau", c.contrastive.tau);
  }
  if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
  return c;
}

namespace {

std::string join_entries(const ValidationReport& r) {
  std::string out = "manifest validation failed";
  for (const auto& e : r.entries) out += "\n  " + e;
  return out;
}

}  // namespace

ValidationFailed::ValidationFailed(ValidationReport report)
    : std::runtime_error(join_entries(report)), report_(std::move(report)) {}

MethodInputs method_inputs(const LoadedBenchmark& bench) {
  MethodInputs in;
  in.known_classes = bench.manifest.known_classes;
  in.train = &bench.set(Stage::train);
  in.val = bench.manifest.has(Stage::val) ? &bench.set(Stage::val) : nullptr;
  for (int i = 1; i <= 3; ++i) in.tests.emplace_back(bench.set(test_stage(i)));
  return in;
}

std::unique_ptr<EmbeddingBackend> make_backend(const RunConfig& config, const StageManifest& manifest,
                                               std::uint64_t seed) {
  if (config.backend == "file") return FileBackend::from_manifest(manifest);
  return std::make_unique<FeaturizerBackend>(config.featurizer_dim, seed);
}

MethodRun run_method(const RunConfig& config, const MethodInputs& inputs, EmbeddingBackend& backend,
                     std::uint64_t seed, const std::optional<fs::path>& out_dir) {
  config.validate();
  if (!inputs.train) throw std::invalid_argument("run_method: no training set");
  const json echo = config.to_json();
  MethodRun result;
  result.seed = seed;

  // Initial model on the known classes.
  std::vector<std::string_view> visible = texts_of(*inputs.train);
  backend.refit(visible);
  LabelSpace labels = known_label_space(inputs.known_classes);
  const std::vector<int> train_labels = label_indices(*inputs.train, labels);
  EmbeddingMatrix X_known = backend.embed_documents(document_refs(*inputs.train));

  TrainConfig initial_cfg = config.train;
  initial_cfg.seed = derive_seed(seed, 1);
  Network net = make_network(labels.ids(), backend.dim(), initial_cfg);
  train(net, X_known, train_labels, initial_cfg);
  if (inputs.val && !inputs.val->empty()) {
    try {
      const EmbeddingMatrix X_val = backend.embed_documents(document_refs(*inputs.val));
      result.validation_accuracy = accuracy(net, X_val, label_indices(*inputs.val, labels));
    } catch (const FormatError&) {
      result.validation_accuracy = 0.0;  // no validation embeddings for this backend
    }
  }
  if (out_dir) {
    fs::create_directories(*out_dir / "initial");
    write_network(*out_dir / "initial" / "network.ckpt", net, echo);
  }

  std::vector<ReplayItem> replay;
  for (int i = 1; i <= static_cast<int>(inputs.tests.size()); ++i) {
    const UnlabeledView& test = inputs.tests[static_cast<std::size_t>(i - 1)];
    const bool adaptive = config.method != Method::baseline;
    if (adaptive) {
      for (std::size_t d = 0; d < test.size(); ++d) visible.push_back(test.text(d));
      backend.refit(visible);
    }
    const EmbeddingMatrix X_test = backend.embed_documents(document_refs(test));
    std::optional<fs::path> dir;
    if (out_dir) {
      dir = stage_dir(*out_dir, i);
      fs::create_directories(*dir);
    }

    StageOutcome outcome;
    outcome.stage = i;
    outcome.ids = X_test.ids();

    auto fail = [&](std::string reason) {
      std::cerr << "stage " << i << ": discovery failed: " << reason << "\n";
      outcome.discovery_failed = true;
      outcome.failure_reason = std::move(reason);
    };

    if (adaptive) {
      const EnergyScores scores = score_energies(net, X_test);
      const OutlierSplit split = split_outliers(scores, config.outlier_fraction);
      if (dir) write_file_atomic(*dir / "energies.csv", energies_csv(scores, split));

      if (split.outliers.size() < 2) {
        fail("fewer than two outliers");
      } else {
        const EmbeddingMatrix X_out = X_test.select(split.outliers);
        const KSelection sel = select_k(X_out, derive_seed(seed, 100 + static_cast<std::uint64_t>(i)), config.k_selection);
        if (dir) write_json(*dir / "silhouette.json", sel.diagnostics());

        std::vector<std::vector<std::string_view>> cluster_texts(sel.best_k);
        std::vector<std::vector<std::string>> member_ids(sel.best_k);
        for (std::size_t r = 0; r < X_out.rows(); ++r) {
          const auto j = static_cast<std::size_t>(sel.best.labels[r]);
          cluster_texts[j].push_back(test.text(split.outliers[r]));
          member_ids[j].push_back(X_out.ids()[r]);
        }
        const auto keywords = cluster_keywords(cluster_texts, config.top_m);

        std::vector<std::optional<std::vector<float>>> centroids(sel.best_k);
        std::vector<std::string> notes;
        std::vector<ClusterProfile> profiles;
        for (std::size_t j = 0; j < sel.best_k; ++j) {
          if (keywords[j].empty()) {
            notes.push_back("cluster " + std::to_string(j) + " dropped: no discriminative keywords");
            continue;
          }
          try {
            centroids[j] = cluster_centroid(keywords[j], backend);
          } catch (const DegenerateCentroid& e) {
            notes.push_back("cluster " + std::to_string(j) + " dropped: " + e.what());
            continue;
          }
          profiles.push_back({j, keywords[j], *centroids[j]});
        }
        if (dir) write_json(*dir / "clusters.json", clusters_json(sel, keywords, member_ids, centroids, notes));

        if (profiles.empty()) {
          fail("all clusters degenerate");
        } else {
          // Restrict the assignment to the surviving clusters.
          ClusterAssignment kept_assignment;
          kept_assignment.k = profiles.size();
          kept_assignment.dim = X_out.dim();
          std::vector<std::size_t> rows;
          std::vector<std::vector<float>> kept_centroids;
          for (std::size_t p = 0; p < profiles.size(); ++p) {
            kept_centroids.push_back(profiles[p].centroid);
            const auto c = sel.best.centroid(profiles[p].cluster);
            kept_assignment.centroids.insert(kept_assignment.centroids.end(), c.begin(), c.end());
          }
          for (std::size_t r = 0; r < X_out.rows(); ++r) {
            for (std::size_t p = 0; p < profiles.size(); ++p) {
              if (static_cast<std::size_t>(sel.best.labels[r]) == profiles[p].cluster) {
                rows.push_back(r);
                kept_assignment.labels.push_back(static_cast<int>(p));
              }
            }
          }
          const EmbeddingMatrix X_kept = X_out.select(rows);
          const PseudoLabeledSet pseudo =
              select_pseudolabeled(kept_assignment, kept_centroids, X_kept, config.keep_fraction);
          if (dir) write_file_atomic(*dir / "pseudolabels.csv", pseudolabels_csv(pseudo));

          if (pseudo.kept_count() == 0) {
            fail("empty pseudo-labelled set");
          } else {
            Expansion ex = expand_label_space(labels, net, i, profiles, derive_seed(seed, 200 + static_cast<std::uint64_t>(i)));
            labels = std::move(ex.labels);
            net = std::move(ex.network);
            outcome.discovered_k = profiles.size();
            for (const auto& cand : pseudo.kept()) {
              const std::size_t test_row = split.outliers[rows[cand.row]];
              replay.push_back({test.stage(), test.id(test_row), test.text(test_row),
                                discovered_class_id(i, profiles[cand.cluster].cluster)});
            }

            // The backend may have been refit, so everything is re-embedded.
            X_known = backend.embed_documents(document_refs(*inputs.train));
            std::vector<DocumentRef> refs;
            refs.reserve(replay.size());
            for (const auto& item : replay) refs.push_back({item.stage, item.id, item.text});
            const EmbeddingMatrix X_pseudo = backend.embed_documents(refs);

            std::vector<std::vector<float>> all_centroids;
            std::vector<std::size_t> centroid_of_class(labels.size(), 0);
            for (std::size_t c = 0; c < labels.size(); ++c) {
              if (!labels.classes[c].discovered()) continue;
              centroid_of_class[c] = all_centroids.size();
              all_centroids.push_back(cluster_centroid(labels.classes[c].keywords, backend));
            }
            std::vector<int> pseudo_labels;
            std::vector<std::size_t> pseudo_centroid;
            for (const auto& item : replay) {
              const auto idx = *labels.index_of(item.class_id);
              pseudo_labels.push_back(static_cast<int>(idx));
              pseudo_centroid.push_back(centroid_of_class[idx]);
            }

            RetrainData data;
            data.known = &X_known;
            data.known_labels = train_labels;
            data.pseudo = &X_pseudo;
            data.pseudo_labels = pseudo_labels;
            data.pseudo_centroid = pseudo_centroid;
            data.centroids = &all_centroids;
            TrainConfig stage_cfg = config.train;
            stage_cfg.seed = derive_seed(seed, 300 + static_cast<std::uint64_t>(i));
            retrain(net, data, config.method, stage_cfg, config.contrastive);
          }
        }
      }
    }

    outcome.predictions = predict_all(net, labels, X_test);
    outcome.labels = labels;
    outcome.backend_state = backend.state();
    if (dir) write_stage_outcome(*dir, outcome, net, echo);
    result.stages.push_back(std::move(outcome));
  }
  result.network = std::move(net);
  return result;
}

EvaluationReport evaluate_outcomes(const RunConfig& config, const LoadedBenchmark& bench, const MethodRun& run) {
  EvaluationReport report;
  report.method = to_string(config.method);
  report.backend = config.backend;
  report.seed = run.seed;
  report.validation_accuracy = run.validation_accuracy;

  const StageManifest& manifest = bench.manifest;
  const std::set<std::string> known(manifest.known_classes.begin(), manifest.known_classes.end());
  std::unique_ptr<EmbeddingBackend> file_backend;

  for (const auto& outcome : run.stages) {
    std::unique_ptr<EmbeddingBackend> stage_backend;
    const EmbeddingBackend* backend = nullptr;
    if (outcome.backend_state.at("backend") == "featurizer") {
      stage_backend =
          std::make_unique<FeaturizerBackend>(Featurizer::from_json(outcome.backend_state.at("featurizer")));
      backend = stage_backend.get();
    } else {
      if (!file_backend) file_backend = FileBackend::from_manifest(manifest);
      backend = file_backend.get();
    }

    std::vector<std::string> discovered_ids, discovered_texts;
    for (const auto& c : outcome.labels.classes) {
      if (!c.discovered()) continue;
      discovered_ids.push_back(c.id);
      std::string text;
      for (const auto& kw : c.keywords) {
        if (!text.empty()) text += ' ';
        text += kw.token;
      }
      discovered_texts.push_back(std::move(text));
    }
    std::vector<std::string> gt;
    for (const auto& name : manifest.classes_of(test_stage(outcome.stage))) {
      if (!known.count(name)) gt.push_back(name);
    }

    StageEvaluation se;
    se.stage = outcome.stage;
    se.discovered_k = outcome.discovered_k;
    se.discovery_failed = outcome.discovery_failed;
    se.failure_reason = outcome.failure_reason;
    se.match = match_classes(discovered_ids, discovered_texts, gt, *backend);

    const DocumentSet& set = bench.set(test_stage(outcome.stage));
    std::map<std::string, std::string> predictions, golds;
    for (std::size_t r = 0; r < outcome.ids.size(); ++r) {
      const std::string& pred = outcome.predictions[r];
      auto it = se.match.mapping.find(pred);
      predictions[outcome.ids[r]] = it != se.match.mapping.end() ? it->second : pred;
    }
    for (std::size_t d = 0; d < set.size(); ++d) golds[set.id(d)] = *set.gold_label(d);
    const auto fresh = manifest.new_classes(outcome.stage);
    se.metrics = grouped_metrics(predictions, golds, known, std::set<std::string>(fresh.begin(), fresh.end()));
    report.stages.push_back(std::move(se));
  }
  return report;
}

namespace {

EvaluationReport execute(const RunConfig& config, const std::optional<fs::path>& out_dir) {
  config.validate();
  const LoadedBenchmark bench = load_benchmark(config.manifest);
  const ValidationReport validation = validate_manifest(bench.manifest, bench.sets);
  if (!validation.passed) throw ValidationFailed(validation);
  const std::uint64_t seed = config.seed.value_or(bench.manifest.seed);

  std::optional<RunLock> lock;
  if (out_dir) {
    fs::create_directories(*out_dir);
    lock.emplace(*out_dir);
    RunConfig echo = config;
    echo.manifest = fs::absolute(config.manifest).lexically_normal();
    json record = {{"format", kRunFormat},
                   {"config", echo.to_json()},
                   {"seed", seed},
                   {"formats",
                    {{"checkpoint", "osld-head/1"},
                     {"embeddings", "OSLDEMB1"},
                     {"report", "osld-report/1"},
                     {"featurizer", "osld-featurizer/1"}}}};
    write_json(*out_dir / "run.json", record);
  }

  auto backend = make_backend(config, bench.manifest, seed);
  const MethodRun run = run_method(config, method_inputs(bench), *backend, seed, out_dir);
  EvaluationReport report = evaluate_outcomes(config, bench, run);
  if (out_dir) {
    json record = read_json(*out_dir / "run.json");
    record["validation_accuracy"] = run.validation_accuracy;
    write_json(*out_dir / "run.json", record);
    write_json(*out_dir / "report.json", report.to_json());
  }
  return report;
}

}  // namespace

EvaluationReport run_baseline(RunConfig config, const std::optional<fs::path>& out_dir) {
  config.method = Method::baseline;
  return execute(config, out_dir);
}

EvaluationReport run_osld(RunConfig config, const std::optional<fs::path>& out_dir) {
  if (config.method == Method::baseline) throw std::invalid_argument("run_osld: method must be v1 or v2");
  return execute(config, out_dir);
}

EvaluationReport run(const RunConfig& config, const std::optional<fs::path>& out_dir) {
  return config.method == Method::baseline ? run_baseline(config, out_dir) : run_osld(config, out_dir);
}

EvaluationReport evaluate_run(const fs::path& run_dir) {
  const fs::path record_path = run_dir / "run.json";
  if (!fs::exists(record_path)) throw std::runtime_error("not a run directory (no run.json): " + run_dir.string());
  const json record = read_json(record_path);
  if (record.value("format", std::string{}) != kRunFormat) throw FormatError(record_path.string() + ": unknown format");
  const RunConfig config = RunConfig::from_json(record.at("config"));
  const LoadedBenchmark bench = load_benchmark(config.manifest);

  MethodRun run;
  run.seed = record.at("seed").get<std::uint64_t>();
  run.validation_accuracy = record.value("validation_accuracy", 0.0);
  for (int i = 1; i <= 3; ++i) {
    const fs::path dir = stage_dir(run_dir, i);
    if (!fs::exists(dir / "stage.json")) throw std::runtime_error("incomplete run: missing " + dir.string());
    run.stages.push_back(read_stage_outcome(dir));
  }
  EvaluationReport report = evaluate_outcomes(config, bench, run);
  write_json(run_dir / "report.json", report.to_json());
  return report;
}

}  // namespace osld
