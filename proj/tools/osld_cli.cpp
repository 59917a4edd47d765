#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "osld/dataset.hpp"
#include "osld/embeddings.hpp"
#include "osld/pipeline.hpp"
#include "osld/synthbench.hpp"
#include "osld/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;

int cmd_validate(const std::string& manifest_path) {
  const osld::LoadedBenchmark bench = osld::load_benchmark(manifest_path);
  const osld::ValidationReport report = osld::validate_manifest(bench.manifest, bench.sets);
  for (const auto& e : report.entries) std::cout << "  " << e << "\n";
  std::cout << (report.passed ? "PASS" : "FAIL") << " " << manifest_path << "\n";
  return report.passed ? kOk : kInvalid;
}

int cmd_featurize(const std::string& manifest_path, std::size_t dim, const std::string& out, const std::string& stage_name,
                  std::optional<std::uint64_t> seed) {
  const osld::LoadedBenchmark bench = osld::load_benchmark(manifest_path);
  const osld::Stage stage = osld::stage_from_string(stage_name);
  const osld::DocumentSet& target = bench.set(stage);

  // Fit on every text visible at the requested stage.
  std::vector<std::string_view> visible;
  auto add = [&](osld::Stage s) {
    const auto& set = bench.set(s);
    for (std::size_t i = 0; i < set.size(); ++i) visible.push_back(set.text(i));
  };
  add(osld::Stage::train);
  if (osld::is_test_stage(stage)) {
    for (int i = 1; i <= osld::test_index(stage); ++i) add(osld::test_stage(i));
  }
  osld::FeaturizerBackend backend(dim, seed.value_or(bench.manifest.seed));
  backend.refit(visible);
  const osld::EmbeddingMatrix m = backend.embed_documents(osld::document_refs(target));
  osld::write_embeddings(out, m);
  std::cout << "wrote " << m.rows() << " x " << m.dim() << " embeddings to " << out << "\n";
  return kOk;
}

int cmd_run(osld::RunConfig config, const std::string& out) {
  const osld::EvaluationReport report = osld::run(config, fs::path(out));
  std::cout << osld::format_table({report});
  return kOk;
}

osld::EvaluationReport load_report(const fs::path& run_dir) {
  const fs::path p = run_dir / "report.json";
  if (!fs::exists(p)) return osld::evaluate_run(run_dir);
  return osld::EvaluationReport::from_json(json::parse(osld::read_file(p)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set learning and discovery for staged text classification"};
  app.require_subcommand(1);

  std::string manifest;
  auto* validate = app.add_subcommand("validate", "Check a benchmark manifest and its stage files");
  validate->add_option("manifest", manifest, "Manifest JSON")->required();

  std::size_t dim = 256;
  std::string emb_out, stage_name = "train";
  std::optional<std::uint64_t> feat_seed;
  auto* featurize = app.add_subcommand("featurize", "Write featurizer embeddings for one stage");
  featurize->add_option("manifest", manifest, "Manifest JSON")->required();
  featurize->add_option("--dim", dim, "Embedding dimension")->check(CLI::Range(2, 1 << 20));
  featurize->add_option("--out", emb_out, "Output OSLDEMB1 file")->required();
  featurize->add_option("--stage", stage_name, "Stage to embed (train, val, test1..test3)");
  featurize->add_option("--seed", feat_seed, "Hash seed (default: manifest seed)");

  osld::RunConfig config;
  std::string method = "v1", run_out, config_file, profile = "default";
  std::optional<std::uint64_t> run_seed;
  auto* run = app.add_subcommand("run", "Run a method over all stages");
  run->add_option("--manifest", manifest, "Manifest JSON")->required();
  run->add_option("--method", method, "baseline, v1 or v2")->check(CLI::IsMember({"baseline", "v1", "v2"}));
  run->add_option("--backend", config.backend, "file or featurizer")->check(CLI::IsMember({"file", "featurizer"}));
  run->add_option("--out", run_out, "Run directory")->required();
  run->add_option("--seed", run_seed, "Run seed (default: manifest seed)");
  run->add_option("--profile", profile, "Optimizer profile")->check(CLI::IsMember({"default", "finetune"}));
  run->add_option("--config", config_file, "JSON file with configuration overrides");
  run->add_option("--featurizer-dim", config.featurizer_dim, "Featurizer dimension");

  std::string run_dir, format = "table";
  auto* evaluate = app.add_subcommand("evaluate", "Recompute the report of a run directory");
  evaluate->add_option("run_dir", run_dir, "Run directory")->required();
  auto* report = app.add_subcommand("report", "Print the report of a run directory");
  report->add_option("run_dir", run_dir, "Run directory")->required();
  report->add_option("--format", format, "json or table")->check(CLI::IsMember({"json", "table"}));

  std::string spec_file, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic staged benchmark");
  synth->add_option("--spec", spec_file, "Spec JSON (use {} for defaults)")->required();
  synth->add_option("--out", synth_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kRuntime;
  }

  try {
    if (*validate) return cmd_validate(manifest);
    if (*featurize) return cmd_featurize(manifest, dim, emb_out, stage_name, feat_seed);
    if (*run) {
      if (!config_file.empty()) {
        json overrides = json::parse(osld::read_file(config_file));
        json base = config.to_json();
        base["manifest"] = manifest;
        base.merge_patch(overrides);
        config = osld::RunConfig::from_json(base);
      }
      if (profile == "finetune") config.train = osld::TrainConfig::finetune_profile();
      config.manifest = manifest;
      config.method = osld::method_from_string(method);
      config.seed = run_seed;
      return cmd_run(config, run_out);
    }
    if (*evaluate) {
      std::cout << osld::format_table({osld::evaluate_run(run_dir)});
      return kOk;
    }
    if (*report) {
      const auto r = load_report(run_dir);
      std::cout << (format == "json" ? r.to_json().dump(2) + "\n" : osld::format_table({r}));
      return kOk;
    }
    if (*synth) {
      const json spec_json = spec_file == "{}" ? json::object() : json::parse(osld::read_file(spec_file));
      osld::SynthSpec spec;
      try {
        spec = osld::SynthSpec::from_json(spec_json);
        spec.validate();
      } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << "\n";
        return kInvalid;
      }
      const auto out = osld::generate(spec, synth_out);
      std::cout << "wrote " << out.files.size() << " files, manifest " << out.manifest.string() << "\n";
      return kOk;
    }
  } catch (const osld::ValidationFailed& e) {
    std::cerr << e.what() << "\n";
    return kInvalid;
  } catch (const osld::FormatError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kInvalid;
  } catch (const json::exception& e) {
    std::cerr << "invalid JSON: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kRuntime;
}
