#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "osld/adaptation.hpp"
#include "osld/classifier.hpp"
#include "osld/discovery.hpp"
#include "osld/evaluation.hpp"
#include "osld/openset.hpp"
#include "osld/pipeline.hpp"
#include "osld/synthbench.hpp"
#include "osld/util.hpp"
#include "test_support.hpp"

using namespace osld;
namespace fs = std::filesystem;

namespace {

constexpr double kEnergyShiftTol = 1e-9;
constexpr double kEnergyZeroTol = 1e-12;
constexpr double kGradientRelTol = 1e-4;
constexpr double kFiniteStep = 1e-3;
constexpr double kUniformTol = 1e-9;
constexpr int kSelectKTrials = 100;
constexpr int kSelectKRequired = 95;
constexpr double kT1UnknownMin = 0.80;
constexpr double kKnownMin = 0.90;
constexpr double kRuntimeMaxSeconds = 60.0;

struct Outcome {
  bool pass = true;
  std::string detail;
};

Outcome energy_algebra() {
  Rng rng(101);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.index(15);
    std::vector<double> h(n), shifted(n);
    const double c = rng.uniform(-50.0, 50.0);
    for (std::size_t i = 0; i < n; ++i) {
      h[i] = rng.uniform(-20.0, 20.0);
      shifted[i] = h[i] + c;
    }
    worst = std::max(worst, std::abs(energy(shifted) - (energy(h) - c)));
  }
  const std::vector<double> zeros(4, 0.0);
  const double zero_err = std::abs(energy(zeros) + std::log(4.0));
  std::ostringstream d;
  d << "max shift error " << worst << ", zeros error " << zero_err;
  return {worst <= kEnergyShiftTol && zero_err <= kEnergyZeroTol, d.str()};
}

double ce_instance(Rng& rng, std::uint64_t seed) {
  const std::size_t n_cls = 2 + rng.index(5), d = 2 + rng.index(6), rows = 3 + rng.index(8);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < n_cls; ++c) names.push_back("c" + std::to_string(c));
  const ClassifierHead head = init_head(names, d, seed);
  EmbeddingMatrix X(0, d);
  std::vector<int> y;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<float> v(d);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    X.append("r" + std::to_string(r), v);
    y.push_back(static_cast<int>(rng.index(n_cls)));
  }
  const auto g = ce_loss_and_grad(head, X, y);
  const std::vector<double> W(head.weight.begin(), head.weight.end()), b(head.bias.begin(), head.bias.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < W.size(); ++i) {
    auto p = W, m = W;
    p[i] += kFiniteStep;
    m[i] -= kFiniteStep;
    const double fd = (fixtures::ce_oracle(p, b, X, y, n_cls) - fixtures::ce_oracle(m, b, X, y, n_cls)) / (2 * kFiniteStep);
    worst = std::max(worst, fixtures::relative_error(fd, g.weight[i]));
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto p = b, m = b;
    p[i] += kFiniteStep;
    m[i] -= kFiniteStep;
    const double fd = (fixtures::ce_oracle(W, p, X, y, n_cls) - fixtures::ce_oracle(W, m, X, y, n_cls)) / (2 * kFiniteStep);
    worst = std::max(worst, fixtures::relative_error(fd, g.bias[i]));
  }
  return worst;
}

double cl_instance(Rng& rng) {
  const std::size_t k = 2 + rng.index(5), d = 2 + rng.index(6), rows = 1 + rng.index(6);
  const double tau = rng.uniform(0.3, 1.0);
  std::vector<std::vector<float>> C(k, std::vector<float>(d));
  for (auto& c : C) {
    for (auto& v : c) v = static_cast<float>(rng.normal());
  }
  std::vector<std::vector<double>> E(rows, std::vector<double>(d));
  std::vector<std::size_t> y;
  for (auto& e : E) {
    for (auto& v : e) v = rng.normal();
    y.push_back(rng.index(k));
  }
  const auto r = contrastive_loss_and_grad(E, y, C, tau);
  double worst = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      auto p = E, m = E;
      p[i][c] += kFiniteStep;
      m[i][c] -= kFiniteStep;
      const double fd = (fixtures::cl_oracle(p, y, C, tau) - fixtures::cl_oracle(m, y, C, tau)) / (2 * kFiniteStep);
      worst = std::max(worst, fixtures::relative_error(fd, r.grad[i][c]));
    }
  }
  return worst;
}

Outcome gradient_suites() {
  Rng rng(202);
  double ce = 0.0, cl = 0.0;
  for (int t = 0; t < 50; ++t) ce = std::max(ce, ce_instance(rng, static_cast<std::uint64_t>(t)));
  for (int t = 0; t < 50; ++t) cl = std::max(cl, cl_instance(rng));
  std::ostringstream d;
  d << "max rel error CE " << ce << ", contrastive " << cl;
  return {ce <= kGradientRelTol && cl <= kGradientRelTol, d.str()};
}

nlohmann::json without_method(nlohmann::json j) {
  j.erase("method");
  return j;
}

Outcome contrastive_identities(const fs::path& manifest) {
  double worst = 0.0;
  Rng rng(303);
  for (std::size_t k = 2; k <= 8; ++k) {
    // Centroids span the last k axes; embeddings live on the first.
    const std::size_t d = k + 3;
    std::vector<std::vector<float>> C(k, std::vector<float>(d, 0.0f));
    for (std::size_t j = 0; j < k; ++j) C[j][3 + j] = static_cast<float>(rng.uniform(0.5, 2.0));
    std::vector<std::vector<double>> E(4, std::vector<double>(d, 0.0));
    std::vector<std::size_t> y;
    for (auto& e : E) {
      for (std::size_t c = 0; c < 3; ++c) e[c] = rng.normal();
      y.push_back(rng.index(k));
    }
    worst = std::max(worst, std::abs(contrastive_loss_and_grad(E, y, C, 0.07).loss - std::log(static_cast<double>(k))));
  }
  RunConfig v1;
  v1.manifest = manifest;
  v1.backend = "file";
  v1.method = Method::v1;
  RunConfig v2 = v1;
  v2.method = Method::v2;
  v2.contrastive.lambda = 0.0;
  const bool same = without_method(run(v1).to_json()) == without_method(run(v2).to_json());
  std::ostringstream d;
  d << "max |loss - ln k| " << worst << ", v2(lambda=0) report " << (same ? "identical to" : "differs from") << " v1";
  return {worst <= kUniformTol && same, d.str()};
}

Outcome hungarian_oracle() {
  Rng rng(404);
  std::size_t mismatches = 0, total = 0;
  for (std::size_t n = 2; n <= 7; ++n) {
    for (int t = 0; t < 200; ++t, ++total) {
      Matrix2D m(n, std::vector<double>(n));
      for (auto& row : m) {
        for (auto& v : row) v = static_cast<double>(rng.index(1000)) / 8.0;
      }
      if (hungarian(m).total_cost != fixtures::brute_force_min(m)) ++mismatches;
    }
  }
  std::ostringstream d;
  d << mismatches << " mismatches in " << total << " matrices";
  return {mismatches == 0, d.str()};
}

Outcome clustering() {
  Rng rng(505);
  std::size_t increases = 0, out_of_range = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k_true = 2 + rng.index(5);
    const auto blobs = fixtures::make_blobs(k_true, 20 + rng.index(30), 2 + rng.index(8), 1.0, rng.uniform(0.1, 1.0),
                                            static_cast<std::uint64_t>(t));
    const std::size_t k = 2 + rng.index(6);
    const auto a = kmeans(blobs.X, k, static_cast<std::uint64_t>(1000 + t));
    for (std::size_t i = 1; i < a.inertia_history.size(); ++i) {
      if (a.inertia_history[i] > a.inertia_history[i - 1]) ++increases;
    }
    const double s = silhouette(blobs.X, a);
    if (!(s >= -1.0 && s <= 1.0)) ++out_of_range;
  }
  int hits3 = 0, hits5 = 0;
  for (int t = 0; t < kSelectKTrials; ++t) {
    const auto seed = static_cast<std::uint64_t>(t);
    const auto b3 = fixtures::make_blobs(3, 40, 8, 1.0, 1.0 / 20.0, seed);
    const auto b5 = fixtures::make_blobs(5, 40, 8, 1.0, 1.0 / 20.0, seed + 500);
    hits3 += select_k(b3.X, seed).best_k == 3;
    hits5 += select_k(b5.X, seed).best_k == 5;
  }
  std::ostringstream d;
  d << increases << " inertia increases, " << out_of_range << " silhouettes out of range, select_k " << hits3
    << "/100 (3 blobs) " << hits5 << "/100 (5 blobs)";
  return {increases == 0 && out_of_range == 0 && hits3 >= kSelectKRequired && hits5 >= kSelectKRequired, d.str()};
}

Outcome outlier_split() {
  Rng rng(606);
  std::size_t bad_count = 0, bad_order = 0;
  for (std::size_t n = 1; n <= 200; ++n) {
    EnergyScores s;
    for (std::size_t i = 0; i < n; ++i) {
      char id[16];
      std::snprintf(id, sizeof id, "d%04zu", rng.index(10000));
      s.ids.push_back(std::string(id) + "-" + std::to_string(i));
      // Coarse values force ties at the cut.
      s.energy.push_back(static_cast<double>(rng.index(12)) - 6.0);
    }
    const auto split = split_outliers(s, 0.15);
    const std::size_t expected = (15 * n + 99) / 100;
    if (split.outliers.size() != expected || split.outliers.size() + split.inliers.size() != n) ++bad_count;
    for (std::size_t o : split.outliers) {
      for (std::size_t i : split.inliers) {
        const bool ok = s.energy[o] > s.energy[i] || (s.energy[o] == s.energy[i] && s.ids[o] < s.ids[i]);
        if (!ok) ++bad_order;
      }
    }
  }
  std::ostringstream d;
  d << bad_count << " wrong sizes, " << bad_order << " ordering violations over n = 1..200";
  return {bad_count == 0 && bad_order == 0, d.str()};
}

Outcome baseline_zero(const fs::path& work) {
  std::ostringstream d;
  bool pass = true;
  std::vector<std::pair<std::string, SynthSpec>> benches;
  benches.emplace_back("embedding", SynthSpec{});
  SynthSpec text;
  text.mode = "text";
  text.seed = 7;
  text.test_per_class = 40;
  benches.emplace_back("text", text);
  for (const auto& [name, spec] : benches) {
    const auto out = generate(spec, work / ("baseline-" + name));
    RunConfig c;
    c.manifest = out.manifest;
    c.backend = name == "embedding" ? "file" : "featurizer";
    c.method = Method::baseline;
    const auto rep = run(c);
    d << name << ":";
    for (const auto& s : rep.stages) {
      pass = pass && s.metrics.unknown.accuracy == 0.0 && s.metrics.unknown.macro_f1 == 0.0 && s.metrics.unknown.count > 0;
      d << " " << s.metrics.unknown.accuracy << "/" << s.metrics.unknown.macro_f1;
    }
    d << " ";
  }
  return {pass && benches.size() == 2, d.str()};
}

Outcome end_to_end(const fs::path& manifest) {
  RunConfig c;
  c.manifest = manifest;
  c.backend = "file";
  c.method = Method::v1;
  const auto start = std::chrono::steady_clock::now();
  const auto rep = run(c);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool pass = rep.stages.size() == 3 && seconds < kRuntimeMaxSeconds;
  std::ostringstream d;
  d.precision(3);
  for (const auto& s : rep.stages) {
    pass = pass && s.metrics.known.accuracy >= kKnownMin;
    d << "T" << s.stage << " known " << s.metrics.known.accuracy << " unknown " << s.metrics.unknown.accuracy << "; ";
  }
  if (!rep.stages.empty()) pass = pass && rep.stages[0].metrics.unknown.accuracy >= kT1UnknownMin;
  d << seconds << " s";
  return {pass, d.str()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(OSLD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism(const fs::path& manifest, const fs::path& work) {
  bool pass = true;
  std::ostringstream d;
  for (const std::string backend : {"file", "featurizer"}) {
    std::string reports[2];
    for (int i = 0; i < 2; ++i) {
      const fs::path dir = work / ("det-" + backend + std::to_string(i));
      const int code = run_cli("run --manifest " + manifest.string() + " --method v2 --backend " + backend + " --out " +
                               dir.string() + " --seed 11");
      if (code != 0) {
        pass = false;
        d << backend << " exit " << code << "; ";
        continue;
      }
      reports[i] = read_file(dir / "report.json");
    }
    const bool same = !reports[0].empty() && reports[0] == reports[1];
    pass = pass && same;
    d << backend << (same ? " identical" : " differ") << "; ";
  }
  return {pass, d.str()};
}

}  // namespace

int main() {
  fixtures::TempDir work("osld-acceptance");
  const auto bench = generate(SynthSpec{}, work / "default");

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"energy-algebra", energy_algebra},
      {"gradient-suites", gradient_suites},
      {"contrastive-identities", [&] { return contrastive_identities(bench.manifest); }},
      {"hungarian-oracle", hungarian_oracle},
      {"kmeans-silhouette", clustering},
      {"outlier-split", outlier_split},
      {"baseline-zero", [&] { return baseline_zero(work.path()); }},
      {"end-to-end-synthetic", [&] { return end_to_end(bench.manifest); }},
      {"determinism", [&] { return determinism(bench.manifest, work.path()); }},
  };

  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
