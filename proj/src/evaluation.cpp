#include "osld/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "osld/util.hpp"

namespace osld {

using nlohmann::json;

Assignment hungarian(const Matrix2D& cost) {
  const std::size_t p = cost.size();
  if (p == 0 || cost[0].empty()) throw std::invalid_argument("hungarian: empty matrix");
  const std::size_t q = cost[0].size();
  double max_entry = -std::numeric_limits<double>::infinity();
  for (const auto& row : cost) {
    if (row.size() != q) throw std::invalid_argument("hungarian: ragged matrix");
    for (double v : row) {
      if (!std::isfinite(v)) throw std::invalid_argument("hungarian: non-finite entry");
      max_entry = std::max(max_entry, v);
    }
  }
  const std::size_t n = std::max(p, q);
  const double pad = max_entry + 1.0;
  auto at = [&](std::size_t i, std::size_t j) { return (i < p && j < q) ? cost[i][j] : pad; };

  // Shortest augmenting path with row/column potentials (1-based, column 0
  // is the virtual source).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (match[j] != 0) row_to_col[match[j] - 1] = j - 1;
  }
  Assignment out;
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t j = row_to_col[i];
    if (j < q) {
      out.pairs.emplace_back(i, j);
      out.total_cost += cost[i][j];
    }
  }
  return out;
}

Matrix2D similarity_matrix(const std::vector<std::string>& discovered_texts, const std::vector<std::string>& class_names,
                           const EmbeddingBackend& backend, DegeneratePolicy policy) {
  auto embed_all = [&](const std::vector<std::string>& texts, const char* what) {
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
      auto v = backend.embed_text(t);
      if (l2_norm(v) == 0.0 && policy == DegeneratePolicy::error) {
        throw std::runtime_error(std::string("similarity_matrix: degenerate embedding for ") + what + " '" + t + "'");
      }
      out.push_back(std::move(v));
    }
    return out;
  };
  const auto rows = embed_all(discovered_texts, "discovered class");
  const auto cols = embed_all(class_names, "class name");
  Matrix2D sim(rows.size(), std::vector<double>(cols.size(), 0.0));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (l2_norm(rows[j]) == 0.0 || l2_norm(cols[c]) == 0.0) continue;
      sim[j][c] = cosine(rows[j], cols[c]);
    }
  }
  return sim;
}

MatchResult match_classes(const std::vector<std::string>& discovered_ids,
                          const std::vector<std::string>& discovered_texts,
                          const std::vector<std::string>& ground_truth, const EmbeddingBackend& backend) {
  if (discovered_ids.size() != discovered_texts.size()) throw std::invalid_argument("match_classes: size mismatch");
  MatchResult r;
  r.discovered = discovered_ids;
  r.ground_truth = ground_truth;
  if (discovered_ids.empty() || ground_truth.empty()) return r;
  for (std::size_t j = 0; j < discovered_texts.size(); ++j) {
    if (l2_norm(backend.embed_text(discovered_texts[j])) == 0.0) r.degenerate.push_back(discovered_ids[j]);
  }
  for (const auto& name : ground_truth) {
    if (l2_norm(backend.embed_text(name)) == 0.0) r.degenerate.push_back(name);
  }
  r.similarity = similarity_matrix(discovered_texts, ground_truth, backend, DegeneratePolicy::zero);
  Matrix2D cost = r.similarity;
  for (auto& row : cost) {
    for (double& v : row) v = -v;
  }
  for (const auto& [row, col] : hungarian(cost).pairs) {
    r.mapping.emplace(discovered_ids[row], ground_truth[col]);
    r.total_similarity += r.similarity[row][col];
  }
  return r;
}

json MatchResult::to_json() const {
  json pairs = json::array();
  for (std::size_t j = 0; j < discovered.size(); ++j) {
    auto it = mapping.find(discovered[j]);
    json entry = {{"discovered", discovered[j]}};
    if (it != mapping.end()) {
      const auto col = static_cast<std::size_t>(
          std::find(ground_truth.begin(), ground_truth.end(), it->second) - ground_truth.begin());
      entry["matched"] = it->second;
      entry["similarity"] = similarity[j][col];
    } else {
      entry["matched"] = nullptr;
    }
    pairs.push_back(std::move(entry));
  }
  return {{"pairs", pairs},
          {"ground_truth", ground_truth},
          {"similarity", similarity},
          {"total_similarity", total_similarity},
          {"degenerate", degenerate}};
}

GroupMetrics group_metrics(const std::vector<std::string>& predicted, const std::vector<std::string>& gold) {
  if (predicted.size() != gold.size()) throw std::invalid_argument("group_metrics: size mismatch");
  GroupMetrics m;
  m.count = gold.size();
  if (gold.empty()) return m;
  std::size_t correct = 0;
  std::map<std::string, std::size_t> tp, fp, fn;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predicted[i] == gold[i]) {
      ++correct;
      ++tp[gold[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[gold[i]];
    }
  }
  std::set<std::string> classes(gold.begin(), gold.end());
  double f1_sum = 0.0;
  for (const auto& c : classes) {
    const double t = static_cast<double>(tp[c]);
    const double denom = 2.0 * t + static_cast<double>(fp[c]) + static_cast<double>(fn[c]);
    f1_sum += denom > 0.0 ? 2.0 * t / denom : 0.0;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(gold.size());
  m.macro_f1 = f1_sum / static_cast<double>(classes.size());
  return m;
}

GroupedMetrics grouped_metrics(const std::map<std::string, std::string>& predictions,
                               const std::map<std::string, std::string>& golds, const std::set<std::string>& known,
                               const std::set<std::string>& stage_new) {
  GroupedMetrics g;
  std::vector<std::string> all_p, all_g, known_p, known_g, new_p, new_g;
  for (const auto& [id, gold] : golds) {
    auto it = predictions.find(id);
    if (it == predictions.end()) throw std::invalid_argument("grouped_metrics: missing prediction for id '" + id + "'");
    const std::string& pred = it->second;
    all_p.push_back(pred);
    all_g.push_back(gold);
    if (known.count(gold)) {
      known_p.push_back(pred);
      known_g.push_back(gold);
    } else if (stage_new.count(gold)) {
      new_p.push_back(pred);
      new_g.push_back(gold);
    }
    ++g.confusion[gold][pred];
  }
  g.overall = group_metrics(all_p, all_g);
  g.known = group_metrics(known_p, known_g);
  g.unknown = group_metrics(new_p, new_g);
  return g;
}

namespace {

json group_json(const GroupMetrics& m) {
  return {{"count", m.count}, {"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}};
}

GroupMetrics group_from_json(const json& j) {
  return {j.at("count").get<std::size_t>(), j.at("accuracy").get<double>(), j.at("macro_f1").get<double>()};
}

}  // namespace

json EvaluationReport::to_json() const {
  json stages_json = json::array();
  for (const auto& s : stages) {
    json entry = {{"stage", s.stage},
                  {"discovered_k", s.discovered_k},
                  {"discovery_failed", s.discovery_failed},
                  {"groups",
                   {{"overall", group_json(s.metrics.overall)},
                    {"known", group_json(s.metrics.known)},
                    {"unknown", group_json(s.metrics.unknown)}}},
                  {"confusion", s.metrics.confusion},
                  {"matching", s.match.to_json()}};
    if (s.discovery_failed) entry["failure_reason"] = s.failure_reason;
    stages_json.push_back(std::move(entry));
  }
  return {{"format", "osld-report/1"},
          {"method", method},
          {"backend", backend},
          {"seed", seed},
          {"validation_accuracy", validation_accuracy},
          {"stages", stages_json}};
}

EvaluationReport EvaluationReport::from_json(const json& j) {
  EvaluationReport r;
  r.method = j.at("method").get<std::string>();
  r.backend = j.at("backend").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.validation_accuracy = j.value("validation_accuracy", 0.0);
  for (const auto& s : j.at("stages")) {
    StageEvaluation e;
    e.stage = s.at("stage").get<int>();
    e.discovered_k = s.at("discovered_k").get<std::size_t>();
    e.discovery_failed = s.at("discovery_failed").get<bool>();
    e.failure_reason = s.value("failure_reason", std::string{});
    const auto& groups = s.at("groups");
    e.metrics.overall = group_from_json(groups.at("overall"));
    e.metrics.known = group_from_json(groups.at("known"));
    e.metrics.unknown = group_from_json(groups.at("unknown"));
    e.metrics.confusion = s.at("confusion").get<std::map<std::string, std::map<std::string, std::size_t>>>();
    r.stages.push_back(std::move(e));
  }
  return r;
}

std::string format_table(const std::vector<EvaluationReport>& reports) {
  std::size_t n_stages = 0;
  std::size_t label_width = 8;
  for (const auto& r : reports) {
    n_stages = std::max(n_stages, r.stages.size());
    label_width = std::max(label_width, r.method.size() + r.backend.size() + 3);
  }
  std::ostringstream out;
  const char* groups[] = {"overall", "known", "unknown"};
  for (const char* group : groups) {
    out << "[" << group << "]\n";
    out << std::string(label_width, ' ');
    for (std::size_t s = 0; s < n_stages; ++s) {
      char head[32];
      std::snprintf(head, sizeof head, " | %-13s", ("Test " + std::to_string(s + 1)).c_str());
      out << head;
    }
    out << "\n" << std::string(label_width, ' ');
    for (std::size_t s = 0; s < n_stages; ++s) out << " | Acc   / F1   ";
    out << "\n";
    for (const auto& r : reports) {
      std::string label = r.method + " (" + r.backend + ")";
      label.resize(label_width, ' ');
      out << label;
      for (const auto& st : r.stages) {
        const GroupMetrics& m = std::string(group) == "overall" ? st.metrics.overall
                                : std::string(group) == "known" ? st.metrics.known
                                                                : st.metrics.unknown;
        char cell[32];
        std::snprintf(cell, sizeof cell, " | %.3f / %.3f", m.accuracy, m.macro_f1);
        out << cell;
      }
      out << "\n";
    }
    out << "\n";
  }
  std::string text = out.str(), trimmed;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    std::string line = text.substr(start, nl - start);
    line.erase(line.find_last_not_of(' ') + 1);
    trimmed += line + "\n";
    start = nl + 1;
  }
  return trimmed;
}

}  // namespace osld
