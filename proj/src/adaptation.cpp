#include "osld/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "osld/util.hpp"

namespace osld {

using nlohmann::json;

std::string to_string(Method m) {
  switch (m) {
    case Method::baseline: return "baseline";
    case Method::v1: return "v1";
    case Method::v2: return "v2";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  if (name == "baseline") return Method::baseline;
  if (name == "v1") return Method::v1;
  if (name == "v2") return Method::v2;
  throw std::invalid_argument("unknown method '" + name + "'");
}

std::vector<PseudoCandidate> PseudoLabeledSet::kept() const {
  std::vector<PseudoCandidate> out;
  for (const auto& c : clusters) {
    for (const auto& m : c) {
      if (m.kept) out.push_back(m);
    }
  }
  return out;
}

std::size_t PseudoLabeledSet::kept_count() const {
  std::size_t n = 0;
  for (const auto& c : clusters) n += static_cast<std::size_t>(std::count_if(c.begin(), c.end(), [](const auto& m) { return m.kept; }));
  return n;
}

PseudoLabeledSet select_pseudolabeled(const ClusterAssignment& assignment,
                                      const std::vector<std::vector<float>>& centroids, const EmbeddingMatrix& X,
                                      double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw std::invalid_argument("select_pseudolabeled: keep_fraction must be in (0, 1]");
  }
  if (centroids.size() != assignment.k) throw std::invalid_argument("select_pseudolabeled: centroid count mismatch");
  if (assignment.labels.size() != X.rows()) throw std::invalid_argument("select_pseudolabeled: labels misaligned");
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    if (centroids[j].size() != X.dim()) throw std::invalid_argument("select_pseudolabeled: centroid dimension mismatch");
    if (l2_norm(centroids[j]) == 0.0) {
      throw DegenerateCentroid("select_pseudolabeled: degenerate centroid for cluster " + std::to_string(j));
    }
  }
  PseudoLabeledSet out;
  out.clusters.resize(assignment.k);
  for (std::size_t i = 0; i < X.rows(); ++i) {
    const auto j = static_cast<std::size_t>(assignment.labels[i]);
    const auto row = X.row(i);
    const double sim = l2_norm(row) == 0.0 ? 0.0 : cosine(row, centroids[j]);
    out.clusters[j].push_back({i, X.ids()[i], j, sim, l2_norm(row) > 0.0});
  }
  for (auto& members : out.clusters) {
    std::sort(members.begin(), members.end(), [](const PseudoCandidate& a, const PseudoCandidate& b) {
      if (a.cosine != b.cosine) return a.cosine > b.cosine;
      if (a.id != b.id) return a.id < b.id;
      return a.row < b.row;
    });
    const std::size_t keep = ceil_fraction(keep_fraction, members.size());
    std::size_t taken = 0;
    for (auto& m : members) {
      const bool eligible = m.kept;
      m.kept = eligible && taken < keep;
      if (m.kept) ++taken;
    }
  }
  return out;
}

std::string pseudolabels_csv(const PseudoLabeledSet& set) {
  std::ostringstream out;
  out.precision(17);
  out << "id,cluster,cosine,kept\n";
  for (const auto& members : set.clusters) {
    for (const auto& m : members) {
      out << csv_field(m.id) << ',' << m.cluster << ',' << m.cosine << ',' << (m.kept ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

std::vector<std::string> LabelSpace::ids() const {
  std::vector<std::string> out;
  out.reserve(classes.size());
  for (const auto& c : classes) out.push_back(c.id);
  return out;
}

std::optional<std::size_t> LabelSpace::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].id == id) return i;
  }
  return std::nullopt;
}

json LabelSpace::to_json() const {
  json arr = json::array();
  for (const auto& c : classes) {
    json kws = json::array();
    for (const auto& kw : c.keywords) kws.push_back({{"token", kw.token}, {"score", kw.score}});
    arr.push_back({{"id", c.id}, {"stage", c.stage}, {"keywords", kws}});
  }
  return arr;
}

LabelSpace LabelSpace::from_json(const json& j) {
  LabelSpace ls;
  for (const auto& c : j) {
    ClassInfo info;
    info.id = c.at("id").get<std::string>();
    info.stage = c.at("stage").get<int>();
    for (const auto& kw : c.at("keywords")) info.keywords.push_back({kw.at("token").get<std::string>(), kw.at("score").get<double>()});
    ls.classes.push_back(std::move(info));
  }
  return ls;
}

LabelSpace known_label_space(const std::vector<std::string>& known) {
  LabelSpace ls;
  for (const auto& c : known) ls.classes.push_back({c, 0, {}});
  return ls;
}

std::string discovered_class_id(int stage, std::size_t cluster) {
  return "stage" + std::to_string(stage) + "_cluster" + std::to_string(cluster);
}

Expansion expand_label_space(const LabelSpace& current, const Network& network, int stage,
                             const std::vector<ClusterProfile>& profiles, std::uint64_t seed) {
  if (profiles.empty()) throw std::invalid_argument("expand_label_space: nothing to add");
  if (network.class_order() != current.ids()) {
    throw std::invalid_argument("expand_label_space: network classes do not match the label space");
  }
  Expansion out{current, network};
  std::vector<std::string> added;
  for (const auto& p : profiles) {
    ClassInfo info{discovered_class_id(stage, p.cluster), stage, p.keywords};
    if (out.labels.index_of(info.id)) throw std::invalid_argument("expand_label_space: duplicate class " + info.id);
    added.push_back(info.id);
    out.labels.classes.push_back(std::move(info));
  }
  out.network.expand(added, seed);
  return out;
}

void ContrastiveConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("ContrastiveConfig: lambda must be non-negative");
  if (!(tau > 0.0)) throw std::invalid_argument("ContrastiveConfig: tau must be positive");
}

json ContrastiveConfig::to_json() const { return {{"lambda", lambda}, {"tau", tau}}; }

ContrastiveResult contrastive_loss_and_grad(const std::vector<std::vector<double>>& embeddings,
                                            std::span<const std::size_t> assigned,
                                            const std::vector<std::vector<float>>& centroids, double tau) {
  if (embeddings.empty()) throw std::invalid_argument("contrastive_loss_and_grad: empty sample set");
  if (assigned.size() != embeddings.size()) throw std::invalid_argument("contrastive_loss_and_grad: assignment count mismatch");
  if (centroids.empty()) throw std::invalid_argument("contrastive_loss_and_grad: no centroids");
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss_and_grad: tau must be positive");
  const std::size_t k = centroids.size();
  const std::size_t d = embeddings[0].size();

  std::vector<std::vector<double>> unit(k, std::vector<double>(d));
  for (std::size_t j = 0; j < k; ++j) {
    if (centroids[j].size() != d) throw std::invalid_argument("contrastive_loss_and_grad: centroid dimension mismatch");
    double norm = 0.0;
    for (float v : centroids[j]) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw std::invalid_argument("contrastive_loss_and_grad: zero-norm centroid");
    for (std::size_t c = 0; c < d; ++c) unit[j][c] = centroids[j][c] / norm;
  }

  ContrastiveResult out;
  out.grad.assign(embeddings.size(), std::vector<double>(d, 0.0));
  const double inv_u = 1.0 / static_cast<double>(embeddings.size());
  std::vector<double> cos(k), p(k);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const auto& e = embeddings[i];
    if (e.size() != d) throw std::invalid_argument("contrastive_loss_and_grad: embedding dimension mismatch");
    if (assigned[i] >= k) throw std::out_of_range("contrastive_loss_and_grad: assignment out of range");
    double norm = 0.0;
    for (double v : e) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw std::invalid_argument("contrastive_loss_and_grad: zero-norm embedding");
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += e[c] * unit[j][c];
      cos[j] = s / norm;
      m = std::max(m, cos[j] / tau);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(cos[j] / tau - m);
      total += p[j];
    }
    // total >= 1 (the max term is exactly 1).
    out.loss += ((m - cos[assigned[i]] / tau) + std::log1p(total - 1.0)) * inv_u;
    for (std::size_t j = 0; j < k; ++j) p[j] /= total;
    p[assigned[i]] -= 1.0;
    // d cos_j / d e = u_j / |e| - cos_j e / |e|^2
    for (std::size_t j = 0; j < k; ++j) {
      const double w = p[j] / tau * inv_u;
      if (w == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) {
        out.grad[i][c] += w * (unit[j][c] / norm - cos[j] * e[c] / (norm * norm));
      }
    }
  }
  return out;
}

TrainResult retrain(Network& network, const RetrainData& data, Method method, const TrainConfig& config,
                    const ContrastiveConfig& contrastive) {
  if (method == Method::baseline) throw std::invalid_argument("retrain: the baseline is never retrained");
  contrastive.validate();
  if (!data.known || !data.pseudo) throw std::invalid_argument("retrain: missing training matrices");
  if (data.pseudo->rows() == 0) throw DiscoveryFailure("retrain: empty pseudo-labeled set");
  if (data.pseudo_labels.size() != data.pseudo->rows()) throw std::invalid_argument("retrain: pseudo label count mismatch");
  if (data.known_labels.size() != data.known->rows()) throw std::invalid_argument("retrain: known label count mismatch");

  network.add_identity_projection();

  EmbeddingMatrix X = data.known->select(std::vector<std::size_t>{});
  std::vector<int> labels;
  labels.reserve(data.known->rows() + data.pseudo->rows());
  for (std::size_t r = 0; r < data.known->rows(); ++r) {
    X.append(data.known->ids()[r], data.known->row(r));
    labels.push_back(data.known_labels[r]);
  }
  const std::size_t first_pseudo = X.rows();
  for (std::size_t r = 0; r < data.pseudo->rows(); ++r) {
    X.append(data.pseudo->ids()[r], data.pseudo->row(r));
    labels.push_back(data.pseudo_labels[r]);
  }

  TrainOptions options;
  options.train_projection = true;
  if (method == Method::v2) {
    if (!data.centroids || data.centroids->empty()) throw std::invalid_argument("retrain: V2 needs centroids");
    if (data.pseudo_centroid.size() != data.pseudo->rows()) throw std::invalid_argument("retrain: centroid index count mismatch");
    options.aux_weight = contrastive.lambda;
    const auto* centroids = data.centroids;
    const auto centroid_of = data.pseudo_centroid;
    const double tau = contrastive.tau;
    options.aux = [centroids, centroid_of, first_pseudo, tau](std::span<const std::size_t> rows,
                                                              const std::vector<std::vector<double>>& reps,
                                                              std::vector<std::vector<double>>& grad) {
      std::vector<std::vector<double>> members;
      std::vector<std::size_t> assigned, slots;
      for (std::size_t b = 0; b < rows.size(); ++b) {
        if (rows[b] < first_pseudo) continue;
        members.push_back(reps[b]);
        assigned.push_back(centroid_of[rows[b] - first_pseudo]);
        slots.push_back(b);
      }
      if (members.empty()) return 0.0;
      auto cl = contrastive_loss_and_grad(members, assigned, *centroids, tau);
      for (std::size_t m = 0; m < slots.size(); ++m) grad[slots[m]] = std::move(cl.grad[m]);
      return cl.loss;
    };
  }
  return train(network, X, labels, config, options);
}

}  // namespace osld
