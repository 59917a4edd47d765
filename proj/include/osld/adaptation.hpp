#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "osld/classifier.hpp"
#include "osld/discovery.hpp"
#include "osld/keywords.hpp"

namespace osld {

enum class Method { baseline, v1, v2 };
std::string to_string(Method m);
Method method_from_string(const std::string& name);

// Raised when a stage yields nothing to retrain on.
class DiscoveryFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PseudoCandidate {
  std::size_t row = 0;  // row of the clustered (outlier) matrix
  std::string id;
  std::size_t cluster = 0;
  double cosine = 0.0;
  bool kept = false;
};

struct PseudoLabeledSet {
  // Per cluster, members sorted by cosine to the centroid (descending, then id).
  std::vector<std::vector<PseudoCandidate>> clusters;

  std::vector<PseudoCandidate> kept() const;
  std::size_t kept_count() const;
};

// Keeps the ceil(keep_fraction * size) members of each cluster closest to its
// centroid. Zero-norm members score 0 and are never kept.
PseudoLabeledSet select_pseudolabeled(const ClusterAssignment& assignment,
                                      const std::vector<std::vector<float>>& centroids, const EmbeddingMatrix& X,
                                      double keep_fraction = 0.40);

std::string pseudolabels_csv(const PseudoLabeledSet& set);

struct ClassInfo {
  std::string id;
  int stage = 0;  // 0 for initially known classes
  std::vector<Keyword> keywords;

  bool discovered() const { return stage > 0; }
};

struct LabelSpace {
  std::vector<ClassInfo> classes;

  std::vector<std::string> ids() const;
  std::size_t size() const { return classes.size(); }
  std::optional<std::size_t> index_of(const std::string& id) const;
  nlohmann::json to_json() const;
  static LabelSpace from_json(const nlohmann::json& j);
};

LabelSpace known_label_space(const std::vector<std::string>& known);

std::string discovered_class_id(int stage, std::size_t cluster);

struct Expansion {
  LabelSpace labels;
  Network network;
};

// Appends "stage{i}_cluster{j}" for every profile; new head rows get a fresh
// init, existing rows are copied unchanged.
Expansion expand_label_space(const LabelSpace& current, const Network& network, int stage,
                             const std::vector<ClusterProfile>& profiles, std::uint64_t seed);

struct ContrastiveConfig {
  double lambda = 0.3;
  double tau = 0.07;

  void validate() const;
  nlohmann::json to_json() const;
};

struct ContrastiveResult {
  double loss = 0.0;
  std::vector<std::vector<double>> grad;  // wrt each embedding
};

// Mean over samples of -log softmax_j(cos(e_i, c_j) / tau) at j = assigned[i].
ContrastiveResult contrastive_loss_and_grad(const std::vector<std::vector<double>>& embeddings,
                                            std::span<const std::size_t> assigned,
                                            const std::vector<std::vector<float>>& centroids, double tau);

struct RetrainData {
  const EmbeddingMatrix* known = nullptr;
  std::span<const int> known_labels;
  const EmbeddingMatrix* pseudo = nullptr;
  std::span<const int> pseudo_labels;          // class indices in the expanded space
  std::span<const std::size_t> pseudo_centroid;  // index into centroids
  const std::vector<std::vector<float>>* centroids = nullptr;
};

// Trains on known data plus pseudo-labeled samples. V2 adds lambda times the
// contrastive loss over the pseudo-labeled rows of each batch, acting on the
// projection output (an identity projection is added if missing).
TrainResult retrain(Network& network, const RetrainData& data, Method method, const TrainConfig& config,
                    const ContrastiveConfig& contrastive);

}  // namespace osld
