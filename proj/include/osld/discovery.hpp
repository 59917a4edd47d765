#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "osld/embeddings.hpp"

namespace osld {

struct ClusterAssignment {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<int> labels;       // per row of the clustered matrix
  std::vector<float> centroids;  // k x dim
  double inertia = 0.0;
  // Inertia after every assignment step, initial assignment first.
  std::vector<double> inertia_history;
  std::size_t iterations = 0;

  std::span<const float> centroid(std::size_t j) const { return {centroids.data() + j * dim, dim}; }
  std::vector<std::size_t> members(std::size_t j) const;
};

struct KMeansOptions {
  std::size_t max_iterations = 300;
  double tolerance = 1e-6;
};

// k-means++ seeding, then Lloyd iterations on Euclidean distance. A cluster
// left empty is reseeded with the point farthest from its centroid.
ClusterAssignment kmeans(const EmbeddingMatrix& X, std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

// Mean silhouette coefficient. Singleton clusters score 0. Above sample_cap
// points a seeded subsample is scored.
double silhouette(const EmbeddingMatrix& X, const ClusterAssignment& assignment, std::size_t sample_cap = 2000,
                  std::uint64_t seed = 0);

struct KSelectionOptions {
  std::size_t k_min = 2;
  std::size_t k_max = 8;
  std::size_t restarts = 5;
  std::size_t silhouette_cap = 2000;
  KMeansOptions kmeans;
};

struct KSelection {
  std::size_t best_k = 0;
  ClusterAssignment best;
  std::vector<std::pair<std::size_t, double>> silhouettes;

  nlohmann::json diagnostics() const;
};

// For every k in [k_min, min(k_max, n)] keep the lowest-inertia restart and
// pick the k with the highest silhouette; ties favour the smaller k.
KSelection select_k(const EmbeddingMatrix& X, std::uint64_t seed, const KSelectionOptions& options = {});

}  // namespace osld
