#include "osld/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "osld/parallel.hpp"
#include "osld/util.hpp"

namespace osld {

std::vector<std::size_t> ClusterAssignment::members(std::size_t j) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == static_cast<int>(j)) out.push_back(i);
  }
  return out;
}

namespace {

double squared_distance(std::span<const float> x, const double* c, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = x[k] - c[k];
    s += diff * diff;
  }
  return s;
}

double distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = static_cast<double>(a[k]) - b[k];
    s += diff * diff;
  }
  return std::sqrt(s);
}

std::vector<double> plus_plus_init(const EmbeddingMatrix& X, std::size_t k, Rng& rng) {
  const std::size_t n = X.rows(), d = X.dim();
  std::vector<double> centers;
  centers.reserve(k * d);
  auto push = [&](std::size_t row) {
    const auto r = X.row(row);
    centers.insert(centers.end(), r.begin(), r.end());
  };
  push(rng.index(n));
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    const double* last = centers.data() + (c - 1) * d;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], squared_distance(X.row(i), last, d));
      total += best[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += best[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(n);
    }
    push(pick);
  }
  return centers;
}

// Nearest centroid; the current label wins ties so a point only moves on a
// strict improvement.
void assign(const EmbeddingMatrix& X, const std::vector<double>& centers, std::size_t k, std::vector<int>& labels,
            std::vector<double>& dist) {
  const std::size_t d = X.dim();
  parallel_for(X.rows(), [&](std::size_t i) {
    const auto x = X.row(i);
    int best = labels[i];
    double best_d = best >= 0 ? squared_distance(x, centers.data() + static_cast<std::size_t>(best) * d, d)
                              : std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      const double dj = squared_distance(x, centers.data() + j * d, d);
      if (dj < best_d) {
        best_d = dj;
        best = static_cast<int>(j);
      }
    }
    labels[i] = best;
    dist[i] = best_d;
  });
}

void repair_empty(const EmbeddingMatrix& X, std::vector<double>& centers, std::size_t k, std::vector<int>& labels,
                  std::vector<double>& dist) {
  const std::size_t d = X.dim();
  for (;;) {
    std::vector<std::size_t> counts(k, 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    auto empty = std::find(counts.begin(), counts.end(), std::size_t{0});
    if (empty == counts.end()) return;
    const std::size_t target = static_cast<std::size_t>(empty - counts.begin());
    std::size_t far = X.rows();
    for (std::size_t i = 0; i < X.rows(); ++i) {
      if (counts[static_cast<std::size_t>(labels[i])] < 2) continue;
      if (far == X.rows() || dist[i] > dist[far]) far = i;
    }
    if (far == X.rows()) throw std::logic_error("kmeans: cannot repair empty cluster");
    const auto r = X.row(far);
    std::copy(r.begin(), r.end(), centers.begin() + static_cast<std::ptrdiff_t>(target * d));
    labels[far] = static_cast<int>(target);
    dist[far] = 0.0;
  }
}

}  // namespace

ClusterAssignment kmeans(const EmbeddingMatrix& X, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
  const std::size_t n = X.rows(), d = X.dim();
  if (k < 1) throw std::invalid_argument("kmeans: k must be at least 1");
  if (n < k) throw std::invalid_argument("kmeans: fewer points (" + std::to_string(n) + ") than clusters (" +
                                         std::to_string(k) + ")");
  Rng rng(seed);
  std::vector<double> centers = plus_plus_init(X, k, rng);
  std::vector<int> labels(n, -1);
  std::vector<double> dist(n, 0.0);
  assign(X, centers, k, labels, dist);
  repair_empty(X, centers, k, labels, dist);

  ClusterAssignment out;
  out.k = k;
  out.dim = d;
  out.inertia_history.push_back(std::accumulate(dist.begin(), dist.end(), 0.0));

  std::vector<double> next(k * d);
  std::vector<std::size_t> counts(k);
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = static_cast<std::size_t>(labels[i]);
      ++counts[j];
      const auto x = X.row(i);
      for (std::size_t c = 0; c < d; ++c) next[j * d + c] += x[c];
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        next[j * d + c] /= static_cast<double>(counts[j]);
        const double diff = next[j * d + c] - centers[j * d + c];
        s += diff * diff;
      }
      shift = std::max(shift, std::sqrt(s));
    }
    centers.swap(next);
    const std::vector<int> before = labels;
    assign(X, centers, k, labels, dist);
    repair_empty(X, centers, k, labels, dist);
    out.inertia_history.push_back(std::accumulate(dist.begin(), dist.end(), 0.0));
    out.iterations = iter + 1;
    if (shift < options.tolerance || labels == before) break;
  }

  out.labels = std::move(labels);
  out.inertia = out.inertia_history.back();
  out.centroids.assign(centers.begin(), centers.end());
  return out;
}

double silhouette(const EmbeddingMatrix& X, const ClusterAssignment& assignment, std::size_t sample_cap,
                  std::uint64_t seed) {
  if (assignment.k < 2) throw std::invalid_argument("silhouette: needs at least 2 clusters");
  if (X.rows() < 2) throw std::invalid_argument("silhouette: needs at least 2 points");
  if (assignment.labels.size() != X.rows()) throw std::invalid_argument("silhouette: labels misaligned");

  std::vector<std::size_t> sample(X.rows());
  std::iota(sample.begin(), sample.end(), std::size_t{0});
  if (sample_cap > 0 && sample.size() > sample_cap) {
    Rng rng(seed);
    rng.shuffle(sample);
    sample.resize(sample_cap);
    std::sort(sample.begin(), sample.end());
  }
  const std::size_t k = assignment.k;
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t i : sample) ++sizes[static_cast<std::size_t>(assignment.labels[i])];

  std::vector<double> s(sample.size(), 0.0);
  parallel_for(sample.size(), [&](std::size_t a) {
    const std::size_t i = sample[a];
    const auto own = static_cast<std::size_t>(assignment.labels[i]);
    if (sizes[own] < 2) return;
    std::vector<double> sums(k, 0.0);
    for (std::size_t j : sample) {
      if (j == i) continue;
      sums[static_cast<std::size_t>(assignment.labels[j])] += distance(X.row(i), X.row(j));
    }
    const double intra = sums[own] / static_cast<double>(sizes[own] - 1);
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c == own || sizes[c] == 0) continue;
      nearest = std::min(nearest, sums[c] / static_cast<double>(sizes[c]));
    }
    if (!std::isfinite(nearest)) return;
    const double denom = std::max(intra, nearest);
    s[a] = denom > 0.0 ? (nearest - intra) / denom : 0.0;
  }, 8);
  double total = 0.0;
  for (double v : s) total += v;
  return total / static_cast<double>(s.size());
}

KSelection select_k(const EmbeddingMatrix& X, std::uint64_t seed, const KSelectionOptions& options) {
  if (X.rows() < 2) throw std::invalid_argument("select_k: needs at least 2 points");
  if (options.k_min < 2) throw std::invalid_argument("select_k: k_min must be at least 2");
  if (options.restarts < 1) throw std::invalid_argument("select_k: restarts must be at least 1");
  const std::size_t k_hi = std::min(options.k_max, X.rows());
  if (k_hi < options.k_min) throw std::invalid_argument("select_k: empty k range");

  KSelection sel;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t k = options.k_min; k <= k_hi; ++k) {
    ClusterAssignment best_run;
    bool have = false;
    for (std::size_t r = 0; r < options.restarts; ++r) {
      auto run = kmeans(X, k, derive_seed(seed, k * 1000 + r), options.kmeans);
      if (!have || run.inertia < best_run.inertia) {
        best_run = std::move(run);
        have = true;
      }
    }
    const double score = silhouette(X, best_run, options.silhouette_cap, derive_seed(seed, k));
    sel.silhouettes.emplace_back(k, score);
    if (score > best_score) {
      best_score = score;
      sel.best_k = k;
      sel.best = std::move(best_run);
    }
  }
  return sel;
}

nlohmann::json KSelection::diagnostics() const {
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& [k, s] : silhouettes) scores.push_back({{"k", k}, {"silhouette", s}});
  return {{"best_k", best_k}, {"scores", scores}, {"inertia", best.inertia}};
}

}  // namespace osld
