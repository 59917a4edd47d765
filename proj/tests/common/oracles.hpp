#pragma once

// Plain float64 reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "osld/embeddings.hpp"

namespace osld::fixtures {

// Mean softmax cross-entropy, W row-major N x dim.
inline double ce_oracle(const std::vector<double>& W, const std::vector<double>& b, const EmbeddingMatrix& X,
                        const std::vector<int>& y, std::size_t N) {
  double total = 0.0;
  const std::size_t d = X.dim();
  for (std::size_t r = 0; r < X.rows(); ++r) {
    std::vector<double> z(N);
    double m = -1e300;
    for (std::size_t c = 0; c < N; ++c) {
      z[c] = b[c];
      for (std::size_t k = 0; k < d; ++k) z[c] += W[c * d + k] * X.row(r)[k];
      m = std::max(m, z[c]);
    }
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    total += (m + std::log(s)) - z[static_cast<std::size_t>(y[r])];
  }
  return total / static_cast<double>(X.rows());
}

// Mean cosine-softmax loss of embeddings against assigned centroids.
inline double cl_oracle(const std::vector<std::vector<double>>& E, const std::vector<std::size_t>& y,
                        const std::vector<std::vector<float>>& C, double tau) {
  double total = 0.0;
  for (std::size_t i = 0; i < E.size(); ++i) {
    std::vector<double> s;
    double en = 0.0;
    for (double v : E[i]) en += v * v;
    for (const auto& c : C) {
      double dotp = 0.0, cn = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k) {
        dotp += E[i][k] * c[k];
        cn += static_cast<double>(c[k]) * c[k];
      }
      s.push_back(dotp / std::sqrt(en * cn) / tau);
    }
    double m = *std::max_element(s.begin(), s.end()), z = 0.0;
    for (double v : s) z += std::exp(v - m);
    total += m + std::log(z) - s[y[i]];
  }
  return total / static_cast<double>(E.size());
}

// Minimum assignment cost over all permutations of a square matrix.
inline double brute_force_min(const std::vector<std::vector<double>>& c) {
  const std::size_t n = c.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += c[i][perm[i]];
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace osld::fixtures
