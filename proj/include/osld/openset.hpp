#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "osld/classifier.hpp"

namespace osld {

// Energy E = -logsumexp(logits), max-shifted.
double energy(std::span<const double> logits);

struct EnergyScores {
  std::vector<std::string> ids;
  std::vector<double> energy;

  std::size_t size() const { return ids.size(); }
};

EnergyScores score_energies(const Network& net, const EmbeddingMatrix& X);

struct OutlierSplit {
  // Positions into the scored set, outliers ordered by decreasing energy.
  std::vector<std::size_t> inliers;
  std::vector<std::size_t> outliers;
};

// The ceil(fraction * n) highest energies are outliers; at the cut, the
// lexicographically smaller id enters the outlier set first.
OutlierSplit split_outliers(const EnergyScores& scores, double fraction = 0.15);

std::string energies_csv(const EnergyScores& scores, const OutlierSplit& split);

}  // namespace osld
