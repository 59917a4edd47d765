#include "osld/openset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "osld/parallel.hpp"
#include "osld/util.hpp"

namespace osld {

double energy(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("energy: empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(m)) throw std::invalid_argument("energy: non-finite logits");
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  return -(m + std::log(s));
}

EnergyScores score_energies(const Network& net, const EmbeddingMatrix& X) {
  EnergyScores scores;
  scores.ids = X.ids();
  scores.energy.assign(X.rows(), 0.0);
  parallel_for(X.rows(), [&](std::size_t i) { scores.energy[i] = energy(net.logits(X.row(i))); });
  return scores;
}

OutlierSplit split_outliers(const EnergyScores& scores, double fraction) {
  if (scores.size() == 0) throw std::invalid_argument("split_outliers: empty score set");
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split_outliers: fraction must be in (0, 1)");
  if (scores.energy.size() != scores.ids.size()) throw std::invalid_argument("split_outliers: misaligned scores");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores.energy[a] != scores.energy[b]) return scores.energy[a] > scores.energy[b];
    if (scores.ids[a] != scores.ids[b]) return scores.ids[a] < scores.ids[b];
    return a < b;
  });
  const std::size_t m = std::min(n, ceil_fraction(fraction, n));
  OutlierSplit split;
  split.outliers.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  split.inliers.assign(order.begin() + static_cast<std::ptrdiff_t>(m), order.end());
  std::sort(split.inliers.begin(), split.inliers.end());
  return split;
}

std::string energies_csv(const EnergyScores& scores, const OutlierSplit& split) {
  std::vector<bool> is_outlier(scores.size(), false);
  for (std::size_t o : split.outliers) is_outlier[o] = true;
  std::ostringstream out;
  out.precision(17);
  out << "id,energy,is_outlier\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out << csv_field(scores.ids[i]) << ',' << scores.energy[i] << ',' << (is_outlier[i] ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace osld
