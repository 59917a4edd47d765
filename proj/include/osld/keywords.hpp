#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "osld/embeddings.hpp"

namespace osld {

class DegenerateCentroid : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Keyword {
  std::string token;
  double score = 0.0;

  bool operator==(const Keyword&) const = default;
};

struct ClusterProfile {
  std::size_t cluster = 0;
  std::vector<Keyword> keywords;
  std::vector<float> centroid;

  std::string keyword_string() const;
};

// Each cluster's texts are merged into one document; tokens are scored by raw
// count times ln(k / df) over the k merged documents. Tokens shorter than two
// code points are dropped, zero scores are never emitted, ties are broken by
// token order.
std::vector<std::vector<Keyword>> cluster_keywords(const std::vector<std::vector<std::string_view>>& cluster_texts,
                                                   std::size_t top_m = 10);

// Embeds the space-joined keyword list; throws on an empty list or a zero
// embedding ("degenerate centroid").
std::vector<float> cluster_centroid(const std::vector<std::string>& keywords, const EmbeddingBackend& backend);
std::vector<float> cluster_centroid(const std::vector<Keyword>& keywords, const EmbeddingBackend& backend);

}  // namespace osld
