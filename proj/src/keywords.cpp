#include "osld/keywords.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "osld/text.hpp"
#include "osld/util.hpp"

namespace osld {

std::string ClusterProfile::keyword_string() const {
  std::string out;
  for (const auto& kw : keywords) {
    if (!out.empty()) out += ' ';
    out += kw.token;
  }
  return out;
}

std::vector<std::vector<Keyword>> cluster_keywords(const std::vector<std::vector<std::string_view>>& cluster_texts,
                                                   std::size_t top_m) {
  const std::size_t k = cluster_texts.size();
  if (k == 0) throw std::invalid_argument("cluster_keywords: no clusters");
  std::vector<std::map<std::string, std::size_t>> counts(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (cluster_texts[c].empty()) throw std::invalid_argument("cluster_keywords: cluster " + std::to_string(c) + " is empty");
    for (auto text : cluster_texts[c]) {
      for (auto& token : tokenize(text)) {
        if (codepoint_count(token) < 2) continue;
        ++counts[c][std::move(token)];
      }
    }
  }
  std::map<std::string, std::size_t> df;
  for (const auto& c : counts) {
    for (const auto& [token, _] : c) ++df[token];
  }

  std::vector<std::vector<Keyword>> out(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<Keyword> scored;
    for (const auto& [token, tf] : counts[c]) {
      const std::size_t f = df[token];
      if (f == k) continue;
      const double score = static_cast<double>(tf) * std::log(static_cast<double>(k) / static_cast<double>(f));
      if (score > 0.0) scored.push_back({token, score});
    }
    std::sort(scored.begin(), scored.end(), [](const Keyword& a, const Keyword& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.token < b.token;
    });
    if (scored.size() > top_m) scored.resize(top_m);
    out[c] = std::move(scored);
  }
  return out;
}

std::vector<float> cluster_centroid(const std::vector<std::string>& keywords, const EmbeddingBackend& backend) {
  if (keywords.empty()) throw std::invalid_argument("cluster_centroid: empty keyword list");
  std::string joined;
  for (const auto& kw : keywords) {
    if (!joined.empty()) joined += ' ';
    joined += kw;
  }
  std::vector<float> c = backend.embed_text(joined);
  if (l2_norm(c) == 0.0) throw DegenerateCentroid("degenerate centroid for keywords '" + joined + "'");
  l2_normalize(c);
  return c;
}

std::vector<float> cluster_centroid(const std::vector<Keyword>& keywords, const EmbeddingBackend& backend) {
  std::vector<std::string> tokens;
  tokens.reserve(keywords.size());
  for (const auto& kw : keywords) tokens.push_back(kw.token);
  return cluster_centroid(tokens, backend);
}

}  // namespace osld
