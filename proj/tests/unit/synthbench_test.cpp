#include <gtest/gtest.h>

#include <map>

#include "osld/dataset.hpp"
#include "osld/discovery.hpp"
#include "osld/embeddings.hpp"
#include "osld/synthbench.hpp"
#include "osld/text.hpp"
#include "osld/util.hpp"
#include "test_support.hpp"

using namespace osld;

TEST(Synth, DefaultBenchmarkValidates) {
  fixtures::TempDir dir;
  const auto out = generate(SynthSpec{}, dir.path());
  const auto bench = load_benchmark(out.manifest);
  const auto report = validate_manifest(bench.manifest, bench.sets);
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(bench.manifest.known_classes.size(), 4u);
  EXPECT_EQ(bench.set(Stage::train).size(), 800u);
  EXPECT_EQ(bench.set(Stage::test1).size(), 600u);
  EXPECT_EQ(bench.set(Stage::test3).size(), 1000u);
  const auto emb = load_embeddings(dir / "test3.osldemb");
  EXPECT_EQ(emb.rows(), 1000u);
  EXPECT_EQ(emb.dim(), 16u);
}

TEST(Synth, StageClassSplit) {
  SynthSpec s;
  const auto stages = synth_stage_classes(s);
  ASSERT_EQ(stages.size(), 3u);
  EXPECT_EQ(stages[0].size(), 2u);
  EXPECT_EQ(stages[1].size(), 2u);
  EXPECT_EQ(stages[2].size(), 2u);
  s.classes = 9;
  const auto uneven = synth_stage_classes(s);
  EXPECT_EQ(uneven[0].size(), 2u);
  EXPECT_EQ(uneven[1].size(), 2u);
  EXPECT_EQ(uneven[2].size(), 1u);
  EXPECT_EQ(synth_class_names(25).back(), "topic25");
}

TEST(Synth, BytewiseDeterministic) {
  fixtures::TempDir a, b;
  SynthSpec s;
  s.train_per_class = 20;
  s.test_per_class = 10;
  const auto oa = generate(s, a.path());
  const auto ob = generate(s, b.path());
  ASSERT_EQ(oa.files.size(), ob.files.size());
  for (std::size_t i = 0; i < oa.files.size(); ++i) {
    EXPECT_EQ(read_file(oa.files[i]), read_file(ob.files[i])) << oa.files[i];
  }
  fixtures::TempDir c;
  s.seed = 43;
  const auto oc = generate(s, c.path());
  EXPECT_NE(read_file(oa.files[0]), read_file(oc.files[0]));
}

TEST(Synth, ClustersArePureAtTrueK) {
  fixtures::TempDir dir;
  const auto out = generate(SynthSpec{}, dir.path());
  const auto bench = load_benchmark(out.manifest);
  const auto emb = load_embeddings(dir / "test1.osldemb");
  const auto& set = bench.set(Stage::test1);
  const auto a = kmeans(emb, 6, 1);
  std::map<int, std::map<std::string, std::size_t>> counts;
  for (std::size_t i = 0; i < set.size(); ++i) counts[a.labels[i]][*set.gold_label(i)]++;
  std::size_t majority = 0;
  for (const auto& [c, m] : counts) {
    std::size_t best = 0;
    for (const auto& [_, n] : m) best = std::max(best, n);
    majority += best;
  }
  EXPECT_EQ(majority, set.size());
}

TEST(Synth, TextModeHasNoEmbeddings) {
  fixtures::TempDir dir;
  const auto out = generate(SynthSpec::from_json({{"mode", "text"}, {"train_per_class", 10}, {"test_per_class", 5}}),
                            dir.path());
  const auto bench = load_benchmark(out.manifest);
  EXPECT_FALSE(bench.manifest.lexicon.has_value());
  for (const auto& e : bench.manifest.stages) EXPECT_FALSE(e.embeddings.has_value());
  const std::string text = bench.set(Stage::train).text(0);
  EXPECT_EQ(tokenize(text).size(), 24u);
}

TEST(Synth, SpecJson) {
  const SynthSpec s = SynthSpec::from_json({{"separation", 3.0}});
  EXPECT_DOUBLE_EQ(s.sigma, 0.3);
  EXPECT_EQ(SynthSpec::from_json(s.to_json()).to_json(), s.to_json());
  EXPECT_THROW(SynthSpec::from_json({{"clases", 3}}), std::invalid_argument);
  EXPECT_THROW(SynthSpec::from_json(nlohmann::json::array()), std::invalid_argument);
}

TEST(Synth, InvalidSpecs) {
  auto bad = [](auto mutate) {
    SynthSpec s;
    mutate(s);
    return s;
  };
  EXPECT_THROW(bad([](SynthSpec& s) { s.known = 10; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](SynthSpec& s) { s.known = 1; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](SynthSpec& s) { s.dim = 5; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](SynthSpec& s) { s.sigma = 0; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](SynthSpec& s) { s.mode = "audio"; }).validate(), std::invalid_argument);
  EXPECT_THROW(bad([](SynthSpec& s) { s.class_token_prob = 0; }).validate(), std::invalid_argument);
  EXPECT_NO_THROW(bad([](SynthSpec& s) { s.mode = "text"; s.dim = 1; }).validate());
}
