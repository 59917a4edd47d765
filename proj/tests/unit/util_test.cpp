#include <gtest/gtest.h>

#include <cstdlib>
#include <set>

#include "osld/parallel.hpp"
#include "osld/text.hpp"
#include "osld/util.hpp"
#include "test_support.hpp"

using namespace osld;

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformInUnitInterval) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, IndexCoversRange) {
  Rng r(3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.index(5);
    ASSERT_LT(v, 5u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 5u);
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.03);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(5);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  r.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 50u);
}

TEST(DeriveSeed, TagsDecorrelate) {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t t = 0; t < 1000; ++t) seeds.insert(derive_seed(42, t));
  EXPECT_EQ(seeds.size(), 1000u);
  EXPECT_EQ(derive_seed(42, 3), derive_seed(42, 3));
  EXPECT_NE(derive_seed(42, 3), derive_seed(43, 3));
}

TEST(CeilFraction, DecimalFractions) {
  EXPECT_EQ(ceil_fraction(0.15, 20), 3u);
  EXPECT_EQ(ceil_fraction(0.15, 7), 2u);
  EXPECT_EQ(ceil_fraction(0.15, 100), 15u);
  EXPECT_EQ(ceil_fraction(0.40, 10), 4u);
  EXPECT_EQ(ceil_fraction(0.40, 3), 2u);
  EXPECT_EQ(ceil_fraction(0.15, 1), 1u);
  EXPECT_EQ(ceil_fraction(0.15, 0), 0u);
}

TEST(Fnv1a, ReferenceVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(VectorMath, CosineAndNorm) {
  const std::vector<float> a{3, 4}, b{4, 3}, z{0, 0};
  EXPECT_DOUBLE_EQ(l2_norm(a), 5.0);
  EXPECT_NEAR(cosine(a, b), 24.0 / 25.0, 1e-12);
  EXPECT_THROW(cosine(a, z), std::invalid_argument);
  std::vector<float> c{3, 4};
  l2_normalize(c);
  EXPECT_NEAR(l2_norm(c), 1.0, 1e-7);
}

TEST(Files, AtomicWriteRoundTrip) {
  fixtures::TempDir tmp;
  const auto p = tmp / "x.bin";
  const std::string bytes("a\0b\nc", 5);
  write_file_atomic(p, bytes);
  EXPECT_EQ(read_file(p), bytes);
  write_file_atomic(p, "second");
  EXPECT_EQ(read_file(p), "second");
  EXPECT_THROW(read_file(tmp / "missing"), std::runtime_error);
}

TEST(WorkerCount, HonoursEnvironment) {
  ::setenv("OSLD_THREADS", "1", 1);
  EXPECT_EQ(worker_count(), 1u);
  ::setenv("OSLD_THREADS", "garbage", 1);
  EXPECT_GE(worker_count(), 1u);
  ::unsetenv("OSLD_THREADS");
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { ++hits[i]; }, 8);
  for (int h : hits) ASSERT_EQ(h, 1);
}

TEST(ParallelFor, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(100, [](std::size_t i) { if (i == 50) throw std::runtime_error("x"); }, 1),
               std::runtime_error);
}

TEST(Csv, QuotesWhenNeeded) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
}

TEST(Tokenize, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(tokenize("Hello, World! It's"), (std::vector<std::string>{"hello", "world", "its"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize(" ... !!").empty());
}

TEST(Tokenize, UnicodeWhitespaceAndLetters) {
  // U+00A0 no-break space and U+3000 ideographic space separate tokens.
  EXPECT_EQ(tokenize("caf\xC3\xA9\xC2\xA0north\xE3\x80\x80south"),
            (std::vector<std::string>{"caf\xC3\xA9", "north", "south"}));
  EXPECT_EQ(codepoint_count("caf\xC3\xA9"), 4u);
  EXPECT_EQ(codepoint_count(""), 0u);
}
