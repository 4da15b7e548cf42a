#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <numeric>
#include <set>
#include <stdexcept>

#include "relgraph/parallel.hpp"
#include "relgraph/rng.hpp"

using namespace relgraph;

TEST(Rng, SameSeedSameStream) {
  Rng a(7, 3), b(7, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DrawsFollowTheDocumentedFormula) {
  const std::uint64_t seed = 12345, stream = 9;
  const std::uint64_t key = Rng::mix64(seed ^ Rng::mix64(stream + 0xD1B54A32D192ED03ULL));
  Rng r(seed, stream);
  for (std::uint64_t k = 1; k <= 10; ++k) EXPECT_EQ(r.next_u64(), Rng::mix64(key + k * Rng::kGamma));
}

TEST(Rng, StreamsAndSubstreamsDiffer) {
  Rng a(1, 0), b(1, 1);
  EXPECT_NE(a.next_u64(), b.next_u64());
  const Rng root(1);
  Rng s0 = root.substream(0), s1 = root.substream(1), s0b = root.substream(0);
  const auto v0 = s0.next_u64();
  EXPECT_NE(v0, s1.next_u64());
  EXPECT_EQ(v0, s0b.next_u64());
}

TEST(Rng, UniformRangeAndMean) {
  Rng r(2);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
}

TEST(Rng, NormalMoments) {
  Rng r(3);
  double s = 0.0, s2 = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.03);
}

TEST(Rng, BelowCoversRange) {
  Rng r(4);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(5);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  std::vector<int> w(50);
  std::iota(w.begin(), w.end(), 0);
  EXPECT_NE(v, w);
}

TEST(Parallel, EveryIndexOnce) {
  std::vector<std::atomic<int>> hits(200);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; }, 4);
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(Parallel, RethrowsWorkerException) {
  EXPECT_THROW(parallel_for(10, [](std::size_t i) { if (i == 7) throw std::runtime_error("x"); }, 3),
               std::runtime_error);
}

TEST(Parallel, ThreadBudgetReadsEnvironment) {
  ::setenv("RELGRAPH_THREADS", "3", 1);
  EXPECT_EQ(thread_budget(), 3u);
  ::setenv("RELGRAPH_THREADS", "0", 1);
  EXPECT_GE(thread_budget(), 1u);
  ::unsetenv("RELGRAPH_THREADS");
}
