#include <atomic>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include <tiered/parallel.hpp>
#include <tiered/partition.hpp>
#include <tiered/rng.hpp>

using namespace tiered;

TEST(TierPartition, RejectsBadThresholds) {
  EXPECT_THROW(TierPartition(std::vector<double>{}), ConfigError);
  EXPECT_THROW(TierPartition({1.0, 1.0}), ConfigError);
  EXPECT_THROW(TierPartition({2.0, 1.0}), ConfigError);
  EXPECT_THROW(TierPartition({0.0, std::numeric_limits<double>::infinity()}), ConfigError);
  EXPECT_THROW(TierPartition({std::nan("")}), ConfigError);
}

TEST(TierPartition, IntervalsAreLeftOpenRightClosed) {
  const TierPartition c({-1.42, 1.09});
  EXPECT_EQ(c.tiers(), 3u);
  EXPECT_EQ(c.inner(), 2u);
  EXPECT_EQ(c.tier_of(-5.0), 1u);
  EXPECT_EQ(c.tier_of(-1.42), 1u);
  EXPECT_EQ(c.tier_of(std::nextafter(-1.42, 0.0)), 2u);
  EXPECT_EQ(c.tier_of(1.09), 2u);
  EXPECT_EQ(c.tier_of(1.1), 3u);
  EXPECT_TRUE(std::isinf(c.cut(0)) && c.cut(0) < 0);
  EXPECT_TRUE(std::isinf(c.cut(3)) && c.cut(3) > 0);
  EXPECT_DOUBLE_EQ(c.cut(1), -1.42);
}

TEST(TierPartition, SingleThresholdIsBinary) {
  const TierPartition c({0.0});
  EXPECT_EQ(c.tiers(), 2u);
  EXPECT_EQ(c.tier_of(0.0), 1u);
  EXPECT_EQ(c.tier_of(1e-12), 2u);
}

TEST(TierPartition, CategoricalLabelsKeepTheirTier) {
  const std::vector<int> labels = {1, 2, 3, 4, 2, 1};
  const auto [y, c] = categorical_as_continuous(labels, 4);
  ASSERT_EQ(y.size(), labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    EXPECT_EQ(c.tier_of(y[i]), static_cast<std::size_t>(labels[i]));
  const std::vector<int> bad = {0};
  EXPECT_THROW(categorical_as_continuous(bad, 4), DataError);
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  auto a = make_stream(7, "data");
  auto b = make_stream(7, "data");
  auto c = make_stream(7, "split");
  auto d = make_stream(7, "data", 1);
  auto e = make_stream(8, "data");
  const auto va = a();
  EXPECT_EQ(va, b());
  EXPECT_NE(va, c());
  EXPECT_NE(va, d());
  EXPECT_NE(va, e());
}

TEST(Parallel, VisitsEveryIndexOnce) {
  for (unsigned threads : {1u, 3u, 8u}) {
    std::vector<std::atomic<int>> hits(257);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i]++; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(Parallel, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(50, 4,
                            [](std::size_t i) {
                              if (i == 17) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}
