#include <gtest/gtest.h>

#include <array>
#include <vector>

#include "faultrange/rng.hpp"

namespace faultrange {
namespace {

TEST(Mix64, MatchesSplitMix64Reference) {
  // First outputs of the reference SplitMix64 generator seeded with 0.
  constexpr std::uint64_t gamma = 0x9E3779B97F4A7C15ULL;
  EXPECT_EQ(mix64(gamma), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(mix64(2 * gamma), 0x6E789E6AA1B965F4ULL);
}

TEST(CounterRng, FrozenStream) {
  CounterRng rng({42, StreamPurpose::weight_faults, 3, 0});
  EXPECT_EQ(rng.next_u64(), 0x32BF895CA9F8B292ULL);
  EXPECT_EQ(rng.next_u64(), 0x6FB86705FC16E9A7ULL);
  EXPECT_EQ(rng.next_u64(), 0x6C579CE29627AF80ULL);
  EXPECT_EQ(rng.counter(), 3u);
}

TEST(CounterRng, FrozenBoundedDraws) {
  CounterRng rng({7, StreamPurpose::dataset, 0, 5});
  const std::vector<std::uint64_t> expected{2, 3, 5, 1, 3, 6, 1, 6, 5, 3};
  for (auto e : expected) EXPECT_EQ(rng.uniform_below(7), e);
}

TEST(CounterRng, KeysAreIndependent) {
  const StreamKey base{1, StreamPurpose::neuron_faults, 2, 3};
  const auto first = [](StreamKey k) { return CounterRng(k).next_u64(); };
  const auto v = first(base);
  EXPECT_EQ(v, first(base));
  EXPECT_NE(v, first({2, base.purpose, base.epoch, base.item}));
  EXPECT_NE(v, first({base.seed, StreamPurpose::weight_faults, base.epoch, base.item}));
  EXPECT_NE(v, first({base.seed, base.purpose, 3, base.item}));
  EXPECT_NE(v, first({base.seed, base.purpose, base.epoch, 4}));
}

TEST(CounterRng, UniformRanges) {
  CounterRng rng({3, StreamPurpose::init, 0, 0});
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const float f = rng.uniform(-0.5f, 0.25f);
    ASSERT_GE(f, -0.5f);
    ASSERT_LT(f, 0.25f);
  }
}

double chi_square(const std::vector<std::uint64_t>& counts, double expected) {
  double s = 0.0;
  for (auto c : counts) s += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  return s;
}

// Critical values at alpha = 0.01.
TEST(CounterRng, ChiSquareUniformBelow) {
  for (std::uint64_t bins : {5u, 9u, 50u}) {
    CounterRng rng({11, StreamPurpose::shuffle, bins, 0});
    std::vector<std::uint64_t> counts(bins, 0);
    const std::uint64_t n = 1000 * bins;
    for (std::uint64_t i = 0; i < n; ++i) ++counts[rng.uniform_below(bins)];
    const double critical = bins == 5 ? 13.277 : bins == 9 ? 20.090 : 74.919;
    EXPECT_LT(chi_square(counts, 1000.0), critical) << bins << " bins";
  }
}

TEST(CounterRng, ChiSquareAcrossKeys) {
  // First draw of consecutive items: keying must not correlate neighbours.
  std::vector<std::uint64_t> counts(9, 0);
  for (std::uint64_t item = 0; item < 9000; ++item) {
    CounterRng rng({5, StreamPurpose::neuron_faults, 0, item});
    ++counts[rng.uniform_below(9)];
  }
  EXPECT_LT(chi_square(counts, 1000.0), 20.090);
}

}  // namespace
}  // namespace faultrange
