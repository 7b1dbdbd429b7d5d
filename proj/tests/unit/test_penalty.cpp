#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dorl/error.hpp"
#include "dorl/penalty.hpp"
#include "support/oracles.hpp"

namespace dorl {
namespace {

LogTable sequences(const std::vector<std::vector<std::size_t>>& seqs) {
  std::vector<InteractionRecord> recs;
  for (std::size_t u = 0; u < seqs.size(); ++u) {
    for (std::size_t t = 0; t < seqs[u].size(); ++t) {
      recs.push_back({u, seqs[u][t], static_cast<std::int64_t>(t), 0.5, 0});
    }
  }
  return make_log_table(recs);
}

TEST(EntropyIndex, SortedSetKeysMergePermutations) {
  const auto index = build_entropy_index(sequences({{8, 3, 7, 5}, {7, 3, 8, 9}}), {3});
  const auto* counts = index.find({3, 7, 8});
  ASSERT_NE(counts, nullptr);
  EXPECT_EQ(*counts, (CountMap{{5, 1}, {9, 1}}));
  EXPECT_EQ(index.table(3).size(), 1u);
}

TEST(EntropyIndex, ShortSequenceHasNoPattern) {
  const auto index = build_entropy_index(sequences({{1, 2, 3}}), {3});
  EXPECT_TRUE(index.table(3).empty());
}

TEST(EntropyIndex, FirstOrderCounts) {
  const auto index = build_entropy_index(sequences({{0, 1, 0, 1}}), {1});
  EXPECT_EQ(*index.find({0}), (CountMap{{1, 2}}));
  EXPECT_EQ(*index.find({1}), (CountMap{{0, 1}}));
}

TEST(EntropyIndex, WindowsNeverCrossUsers) {
  const auto index = build_entropy_index(sequences({{1, 2}, {3, 4}}), {1, 2});
  EXPECT_EQ(index.find({2}), nullptr);
  EXPECT_EQ(index.find({1, 2}), nullptr);
  EXPECT_TRUE(index.table(2).empty());
}

TEST(EntropyIndex, MatchesBruteForceOracle) {
  std::mt19937_64 rng(77);
  const std::vector<std::size_t> orders{1, 2, 3};
  for (int trial = 0; trial < 20; ++trial) {
    const auto logs = oracle::random_logs(1 + rng() % 12, 2 + rng() % 15, 2000, rng);
    const auto index = build_entropy_index(logs, orders);
    EXPECT_TRUE(oracle::index_matches(index, oracle::brute_force_index(logs, orders), orders)) << "trial " << trial;
  }
}

TEST(NormalizedEntropy, Examples) {
  EXPECT_DOUBLE_EQ(normalized_entropy({{5, 2}, {9, 2}}), 1.0);
  EXPECT_DOUBLE_EQ(normalized_entropy({{5, 4}}), 0.0);
  const double expected = (-0.75 * std::log(0.75) - 0.25 * std::log(0.25)) / std::log(2.0);
  EXPECT_NEAR(normalized_entropy({{1, 3}, {2, 1}}), expected, 1e-15);
  EXPECT_NEAR(expected, 0.8113, 1e-4);
  EXPECT_THROW(normalized_entropy({}), Error);
}

TEST(NormalizedEntropy, ScaleInvariantAndBounded) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    CountMap counts;
    const std::size_t n = 1 + rng() % 6;
    for (std::size_t k = 0; k < n; ++k) counts[rng() % 20] += 1 + rng() % 9;
    const double h = normalized_entropy(counts);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, 1.0 + 1e-12);
    CountMap scaled = counts;
    const std::uint64_t s = 2 + rng() % 5;
    for (auto& [item, c] : scaled) c *= s;
    EXPECT_NEAR(normalized_entropy(scaled), h, 1e-12);
  }
}

TEST(EntropyPenalty, Examples) {
  EntropyIndex index({3}, 10);
  index.add({3, 7, 8}, 5, 2);
  index.add({3, 7, 8}, 9, 2);
  index.finalize();
  const std::vector<std::size_t> recent{1, 3, 7, 8};
  EXPECT_DOUBLE_EQ(entropy_penalty(index, recent), 1.0);
  const std::vector<std::size_t> unseen{1, 2, 4};
  EXPECT_DOUBLE_EQ(entropy_penalty(index, unseen), 0.0);
  const std::vector<std::size_t> too_short{7, 8};
  EXPECT_DOUBLE_EQ(entropy_penalty(index, too_short), 0.0);

  EntropyIndex det({1, 2}, 10);
  det.add({4}, 1);
  det.add({3, 4}, 2, 3);
  det.finalize();
  const std::vector<std::size_t> r2{3, 4};
  EXPECT_DOUBLE_EQ(entropy_penalty(det, r2), 0.0);
}

TEST(EntropyPenalty, BoundedByNumberOfOrders) {
  std::mt19937_64 rng(21);
  const std::vector<std::size_t> orders{1, 2, 3};
  const auto logs = oracle::random_logs(5, 6, 600, rng);
  const auto index = build_entropy_index(logs, orders);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::size_t> recent(rng() % 5);
    for (auto& v : recent) v = rng() % 6;
    const double p = entropy_penalty(index, recent);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 3.0 + 1e-12);
  }
}

TEST(ModifiedReward, Examples) {
  PenaltyConfig none;
  EXPECT_DOUBLE_EQ(modified_reward(0.37, 5.0, 2.0, none), 0.37);
  PenaltyConfig kuairec{0.05, 5.0, {1, 2, 3}};
  EXPECT_NEAR(modified_reward(0.5, 0.2, 0.4, kuairec), 2.49, 1e-12);
  PenaltyConfig unit{1.0, 0.0, {1}};
  EXPECT_DOUBLE_EQ(modified_reward(0.3, 0.3, 0.9, unit), 0.0);
}

TEST(ModifiedReward, Monotone) {
  PenaltyConfig c{0.3, 0.7, {1}};
  EXPECT_GT(modified_reward(0.5, 0.1, 0.6, c), modified_reward(0.5, 0.1, 0.5, c));
  EXPECT_LT(modified_reward(0.5, 0.2, 0.5, c), modified_reward(0.5, 0.1, 0.5, c));
}

TEST(PenaltyConfig, Validation) {
  EXPECT_THROW((PenaltyConfig{-1.0, 0.0, {1}}.validate()), ValidationError);
  EXPECT_THROW((PenaltyConfig{0.0, -0.1, {1}}.validate()), ValidationError);
  EXPECT_THROW((PenaltyConfig{0.0, 0.0, {0}}.validate()), ValidationError);
  EXPECT_NO_THROW((PenaltyConfig{0.0, 0.0, {1, 2, 3}}.validate()));
}

TEST(KlToUniform, Examples) {
  const std::vector<double> uniform{0.25, 0.25, 0.25, 0.25};
  EXPECT_NEAR(kl_to_uniform(uniform), 0.0, 1e-15);
  const std::vector<double> point{0, 1, 0, 0};
  EXPECT_NEAR(kl_to_uniform(point), std::log(4.0), 1e-15);
  EXPECT_NEAR(std::log(4.0), 1.3863, 1e-4);
  const std::vector<double> half{0.5, 0.5};
  EXPECT_NEAR(kl_to_uniform(half), 0.0, 1e-15);
  const std::vector<double> bad{0.5, 0.6};
  EXPECT_THROW(kl_to_uniform(bad), ValidationError);
}

TEST(KlToUniform, IdentityWithEntropy) {
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> e(1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(1 + rng() % 12);
    double s = 0.0;
    for (auto& v : p) s += (v = (rng() % 4 == 0) ? 0.0 : e(rng));
    if (s == 0.0) p[0] = s = 1.0;
    for (auto& v : p) v /= s;
    // Direct definition, independent of the library's routine.
    double direct = 0.0;
    for (double v : p) {
      if (v > 0) direct += v * std::log(v * static_cast<double>(p.size()));
    }
    EXPECT_NEAR(kl_to_uniform(p), direct, 1e-12);
    EXPECT_NEAR(kl_to_uniform(p), std::log(static_cast<double>(p.size())) - shannon_entropy(p), 1e-9);
  }
}

TEST(EntropyIndex, SaveLoadRoundTrip) {
  std::mt19937_64 rng(4);
  const auto index = build_entropy_index(oracle::random_logs(4, 8, 300, rng), {1, 2, 3});
  const auto dir = std::filesystem::temp_directory_path() / "dorl_test_pen";
  std::filesystem::create_directories(dir);
  save_entropy_index(dir / "idx.json", index, "h", 2);
  const auto back = load_entropy_index(dir / "idx.json");
  EXPECT_EQ(back, index);
  const std::vector<std::size_t> recent{1, 2, 3};
  EXPECT_DOUBLE_EQ(entropy_penalty(back, recent), entropy_penalty(index, recent));
}

}  // namespace
}  // namespace dorl
