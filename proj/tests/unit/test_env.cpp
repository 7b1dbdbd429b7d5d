#include <gtest/gtest.h>

#include "dorl/env.hpp"
#include "dorl/error.hpp"

namespace dorl {
namespace {

WorldSpec toy_world(std::size_t n_items, std::size_t n_categories, QuitRule rule, std::size_t max_rounds) {
  WorldSpec w;
  w.n_users = 2;
  w.n_items = n_items;
  w.n_categories = n_categories;
  for (std::size_t u = 0; u < 2; ++u) {
    for (std::size_t i = 0; i < n_items; ++i) w.preference.push_back(0.01 * static_cast<double>(i + u));
  }
  for (std::size_t i = 0; i < n_items; ++i) w.item_category.push_back(i % n_categories);
  w.quit_rule = rule;
  w.max_rounds = max_rounds;
  return w;
}

TEST(ShouldQuit, Examples) {
  const std::vector<std::size_t> recent{5, 2, 9, 7};
  EXPECT_TRUE(should_quit(recent, 2, {4, 0}));
  EXPECT_FALSE(should_quit(recent, 8, {4, 0}));
  const std::vector<std::size_t> recent2{1, 1, 3, 1, 4};
  EXPECT_TRUE(should_quit(recent2, 1, {5, 2}));
  EXPECT_FALSE(should_quit(recent2, 1, {5, 3}));
}

TEST(ShouldQuit, OnlyLastWindowCounts) {
  const std::vector<std::size_t> recent{2, 2, 2, 5, 6};
  EXPECT_FALSE(should_quit(recent, 2, {2, 0}));
  EXPECT_TRUE(should_quit(recent, 2, {3, 0}));
  EXPECT_FALSE(should_quit(recent, 2, {0, 0}));  // disabled
}

TEST(Reset, EmptyHistoryAndBounds) {
  const auto w = toy_world(6, 3, {4, 0}, 30);
  const auto s = reset(w, 1);
  EXPECT_TRUE(s.history.empty());
  EXPECT_FALSE(s.terminated);
  EXPECT_EQ(s, reset(w, 1));
  EXPECT_THROW(reset(w, 2), Error);
}

TEST(Step, FirstStepDoneOnlyWhenMaxRoundsIsOne) {
  auto w = toy_world(6, 3, {4, 0}, 30);
  EXPECT_FALSE(step(w, reset(w, 0), 3).done);
  w.max_rounds = 1;
  const auto r = step(w, reset(w, 0), 3);
  EXPECT_TRUE(r.done);
  EXPECT_EQ(r.reason, TerminationReason::max_rounds);
}

TEST(Step, QuitOnCategoryRepeatCountsTerminalReward) {
  const auto w = toy_world(9, 3, {4, 0}, 30);
  // categories of items 0, 1, 3 are a, b, a
  auto s = reset(w, 0);
  auto r1 = step(w, s, 0);
  auto r2 = step(w, r1.state, 1);
  EXPECT_FALSE(r2.done);
  auto r3 = step(w, r2.state, 3);
  EXPECT_TRUE(r3.done);
  EXPECT_EQ(r3.reason, TerminationReason::quit_rule);
  EXPECT_TRUE(r3.state.terminated);
  EXPECT_EQ(r3.state.history.size(), 3u);
  EXPECT_DOUBLE_EQ(r3.reward, w.pref(0, 3));
  EXPECT_DOUBLE_EQ(r3.state.history.back().reward, w.pref(0, 3));
}

TEST(Step, Errors) {
  const auto w = toy_world(6, 3, {4, 0}, 30);
  auto r = step(w, reset(w, 0), 2);
  EXPECT_THROW(step(w, r.state, 2), Error);
  EXPECT_THROW(step(w, r.state, 6), Error);
  auto done = step(w, step(w, r.state, 0).state, 5);
  ASSERT_TRUE(done.done);
  EXPECT_THROW(step(w, done.state, 1), Error);
}

TEST(Step, PigeonholeForcesEarlyQuit) {
  const auto w = toy_world(60, 3, {4, 0}, 30);
  auto s = reset(w, 0);
  std::size_t steps = 0;
  for (std::size_t i = 0; i < 60 && !s.terminated; ++i) {
    s = step(w, s, i).state;
    ++steps;
  }
  EXPECT_EQ(s.reason, TerminationReason::quit_rule);
  EXPECT_EQ(steps, 4u);
}

TEST(Step, DisabledRuleReachesMaxRounds) {
  const auto w = toy_world(40, 2, {0, 0}, 30);
  auto s = reset(w, 1);
  double total = 0.0;
  std::size_t i = 0;
  while (!s.terminated) {
    auto r = step(w, s, i++);
    total += r.reward;
    s = r.state;
  }
  EXPECT_EQ(s.history.size(), 30u);
  EXPECT_EQ(s.reason, TerminationReason::max_rounds);
  double sum = 0.0;
  for (const auto& h : s.history) sum += h.reward;
  EXPECT_DOUBLE_EQ(sum, total);
}

TEST(EnvState, AllowedMaskExcludesHistory) {
  const auto w = toy_world(5, 5, {0, 0}, 30);
  auto s = step(w, reset(w, 0), 3).state;
  EXPECT_EQ(s.allowed_mask(5), (std::vector<bool>{true, true, true, false, true}));
  EXPECT_TRUE(s.contains(3));
  EXPECT_FALSE(s.contains(1));
}

}  // namespace
}  // namespace dorl
