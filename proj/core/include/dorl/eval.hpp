#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "dorl/agent.hpp"
#include "dorl/data.hpp"
#include "dorl/env.hpp"

namespace dorl {

struct Trajectory {
  std::size_t user = 0;
  std::vector<HistoryEntry> steps;
  TerminationReason reason = TerminationReason::none;

  [[nodiscard]] double total_reward() const;
};

struct TrajectoryMetrics {
  double r_tra = 0.0;
  double r_each = 0.0;
  std::size_t length = 0;
  double mcd = 0.0;
};

TrajectoryMetrics trajectory_metrics(const Trajectory& t, const std::set<std::size_t>& dominated);

/// Runs reset / recommend / step until the environment terminates.
Trajectory run_episode(const WorldSpec& world, Recommender& agent, std::size_t user, std::uint64_t seed);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct EvalSummary {
  std::size_t n_episodes = 0;
  MetricSummary r_tra;
  MetricSummary r_each;
  MetricSummary length;
  double mcd = 0.0;  // pooled over every recommended item
  std::vector<Trajectory> trajectories;
};

MetricSummary summarize(const std::vector<double>& values);

/// Users are drawn uniformly with `seed`; episode e runs with seed + 1 + e.
EvalSummary evaluate(const WorldSpec& world, Recommender& agent, const std::set<std::size_t>& dominated,
                     std::size_t n_episodes = 100, std::uint64_t seed = 0);

/// Share of recommended items whose category is dominated, pooled over all
/// trajectories. Throws if nothing was recommended.
double mcd(const std::vector<Trajectory>& trajectories, const std::set<std::size_t>& dominated);

struct RepeatRate {
  std::size_t user = 0;
  std::int64_t day = 0;
  std::size_t events = 0;
  double item_level = 0.0;
  double category_level = 0.0;
};

inline constexpr std::int64_t kSecondsPerDay = 86400;

std::int64_t day_of(std::int64_t timestamp);

/// Events over unique items (and over unique categories), per (user, day).
std::vector<RepeatRate> repeat_rates(const LogTable& logs);

/// Inclusive range of events-per-day.
struct ActivityBucket {
  std::size_t lo = 1;
  std::size_t hi = std::numeric_limits<std::size_t>::max();
};

struct RetentionRow {
  ActivityBucket bucket;
  std::size_t retained = 0;
  std::size_t eligible = 0;
  [[nodiscard]] double rate() const { return eligible ? static_cast<double>(retained) / static_cast<double>(eligible) : 0.0; }
};

/// A (user, day) counts as retained when the user has an event on day + 1.
/// User-days on the last day of the log are not eligible (tomorrow is unseen).
std::vector<RetentionRow> day1_retention(const LogTable& logs, const std::vector<ActivityBucket>& buckets);

/// One grid point of a sweep. `params` name/value pairs become param_* columns.
struct SweepPoint {
  std::vector<std::pair<std::string, double>> params;
};

struct SweepRow {
  SweepPoint point;
  MetricSummary r_tra;
  MetricSummary r_each;
  MetricSummary length;
  double mcd = 0.0;
};

/// Evaluates `run(point)` for every grid point, in order.
std::vector<SweepRow> sweep(const std::vector<SweepPoint>& grid, const std::function<EvalSummary(const SweepPoint&)>& run);

/// Averages rows that agree on every parameter except `param`, which is
/// dropped. Group order follows first appearance.
std::vector<SweepRow> marginalize(const std::vector<SweepRow>& rows, const std::string& param);

/// `param_*,r_tra_mean,r_tra_std,r_each_mean,r_each_std,length_mean,length_std,mcd`
std::string format_results_csv(const std::vector<SweepRow>& rows);

}  // namespace dorl
