#include "dorl/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <random>
#include <tuple>

#include "dorl/error.hpp"

namespace dorl {
namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

double Trajectory::total_reward() const {
  double s = 0.0;
  for (const auto& st : steps) s += st.reward;
  return s;
}

TrajectoryMetrics trajectory_metrics(const Trajectory& t, const std::set<std::size_t>& dominated) {
  TrajectoryMetrics m;
  m.r_tra = t.total_reward();
  m.length = t.steps.size();
  m.r_each = m.length ? m.r_tra / static_cast<double>(m.length) : 0.0;
  if (m.length) m.mcd = mcd({t}, dominated);
  return m;
}

Trajectory run_episode(const WorldSpec& world, Recommender& agent, std::size_t user, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EnvState state = reset(world, user);
  agent.begin_episode(user);
  Trajectory traj;
  traj.user = user;
  while (!state.terminated) {
    const auto mask = state.allowed_mask(world.n_items);
    if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) break;
    const std::size_t item = agent.recommend(state, mask, rng);
    auto result = step(world, std::move(state), item);
    agent.observe(item, result.reward);
    state = std::move(result.state);
  }
  traj.steps = state.history;
  traj.reason = state.reason;
  return traj;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

EvalSummary evaluate(const WorldSpec& world, Recommender& agent, const std::set<std::size_t>& dominated,
                     std::size_t n_episodes, std::uint64_t seed) {
  if (n_episodes == 0) throw ValidationError("evaluate needs at least one episode");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, world.n_users - 1);
  EvalSummary out;
  out.n_episodes = n_episodes;
  std::vector<double> r_tra, r_each, length;
  for (std::size_t e = 0; e < n_episodes; ++e) {
    const std::size_t user = pick(rng);
    auto traj = run_episode(world, agent, user, seed + 1 + e);
    const auto m = trajectory_metrics(traj, dominated);
    r_tra.push_back(m.r_tra);
    r_each.push_back(m.r_each);
    length.push_back(static_cast<double>(m.length));
    out.trajectories.push_back(std::move(traj));
  }
  out.r_tra = summarize(r_tra);
  out.r_each = summarize(r_each);
  out.length = summarize(length);
  out.mcd = mcd(out.trajectories, dominated);
  return out;
}

double mcd(const std::vector<Trajectory>& trajectories, const std::set<std::size_t>& dominated) {
  std::size_t total = 0;
  std::size_t hits = 0;
  for (const auto& t : trajectories) {
    for (const auto& s : t.steps) {
      ++total;
      hits += dominated.count(s.category_id);
    }
  }
  if (total == 0) throw ValidationError("MCD is undefined without recommendations");
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::int64_t day_of(std::int64_t timestamp) {
  // floor division so negative timestamps land on the previous day
  return timestamp >= 0 ? timestamp / kSecondsPerDay : -((-timestamp + kSecondsPerDay - 1) / kSecondsPerDay);
}

std::vector<RepeatRate> repeat_rates(const LogTable& logs) {
  struct Acc {
    std::size_t events = 0;
    std::set<std::size_t> items;
    std::set<std::size_t> cats;
  };
  std::map<std::pair<std::size_t, std::int64_t>, Acc> groups;
  for (const auto& r : logs.records) {
    auto& g = groups[{r.user_id, day_of(r.timestamp)}];
    ++g.events;
    g.items.insert(r.item_id);
    g.cats.insert(r.category_id);
  }
  std::vector<RepeatRate> out;
  out.reserve(groups.size());
  for (const auto& [key, g] : groups) {
    out.push_back({key.first, key.second, g.events,
                   static_cast<double>(g.events) / static_cast<double>(g.items.size()),
                   static_cast<double>(g.events) / static_cast<double>(g.cats.size())});
  }
  return out;
}

std::vector<RetentionRow> day1_retention(const LogTable& logs, const std::vector<ActivityBucket>& buckets) {
  std::map<std::pair<std::size_t, std::int64_t>, std::size_t> activity;
  std::set<std::int64_t> days;
  for (const auto& r : logs.records) {
    const auto d = day_of(r.timestamp);
    ++activity[{r.user_id, d}];
    days.insert(d);
  }
  if (days.size() < 2) throw ValidationError("day-1 retention needs at least two distinct days in the log");
  const std::int64_t last_day = *days.rbegin();

  std::vector<RetentionRow> rows;
  for (const auto& b : buckets) rows.push_back({b, 0, 0});
  for (const auto& [key, events] : activity) {
    if (key.second == last_day) continue;
    const bool retained = activity.count({key.first, key.second + 1}) > 0;
    for (auto& row : rows) {
      if (events >= row.bucket.lo && events <= row.bucket.hi) {
        ++row.eligible;
        row.retained += retained ? 1 : 0;
      }
    }
  }
  return rows;
}

std::vector<SweepRow> sweep(const std::vector<SweepPoint>& grid,
                            const std::function<EvalSummary(const SweepPoint&)>& run) {
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (const auto& point : grid) {
    const auto s = run(point);
    rows.push_back({point, s.r_tra, s.r_each, s.length, s.mcd});
  }
  return rows;
}

std::vector<SweepRow> marginalize(const std::vector<SweepRow>& rows, const std::string& param) {
  std::vector<SweepRow> out;
  std::vector<std::size_t> counts;
  for (const auto& row : rows) {
    SweepPoint key;
    for (const auto& kv : row.point.params) {
      if (kv.first != param) key.params.push_back(kv);
    }
    auto it = std::find_if(out.begin(), out.end(), [&](const SweepRow& r) { return r.point.params == key.params; });
    if (it == out.end()) {
      out.push_back({key, {}, {}, {}, 0.0});
      counts.push_back(0);
      it = out.end() - 1;
    }
    auto& c = counts[static_cast<std::size_t>(it - out.begin())];
    ++c;
    const double w = 1.0 / static_cast<double>(c);
    auto blend = [w](MetricSummary& acc, const MetricSummary& v) {
      acc.mean += (v.mean - acc.mean) * w;
      acc.std += (v.std - acc.std) * w;
    };
    blend(it->r_tra, row.r_tra);
    blend(it->r_each, row.r_each);
    blend(it->length, row.length);
    it->mcd += (row.mcd - it->mcd) * w;
  }
  return out;
}

std::string format_results_csv(const std::vector<SweepRow>& rows) {
  std::string out;
  if (!rows.empty()) {
    for (const auto& kv : rows.front().point.params) out += "param_" + kv.first + ',';
  }
  out += "r_tra_mean,r_tra_std,r_each_mean,r_each_std,length_mean,length_std,mcd\n";
  for (const auto& row : rows) {
    for (const auto& kv : row.point.params) out += format_double(kv.second) + ',';
    out += format_double(row.r_tra.mean) + ',' + format_double(row.r_tra.std) + ',' + format_double(row.r_each.mean) +
           ',' + format_double(row.r_each.std) + ',' + format_double(row.length.mean) + ',' +
           format_double(row.length.std) + ',' + format_double(row.mcd) + '\n';
  }
  return out;
}

}  // namespace dorl
