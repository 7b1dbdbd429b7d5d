#pragma once

// Independent reference computations shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "dorl/agent.hpp"
#include "dorl/data.hpp"
#include "dorl/penalty.hpp"
#include "dorl/user_model.hpp"

namespace dorl::oracle {

/// ||a − b|| / max(||a|| + ||b||, floor)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), floor);
}

/// Central differences of `loss` over every parameter exposed by `param(k)`.
template <typename Model>
std::vector<double> central_differences(Model& model, std::size_t n_params, const std::function<double(const Model&)>& loss,
                                        double h = 1e-5) {
  std::vector<double> g(n_params);
  for (std::size_t k = 0; k < n_params; ++k) {
    double& p = model.parameter(k);
    const double saved = p;
    p = saved + h;
    const double up = loss(model);
    p = saved - h;
    const double down = loss(model);
    p = saved;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Flattens a GPMMember in parameter() order.
inline std::vector<double> flatten(GPMMember m) {
  std::vector<double> out(m.parameter_count());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = m.parameter(k);
  return out;
}

inline std::vector<double> flatten(ActorCritic ac) {
  std::vector<double> out(ac.parameter_count());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = ac.parameter(k);
  return out;
}

/// Small random GPM member whose variance head stays inside the clamp range.
inline GPMMember random_member(std::size_t n_users, std::size_t n_items, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.5);
  auto m = GPMMember::zeros(n_users, n_items, dim);
  for (auto& v : m.user_emb) v = n(rng);
  for (auto& v : m.item_emb) v = n(rng);
  for (auto& v : m.user_bias) v = n(rng);
  for (auto& v : m.item_bias) v = n(rng);
  m.global_bias = n(rng);
  for (auto& v : m.var_weight) v = 0.3 * n(rng);
  m.var_bias = n(rng);
  return m;
}

/// (k, sorted window) -> next item -> count, by enumerating every position of
/// every user sequence for every order.
using BruteIndex = std::map<std::size_t, std::map<std::vector<std::size_t>, std::map<std::size_t, std::uint64_t>>>;

inline BruteIndex brute_force_index(const LogTable& logs, const std::vector<std::size_t>& orders) {
  BruteIndex out;
  for (std::size_t u = 0; u < logs.n_users; ++u) {
    std::vector<std::size_t> seq;
    for (const auto& r : logs.records) {
      if (r.user_id == u) seq.push_back(r.item_id);
    }
    for (std::size_t k : orders) {
      for (std::size_t start = 0; start + k < seq.size(); ++start) {
        std::vector<std::size_t> key;
        for (std::size_t j = start; j < start + k; ++j) key.push_back(seq[j]);
        std::sort(key.begin(), key.end());
        out[k][key][seq[start + k]] += 1;
      }
    }
  }
  return out;
}

inline bool index_matches(const EntropyIndex& index, const BruteIndex& brute, const std::vector<std::size_t>& orders) {
  for (std::size_t k : orders) {
    const auto it = brute.find(k);
    const auto& table = index.table(k);
    if (it == brute.end()) {
      if (!table.empty()) return false;
      continue;
    }
    if (table.size() != it->second.size()) return false;
    for (const auto& [key, counts] : it->second) {
      const auto found = table.find(key);
      if (found == table.end()) return false;
      if (found->second != CountMap(counts.begin(), counts.end())) return false;
    }
  }
  return true;
}

/// Random log with sequences of random length over a small item universe.
inline LogTable random_logs(std::size_t n_users, std::size_t n_items, std::size_t max_events, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(0, max_events / std::max<std::size_t>(n_users, 1));
  std::uniform_int_distribution<std::size_t> item(0, n_items - 1);
  std::uniform_real_distribution<double> reward(0.0, 1.0);
  std::vector<InteractionRecord> recs;
  for (std::size_t u = 0; u < n_users; ++u) {
    const std::size_t n = len(rng);
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t i = item(rng);
      recs.push_back({u, i, static_cast<std::int64_t>(t), reward(rng), i % 4});
    }
  }
  auto logs = make_log_table(std::move(recs));
  logs.n_users = n_users;
  logs.n_items = n_items;
  return logs;
}

/// Random transitions on a small actor-critic for gradient checks.
inline std::vector<Transition> random_transitions(const ActorCritic& ac, std::size_t count, std::mt19937_64& rng) {
  const std::size_t n = ac.n_items();
  std::uniform_int_distribution<std::size_t> item(0, n - 1), len(0, ac.tracker.window + 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Transition> out;
  for (std::size_t c = 0; c < count; ++c) {
    Transition tr;
    const std::size_t l = len(rng);
    for (std::size_t k = 0; k < l; ++k) {
      tr.window_items.push_back(item(rng));
      tr.window_rewards.push_back(unit(rng));
    }
    tr.mask.assign(n, true);
    for (std::size_t k = 0; k < n; ++k) tr.mask[k] = unit(rng) > 0.3;
    tr.action = item(rng);
    tr.mask[tr.action] = true;
    tr.advantage = normal(rng);
    tr.target = normal(rng);
    out.push_back(std::move(tr));
  }
  return out;
}

inline ActorCritic random_actor_critic(std::size_t n_items, std::size_t dim, std::size_t window, std::mt19937_64& rng) {
  StateTrackerConfig tracker;
  tracker.emb_dim = dim;
  tracker.window = window;
  ActorCriticHyper hyper;
  hyper.entropy_coef = 0.05;
  hyper.seed = rng();
  auto ac = ActorCritic::create(n_items, tracker, hyper);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& v : ac.item_embeddings.data) v = n(rng);
  for (auto& v : ac.actor_weight.data) v = n(rng);
  for (auto& v : ac.actor_bias) v = n(rng);
  for (auto& v : ac.critic_weight) v = n(rng);
  ac.critic_bias = n(rng);
  return ac;
}

}  // namespace dorl::oracle
