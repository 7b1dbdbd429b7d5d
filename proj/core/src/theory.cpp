#include "dorl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "dorl/error.hpp"

namespace dorl::theory {
namespace {

constexpr double kProbTol = 1e-12;

std::vector<double> random_simplex(std::size_t n, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double total = 0.0;
  for (auto& v : p) total += v = e(rng);
  for (auto& v : p) v /= total;
  return p;
}

Eigen::MatrixXd policy_transition(const FiniteMDP& m, const TabularPolicy& pi) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.n_states), static_cast<Eigen::Index>(m.n_states));
  for (std::size_t s = 0; s < m.n_states; ++s) {
    for (std::size_t a = 0; a < m.n_actions; ++a) {
      const double w = pi(s, a);
      if (w == 0.0) continue;
      for (std::size_t s2 = 0; s2 < m.n_states; ++s2) {
        p(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) += w * m.T(s, a, s2);
      }
    }
  }
  return p;
}

void check_compatible(const FiniteMDP& m, const TabularPolicy& pi) {
  m.validate();
  pi.validate();
  if (pi.n_states != m.n_states || pi.n_actions != m.n_actions) {
    throw ValidationError("policy shape does not match the MDP");
  }
}

void check_pair(const FiniteMDP& m, const FiniteMDP& m_hat) {
  if (m.n_states != m_hat.n_states || m.n_actions != m_hat.n_actions || m.gamma != m_hat.gamma) {
    throw ValidationError("MDP pair must share states, actions and discount");
  }
}

Eigen::VectorXd solve_checked(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible()) throw InternalError("singular Bellman system");
  Eigen::VectorXd x = lu.solve(b);
  const double scale = std::max(1.0, b.lpNorm<Eigen::Infinity>());
  if ((a * x - b).lpNorm<Eigen::Infinity>() > 1e-10 * scale) throw InternalError("Bellman solve residual above 1e-10");
  return x;
}

}  // namespace

void FiniteMDP::validate() const {
  if (n_states == 0 || n_actions == 0) throw ValidationError("MDP needs at least one state and action");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in [0, 1)");
  if (transition.size() != n_states * n_actions * n_states || reward.size() != n_states * n_actions ||
      initial.size() != n_states) {
    throw ValidationError("MDP arrays have inconsistent sizes");
  }
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      double row = 0.0;
      for (std::size_t s2 = 0; s2 < n_states; ++s2) {
        if (T(s, a, s2) < 0.0) throw ValidationError("negative transition probability");
        row += T(s, a, s2);
      }
      if (std::abs(row - 1.0) > kProbTol) throw ValidationError("transition row does not sum to 1");
    }
  }
  double total = 0.0;
  for (double p : initial) total += p;
  if (std::abs(total - 1.0) > kProbTol) throw ValidationError("initial distribution does not sum to 1");
}

FiniteMDP FiniteMDP::from_outcomes(std::size_t n_states, std::size_t n_actions, double gamma,
                                   std::vector<double> initial, std::vector<std::vector<RewardOutcome>> outcomes) {
  if (outcomes.size() != n_states * n_actions) throw ValidationError("need one outcome list per (s, a)");
  FiniteMDP m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.initial = std::move(initial);
  m.transition.assign(n_states * n_actions * n_states, 0.0);
  m.reward.assign(n_states * n_actions, 0.0);
  for (std::size_t sa = 0; sa < outcomes.size(); ++sa) {
    std::map<double, std::size_t> next_of;
    for (const auto& o : outcomes[sa]) {
      if (o.next_state >= n_states) throw ValidationError("outcome next_state out of range");
      auto [it, fresh] = next_of.emplace(o.value, o.next_state);
      if (!fresh && it->second != o.next_state) {
        throw ValidationError("one reward value leads to two next states; not reward-factored");
      }
      m.transition[sa * n_states + o.next_state] += o.prob;
      m.reward[sa] += o.prob * o.value;
    }
  }
  m.outcomes = std::move(outcomes);
  m.validate();
  return m;
}

void TabularPolicy::validate() const {
  if (probs.size() != n_states * n_actions) throw ValidationError("policy has wrong size");
  for (std::size_t s = 0; s < n_states; ++s) {
    double row = 0.0;
    for (std::size_t a = 0; a < n_actions; ++a) {
      if ((*this)(s, a) < 0.0) throw ValidationError("negative policy probability");
      row += (*this)(s, a);
    }
    if (std::abs(row - 1.0) > kProbTol) throw ValidationError("policy row does not sum to 1");
  }
}

TabularPolicy TabularPolicy::uniform(std::size_t n_states, std::size_t n_actions) {
  return {n_states, n_actions, std::vector<double>(n_states * n_actions, 1.0 / static_cast<double>(n_actions))};
}

TabularPolicy TabularPolicy::deterministic(std::size_t n_actions, const std::vector<std::size_t>& actions) {
  TabularPolicy pi{actions.size(), n_actions, std::vector<double>(actions.size() * n_actions, 0.0)};
  for (std::size_t s = 0; s < actions.size(); ++s) pi.probs[s * n_actions + actions[s]] = 1.0;
  return pi;
}

Eigen::VectorXd value_function(const FiniteMDP& m, const TabularPolicy& pi) {
  check_compatible(m, pi);
  const auto n = static_cast<Eigen::Index>(m.n_states);
  Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(n);
  for (std::size_t s = 0; s < m.n_states; ++s) {
    for (std::size_t a = 0; a < m.n_actions; ++a) r_pi(static_cast<Eigen::Index>(s)) += pi(s, a) * m.r(s, a);
  }
  const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n, n) - m.gamma * policy_transition(m, pi);
  return solve_checked(lhs, r_pi);
}

Eigen::MatrixXd occupancy(const FiniteMDP& m, const TabularPolicy& pi) {
  check_compatible(m, pi);
  const auto n = static_cast<Eigen::Index>(m.n_states);
  Eigen::VectorXd mu(n);
  for (std::size_t s = 0; s < m.n_states; ++s) mu(static_cast<Eigen::Index>(s)) = m.initial[s];
  const Eigen::MatrixXd lhs = (Eigen::MatrixXd::Identity(n, n) - m.gamma * policy_transition(m, pi)).transpose();
  const Eigen::VectorXd d = solve_checked(lhs, (1.0 - m.gamma) * mu);
  Eigen::MatrixXd rho(n, static_cast<Eigen::Index>(m.n_actions));
  for (std::size_t s = 0; s < m.n_states; ++s) {
    for (std::size_t a = 0; a < m.n_actions; ++a) {
      rho(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = d(static_cast<Eigen::Index>(s)) * pi(s, a);
    }
  }
  if (std::abs(rho.sum() - 1.0) > 1e-10) throw InternalError("occupancy does not sum to 1");
  return rho;
}

double eta_via_value(const FiniteMDP& m, const TabularPolicy& pi) {
  const auto v = value_function(m, pi);
  double total = 0.0;
  for (std::size_t s = 0; s < m.n_states; ++s) total += m.initial[s] * v(static_cast<Eigen::Index>(s));
  return (1.0 - m.gamma) * total;
}

double eta_via_occupancy(const FiniteMDP& m, const TabularPolicy& pi) {
  const auto rho = occupancy(m, pi);
  double total = 0.0;
  for (std::size_t s = 0; s < m.n_states; ++s) {
    for (std::size_t a = 0; a < m.n_actions; ++a) {
      total += rho(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) * m.r(s, a);
    }
  }
  return total;
}

double eta(const FiniteMDP& m, const TabularPolicy& pi) {
  const double a = eta_via_value(m, pi);
  const double b = eta_via_occupancy(m, pi);
  if (std::abs(a - b) > 1e-8) {
    throw InternalError("eta routes disagree: value route " + std::to_string(a) + ", occupancy route " +
                        std::to_string(b));
  }
  return b;
}

double mismatch_G(const FiniteMDP& m, const FiniteMDP& m_hat, const TabularPolicy& pi, std::size_t s, std::size_t a) {
  check_pair(m, m_hat);
  const auto v = value_function(m, pi);
  double est = m_hat.r(s, a);
  double truth = m.r(s, a);
  for (std::size_t s2 = 0; s2 < m.n_states; ++s2) {
    est += m.gamma * m_hat.T(s, a, s2) * v(static_cast<Eigen::Index>(s2));
    truth += m.gamma * m.T(s, a, s2) * v(static_cast<Eigen::Index>(s2));
  }
  return est - truth;
}

LemmaCheck verify_lemma1(const FiniteMDP& m, const FiniteMDP& m_hat, const TabularPolicy& pi) {
  check_pair(m, m_hat);
  const auto rho_hat = occupancy(m_hat, pi);
  LemmaCheck c;
  for (std::size_t s = 0; s < m.n_states; ++s) {
    for (std::size_t a = 0; a < m.n_actions; ++a) {
      c.lhs += rho_hat(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) * mismatch_G(m, m_hat, pi, s, a);
    }
  }
  c.rhs = eta(m_hat, pi) - eta(m, pi);
  c.abs_diff = std::abs(c.lhs - c.rhs);
  return c;
}

BoundDecomposition bound_decomposition(const FiniteMDP& m, const FiniteMDP& m_hat, const TabularPolicy& pi,
                                       std::size_t s, std::size_t a) {
  check_pair(m, m_hat);
  if (!m.reward_factored() || !m_hat.reward_factored()) {
    throw ValidationError("bound_decomposition needs reward-factored MDPs (next state = f(s, a, r))");
  }
  const auto& truth = m.outcomes[s * m.n_actions + a];
  const auto& est = m_hat.outcomes[s * m.n_actions + a];
  std::map<double, std::size_t> f;
  for (const auto* list : {&truth, &est}) {
    for (const auto& o : *list) {
      auto [it, fresh] = f.emplace(o.value, o.next_state);
      if (!fresh && it->second != o.next_state) {
        throw ValidationError("MDP pair does not share one reward-to-state map f(s, a, r)");
      }
    }
  }
  const auto v = value_function(m, pi);
  double er_hat = 0.0, er = 0.0, ev_hat = 0.0, ev = 0.0;
  for (const auto& o : est) {
    er_hat += o.prob * o.value;
    ev_hat += o.prob * v(static_cast<Eigen::Index>(o.next_state));
  }
  for (const auto& o : truth) {
    er += o.prob * o.value;
    ev += o.prob * v(static_cast<Eigen::Index>(o.next_state));
  }
  BoundDecomposition b;
  b.abs_g = std::abs(mismatch_G(m, m_hat, pi, s, a));
  b.d1 = std::abs(er_hat - er);
  b.gamma_dv = m.gamma * std::abs(ev_hat - ev);
  b.holds = b.abs_g <= b.gamma_dv + b.d1 + 1e-12;
  return b;
}

std::vector<TabularPolicy> enumerate_deterministic_policies(std::size_t n_states, std::size_t n_actions,
                                                            std::size_t limit) {
  std::size_t count = 1;
  for (std::size_t s = 0; s < n_states; ++s) {
    count *= n_actions;
    if (count > limit) throw ValidationError("too many deterministic policies to enumerate");
  }
  std::vector<TabularPolicy> out;
  out.reserve(count);
  std::vector<std::size_t> actions(n_states, 0);
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t code = k;
    for (std::size_t s = 0; s < n_states; ++s) {
      actions[s] = code % n_actions;
      code /= n_actions;
    }
    out.push_back(TabularPolicy::deterministic(n_actions, actions));
  }
  return out;
}

double penalty_expectation(const FiniteMDP& m_hat, const TabularPolicy& pi, const std::vector<double>& penalty) {
  const auto rho = occupancy(m_hat, pi);
  double total = 0.0;
  for (std::size_t s = 0; s < m_hat.n_states; ++s) {
    for (std::size_t a = 0; a < m_hat.n_actions; ++a) {
      total += rho(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) * penalty[s * m_hat.n_actions + a];
    }
  }
  return total;
}

Theorem1Report verify_theorem1(const FiniteMDP& m, const FiniteMDP& m_hat, const std::vector<double>& penalty,
                               double lambda) {
  check_pair(m, m_hat);
  if (penalty.size() != m.n_states * m.n_actions) throw ValidationError("penalty must be [S x A]");
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
  for (double p : penalty) {
    if (!(p >= 0.0)) throw ValidationError("penalty entries must be >= 0");
  }

  FiniteMDP penalized = m_hat;
  penalized.outcomes.clear();
  for (std::size_t k = 0; k < penalized.reward.size(); ++k) penalized.reward[k] -= lambda * penalty[k];

  const auto policies = enumerate_deterministic_policies(m.n_states, m.n_actions);
  Theorem1Report rep;
  rep.n_policies = policies.size();
  std::vector<double> eta_true(policies.size()), eps(policies.size());
  double best_penalized = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < policies.size(); ++k) {
    eta_true[k] = eta(m, policies[k]);
    const double eta_hat = eta(m_hat, policies[k]);
    eps[k] = penalty_expectation(m_hat, policies[k], penalty);
    if (lambda * eps[k] < std::abs(eta_hat - eta_true[k]) - 1e-12) {
      rep.hypothesis_holds = false;
      rep.first_violation = k;
      return rep;
    }
    const double v = eta(penalized, policies[k]);
    if (v > best_penalized) {
      best_penalized = v;
      rep.best_policy = k;
    }
  }
  rep.hypothesis_holds = true;
  rep.checked = true;
  rep.eta_true_of_best = eta_true[rep.best_policy];
  rep.lower_bound = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < policies.size(); ++k) {
    rep.lower_bound = std::max(rep.lower_bound, eta_true[k] - 2.0 * lambda * eps[k]);
  }
  rep.bound_holds = rep.eta_true_of_best >= rep.lower_bound - 1e-12;
  return rep;
}

std::vector<double> mismatch_penalty(const FiniteMDP& m, const FiniteMDP& m_hat, double margin) {
  check_pair(m, m_hat);
  std::vector<double> p(m.n_states * m.n_actions, 0.0);
  for (const auto& pi : enumerate_deterministic_policies(m.n_states, m.n_actions)) {
    for (std::size_t s = 0; s < m.n_states; ++s) {
      for (std::size_t a = 0; a < m.n_actions; ++a) {
        auto& slot = p[s * m.n_actions + a];
        slot = std::max(slot, std::abs(mismatch_G(m, m_hat, pi, s, a)));
      }
    }
  }
  for (auto& v : p) v += margin;
  return p;
}

FiniteMDP random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, std::mt19937_64& rng) {
  FiniteMDP m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t sa = 0; sa < n_states * n_actions; ++sa) {
    const auto row = random_simplex(n_states, rng);
    m.transition.insert(m.transition.end(), row.begin(), row.end());
  }
  m.reward.resize(n_states * n_actions);
  for (auto& r : m.reward) r = unit(rng);
  m.initial = random_simplex(n_states, rng);
  m.validate();
  return m;
}

FiniteMDP perturbed_mdp(const FiniteMDP& m, double shift, std::mt19937_64& rng) {
  const FiniteMDP other = random_mdp(m.n_states, m.n_actions, m.gamma, rng);
  FiniteMDP out = m;
  out.outcomes.clear();
  for (std::size_t k = 0; k < out.transition.size(); ++k) {
    out.transition[k] = (1.0 - shift) * m.transition[k] + shift * other.transition[k];
  }
  for (std::size_t k = 0; k < out.reward.size(); ++k) out.reward[k] = (1.0 - shift) * m.reward[k] + shift * other.reward[k];
  out.validate();
  return out;
}

FiniteMDP random_reward_factored_mdp(std::size_t n_states, std::size_t n_actions, std::size_t n_outcomes, double gamma,
                                     std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> state(0, n_states - 1);
  std::vector<std::vector<RewardOutcome>> outcomes(n_states * n_actions);
  for (auto& list : outcomes) {
    const auto probs = random_simplex(n_outcomes, rng);
    for (std::size_t j = 0; j < n_outcomes; ++j) {
      // distinct values per (s, a) so f(s, a, ·) is a function
      const double value = (static_cast<double>(j) + unit(rng)) / static_cast<double>(n_outcomes);
      list.push_back({value, probs[j], state(rng)});
    }
  }
  return FiniteMDP::from_outcomes(n_states, n_actions, gamma, random_simplex(n_states, rng), std::move(outcomes));
}

FiniteMDP reweighted_rewards(const FiniteMDP& m, double shift, std::mt19937_64& rng) {
  if (!m.reward_factored()) throw ValidationError("reweighted_rewards needs a reward-factored MDP");
  auto outcomes = m.outcomes;
  for (auto& list : outcomes) {
    const auto fresh = random_simplex(list.size(), rng);
    for (std::size_t j = 0; j < list.size(); ++j) list[j].prob = (1.0 - shift) * list[j].prob + shift * fresh[j];
  }
  return FiniteMDP::from_outcomes(m.n_states, m.n_actions, m.gamma, m.initial, std::move(outcomes));
}

TabularPolicy random_policy(std::size_t n_states, std::size_t n_actions, std::mt19937_64& rng) {
  TabularPolicy pi{n_states, n_actions, {}};
  for (std::size_t s = 0; s < n_states; ++s) {
    const auto row = random_simplex(n_actions, rng);
    pi.probs.insert(pi.probs.end(), row.begin(), row.end());
  }
  return pi;
}

}  // namespace dorl::theory
