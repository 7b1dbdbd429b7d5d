#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace dorl::theory {

/// One reward outcome of a (s, a) pair in a reward-factored MDP: the next
/// state is a deterministic function of the realized reward.
struct RewardOutcome {
  double value = 0.0;
  double prob = 0.0;
  std::size_t next_state = 0;
};

/// Small enumerable MDP. `transition` is [S x A x S], `reward` holds the
/// expected reward [S x A]. When `outcomes` is non-empty ([S x A] lists) the
/// MDP is reward-factored and transition/reward are derived from it.
struct FiniteMDP {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;
  std::vector<double> reward;
  double gamma = 0.9;
  std::vector<double> initial;
  std::vector<std::vector<RewardOutcome>> outcomes;

  [[nodiscard]] double T(std::size_t s, std::size_t a, std::size_t s2) const {
    return transition[(s * n_actions + a) * n_states + s2];
  }
  [[nodiscard]] double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }
  [[nodiscard]] bool reward_factored() const noexcept { return !outcomes.empty(); }

  void validate() const;

  static FiniteMDP from_outcomes(std::size_t n_states, std::size_t n_actions, double gamma, std::vector<double> initial,
                                 std::vector<std::vector<RewardOutcome>> outcomes);
};

struct TabularPolicy {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> probs;  // [S x A]

  [[nodiscard]] double operator()(std::size_t s, std::size_t a) const { return probs[s * n_actions + a]; }
  void validate() const;

  static TabularPolicy uniform(std::size_t n_states, std::size_t n_actions);
  static TabularPolicy deterministic(std::size_t n_actions, const std::vector<std::size_t>& actions);
};

/// Exact V^π from (I − γ P_π) V = r_π.
Eigen::VectorXd value_function(const FiniteMDP& m, const TabularPolicy& pi);

/// (1 − γ)-normalized discounted state-action occupancy, [S x A].
Eigen::MatrixXd occupancy(const FiniteMDP& m, const TabularPolicy& pi);

double eta_via_value(const FiniteMDP& m, const TabularPolicy& pi);
double eta_via_occupancy(const FiniteMDP& m, const TabularPolicy& pi);

/// Normalized return; both routes are computed and must agree to 1e-8.
double eta(const FiniteMDP& m, const TabularPolicy& pi);

/// G(s,a) = E_{M̂}[γ V_M(s') + r] − E_M[γ V_M(s') + r], V_M from the true MDP.
double mismatch_G(const FiniteMDP& m, const FiniteMDP& m_hat, const TabularPolicy& pi, std::size_t s, std::size_t a);

struct LemmaCheck {
  double lhs = 0.0;  // E_{ρ on M̂}[G]
  double rhs = 0.0;  // η(M̂) − η(M)
  double abs_diff = 0.0;
};

LemmaCheck verify_lemma1(const FiniteMDP& m, const FiniteMDP& m_hat, const TabularPolicy& pi);

struct BoundDecomposition {
  double abs_g = 0.0;
  double gamma_dv = 0.0;
  double d1 = 0.0;
  bool holds = false;
};

/// |G| against γ·d_V + d₁ on a reward-factored pair sharing the next-state map.
BoundDecomposition bound_decomposition(const FiniteMDP& m, const FiniteMDP& m_hat, const TabularPolicy& pi,
                                       std::size_t s, std::size_t a);

/// All A^S deterministic policies; throws above `limit`.
std::vector<TabularPolicy> enumerate_deterministic_policies(std::size_t n_states, std::size_t n_actions,
                                                            std::size_t limit = 100000);

struct Theorem1Report {
  bool hypothesis_holds = false;
  std::size_t n_policies = 0;
  std::size_t first_violation = 0;  // policy index, valid when !hypothesis_holds
  std::size_t best_policy = 0;      // argmax of η on the penalized MDP
  double eta_true_of_best = 0.0;    // η_M(π̂)
  double lower_bound = 0.0;         // max_π η_M(π) − 2λ ε_p(π)
  bool bound_holds = false;
  bool checked = false;             // false when the hypothesis failed
};

/// Checks the penalized-MDP lower bound by enumerating deterministic policies.
/// `penalty` is [S x A], non-negative.
Theorem1Report verify_theorem1(const FiniteMDP& m, const FiniteMDP& m_hat, const std::vector<double>& penalty,
                               double lambda);

/// ε_p(π) = E over the M̂ occupancy of p.
double penalty_expectation(const FiniteMDP& m_hat, const TabularPolicy& pi, const std::vector<double>& penalty);

/// max over deterministic π of |G^π(s,a)|, plus `margin`, per (s,a).
std::vector<double> mismatch_penalty(const FiniteMDP& m, const FiniteMDP& m_hat, double margin);

FiniteMDP random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, std::mt19937_64& rng);

/// Same shape, fresh random dynamics and rewards mixed with `m` by `shift`.
FiniteMDP perturbed_mdp(const FiniteMDP& m, double shift, std::mt19937_64& rng);

FiniteMDP random_reward_factored_mdp(std::size_t n_states, std::size_t n_actions, std::size_t n_outcomes, double gamma,
                                     std::mt19937_64& rng);

/// Keeps the (value, next_state) support of `m` and redraws the outcome
/// probabilities, mixed with the originals by `shift`.
FiniteMDP reweighted_rewards(const FiniteMDP& m, double shift, std::mt19937_64& rng);

TabularPolicy random_policy(std::size_t n_states, std::size_t n_actions, std::mt19937_64& rng);

}  // namespace dorl::theory
