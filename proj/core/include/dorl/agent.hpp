#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dorl/env.hpp"
#include "dorl/penalty.hpp"
#include "dorl/user_model.hpp"

namespace dorl {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  static Matrix zeros(std::size_t rows, std::size_t cols) { return {rows, cols, std::vector<double>(rows * cols)}; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  [[nodiscard]] std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct StateTrackerConfig {
  std::size_t window = 10;
  std::size_t emb_dim = 32;
  double eps = 1e-6;

  friend bool operator==(const StateTrackerConfig&, const StateTrackerConfig&) = default;
};

/// Running min/max affine map of modified rewards into [eps, 1].
class RewardNormalizer {
 public:
  explicit RewardNormalizer(double eps = 1e-6) : eps_(eps) {}
  RewardNormalizer(double lo, double hi, double eps) : lo_(lo), hi_(hi), seen_(true), eps_(eps) {}

  void observe(double r);
  [[nodiscard]] double apply(double r) const;

  [[nodiscard]] double lo() const noexcept { return lo_; }
  [[nodiscard]] double hi() const noexcept { return hi_; }
  [[nodiscard]] bool seen() const noexcept { return seen_; }
  [[nodiscard]] double eps() const noexcept { return eps_; }

  friend bool operator==(const RewardNormalizer&, const RewardNormalizer&) = default;

 private:
  double lo_ = 0.0;
  double hi_ = 0.0;
  bool seen_ = false;
  double eps_;
};

struct TrackedStep {
  std::size_t item = 0;
  double reward = 0.0;  // modified reward r̃
};

/// Mean over the last `window` steps of [embedding(item) ⊕ norm(r̃)]; the zero
/// vector for an empty history. Output length is embeddings.cols + 1.
std::vector<double> encode_state(std::span<const TrackedStep> history, const StateTrackerConfig& tracker,
                                 const RewardNormalizer& norm, const Matrix& embeddings);

struct ActorCriticHyper {
  double lr_actor = 1e-3;
  double lr_critic = 1e-3;
  double gamma = 0.9;
  double entropy_coef = 0.01;
  std::size_t rollout_len = 30;
  std::size_t episodes_per_epoch = 100;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ActorCriticHyper&, const ActorCriticHyper&) = default;
};

struct ActorCritic {
  StateTrackerConfig tracker;
  ActorCriticHyper hyper;
  Matrix item_embeddings;  // [n_items x d], shared by state encoding
  Matrix actor_weight;     // [n_items x (d+1)]
  std::vector<double> actor_bias;
  std::vector<double> critic_weight;  // [d+1]
  double critic_bias = 0.0;
  RewardNormalizer normalizer;

  /// Random N(0, 1/d) embeddings, zero actor and critic heads (uniform policy).
  static ActorCritic create(std::size_t n_items, const StateTrackerConfig& tracker, const ActorCriticHyper& hyper);

  [[nodiscard]] std::size_t n_items() const noexcept { return item_embeddings.rows; }
  [[nodiscard]] std::size_t state_dim() const noexcept { return item_embeddings.cols + 1; }
  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] double& parameter(std::size_t index);

  friend bool operator==(const ActorCritic&, const ActorCritic&) = default;
};

/// Softmax over logits with masked-out items at probability exactly 0.
std::vector<double> actor_forward(const ActorCritic& ac, std::span<const double> state, const std::vector<bool>& mask);
double critic_value(const ActorCritic& ac, std::span<const double> state);

enum class ActMode { greedy, sample };

std::size_t act(const ActorCritic& ac, std::span<const double> state, const std::vector<bool>& mask, ActMode mode,
                std::mt19937_64& rng);

/// Index of the largest probability, ties to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

/// One on-policy transition with its advantage and TD target frozen. The state
/// is rebuilt from `window_items` / `window_rewards` (already normalized) so the
/// loss stays a function of the embeddings.
struct Transition {
  std::vector<std::size_t> window_items;
  std::vector<double> window_rewards;
  std::size_t action = 0;
  std::vector<bool> mask;
  double advantage = 0.0;
  double target = 0.0;
};

struct TransitionLoss {
  double actor = 0.0;   // −A·log π(a|s) − β·H(π(·|s))
  double critic = 0.0;  // (target − V(s))²
};

std::vector<double> transition_state(const ActorCritic& ac, const Transition& tr);
TransitionLoss transition_loss(const ActorCritic& ac, const Transition& tr);

/// Adds ∂(actor + critic)/∂θ into `grad`, which must have the shape of `ac`.
TransitionLoss accumulate_transition_gradient(const ActorCritic& ac, const Transition& tr, ActorCritic& grad);

ActorCritic zero_like(const ActorCritic& ac);

struct PolicyTrainReport {
  std::vector<double> epoch_mean_reward;  // mean r̃ per simulated step, per epoch
};

/// Advantage actor-critic on the simulated environment: users drawn uniformly,
/// rewards from the penalized user model, no-repeat mask, no quit rule.
ActorCritic train_policy(const GPMEnsemble& ensemble, const EntropyIndex& index, const PenaltyConfig& penalty,
                         std::size_t n_users, ActorCritic ac, PolicyTrainReport* report = nullptr);

/// r̃ of recommending `item` to `user` after `recent_items`.
double simulated_reward(const GPMEnsemble& ensemble, const EntropyIndex& index, const PenaltyConfig& penalty,
                        std::size_t user, std::span<const std::size_t> recent_items, std::size_t item);

std::size_t epsilon_greedy_act(const GPMEnsemble& ensemble, std::size_t user, const std::vector<bool>& mask,
                               double epsilon, std::mt19937_64& rng);

struct UCBState {
  std::vector<std::uint64_t> pulls;
  std::vector<double> mean_reward;
  std::uint64_t total = 0;

  explicit UCBState(std::size_t n_items = 0) : pulls(n_items, 0), mean_reward(n_items, 0.0) {}
  void update(std::size_t item, double reward);
};

std::size_t ucb_act(const UCBState& ucb, const std::vector<bool>& mask);

enum class Baseline { dorl, mopo, mbpo, ips, egreedy, ucb };

Baseline parse_baseline(std::string_view name);
std::string_view to_string(Baseline b) noexcept;
/// Penalty weights a baseline trains with, derived from the DORL setting.
PenaltyConfig baseline_penalty(Baseline b, const PenaltyConfig& dorl);
bool baseline_uses_ips(Baseline b) noexcept;
bool baseline_has_policy(Baseline b) noexcept;

/// Decision-maker driven by the evaluation loop.
class Recommender {
 public:
  virtual ~Recommender() = default;
  virtual void begin_episode(std::size_t user) = 0;
  virtual std::size_t recommend(const EnvState& state, const std::vector<bool>& mask, std::mt19937_64& rng) = 0;
  virtual void observe(std::size_t /*item*/, double /*reward*/) {}
};

/// Serves a trained actor-critic. Its state tracker is fed the r̃ its own user
/// model assigns, exactly as during training.
class PolicyRecommender final : public Recommender {
 public:
  PolicyRecommender(const ActorCritic& ac, const GPMEnsemble& ensemble, const EntropyIndex& index,
                    PenaltyConfig penalty, ActMode mode);
  void begin_episode(std::size_t user) override;
  std::size_t recommend(const EnvState& state, const std::vector<bool>& mask, std::mt19937_64& rng) override;
  void observe(std::size_t item, double reward) override;

 private:
  const ActorCritic& ac_;
  const GPMEnsemble& ensemble_;
  const EntropyIndex& index_;
  PenaltyConfig penalty_;
  ActMode mode_;
  std::size_t user_ = 0;
  std::vector<TrackedStep> history_;
  std::vector<std::size_t> items_;
};

class EpsilonGreedyRecommender final : public Recommender {
 public:
  EpsilonGreedyRecommender(const GPMEnsemble& ensemble, double epsilon) : ensemble_(ensemble), epsilon_(epsilon) {}
  void begin_episode(std::size_t user) override { user_ = user; }
  std::size_t recommend(const EnvState& state, const std::vector<bool>& mask, std::mt19937_64& rng) override;

 private:
  const GPMEnsemble& ensemble_;
  double epsilon_;
  std::size_t user_ = 0;
};

/// Online UCB over items; statistics persist across episodes.
class UCBRecommender final : public Recommender {
 public:
  explicit UCBRecommender(std::size_t n_items) : state_(n_items) {}
  void begin_episode(std::size_t) override {}
  std::size_t recommend(const EnvState& state, const std::vector<bool>& mask, std::mt19937_64& rng) override;
  void observe(std::size_t item, double reward) override { state_.update(item, reward); }
  [[nodiscard]] const UCBState& state() const noexcept { return state_; }

 private:
  UCBState state_;
};

void save_policy(const std::filesystem::path& path, const ActorCritic& ac, const std::string& config_hash = "",
                 std::uint64_t seed = 0, std::string_view baseline = "dorl");
ActorCritic load_policy(const std::filesystem::path& path);

}  // namespace dorl
