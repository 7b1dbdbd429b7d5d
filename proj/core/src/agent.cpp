#include "dorl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "dorl/error.hpp"

namespace dorl {
namespace {

constexpr int kPolicyVersion = 1;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

std::size_t count_allowed(const std::vector<bool>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

std::size_t sample_index(std::span<const double> probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double cum = 0.0;
  std::size_t last = probs.size();
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] <= 0.0) continue;
    cum += probs[j];
    last = j;
    if (x < cum) return j;
  }
  return last;  // rounding left x beyond the final cumulative sum
}

struct ParamBlock {
  std::span<double> values;
  bool critic;
};

std::vector<ParamBlock> blocks(ActorCritic& ac) {
  return {{ac.item_embeddings.data, false},
          {ac.actor_weight.data, false},
          {ac.actor_bias, false},
          {ac.critic_weight, true},
          {std::span<double>(&ac.critic_bias, 1), true}};
}

class Adam {
 public:
  explicit Adam(const ActorCritic& shape) : m_(zero_like(shape)), v_(zero_like(shape)) {}

  void step(ActorCritic& params, ActorCritic& grad, double lr_actor, double lr_critic) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto p = blocks(params);
    auto g = blocks(grad);
    auto m = blocks(m_);
    auto v = blocks(v_);
    for (std::size_t b = 0; b < p.size(); ++b) {
      const double lr = p[b].critic ? lr_critic : lr_actor;
      for (std::size_t k = 0; k < p[b].values.size(); ++k) {
        double& gk = g[b].values[k];
        double& mk = m[b].values[k];
        double& vk = v[b].values[k];
        mk = kBeta1 * mk + (1.0 - kBeta1) * gk;
        vk = kBeta2 * vk + (1.0 - kBeta2) * gk * gk;
        p[b].values[k] -= lr * (mk / c1) / (std::sqrt(vk / c2) + kEps);
        gk = 0.0;
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  ActorCritic m_;
  ActorCritic v_;
  std::uint64_t t_ = 0;
};

nlohmann::json matrix_json(const Matrix& m) { return {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}}; }

Matrix matrix_from(const nlohmann::json& j) {
  Matrix m{j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(), j.at("data").get<std::vector<double>>()};
  if (m.data.size() != m.rows * m.cols) throw ValidationError("policy matrix has inconsistent size");
  return m;
}

}  // namespace

void RewardNormalizer::observe(double r) {
  if (!seen_) {
    lo_ = hi_ = r;
    seen_ = true;
    return;
  }
  lo_ = std::min(lo_, r);
  hi_ = std::max(hi_, r);
}

double RewardNormalizer::apply(double r) const {
  if (!seen_ || hi_ - lo_ < 1e-12) return 1.0;
  return std::clamp((r - lo_) / (hi_ - lo_), eps_, 1.0);
}

std::vector<double> encode_state(std::span<const TrackedStep> history, const StateTrackerConfig& tracker,
                                 const RewardNormalizer& norm, const Matrix& embeddings) {
  const std::size_t d = embeddings.cols;
  std::vector<double> state(d + 1, 0.0);
  const std::size_t n = std::min(tracker.window, history.size());
  if (n == 0) return state;
  for (const auto& step : history.last(n)) {
    const auto e = embeddings.row(step.item);
    for (std::size_t k = 0; k < d; ++k) state[k] += e[k];
    state[d] += norm.apply(step.reward);
  }
  for (auto& v : state) v /= static_cast<double>(n);
  return state;
}

void ActorCriticHyper::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("policy.gamma must lie in [0, 1)");
  if (!(lr_actor > 0.0) || !(lr_critic > 0.0)) throw ValidationError("policy learning rates must be > 0");
  if (entropy_coef < 0.0) throw ValidationError("policy.entropy_coef must be >= 0");
  if (rollout_len == 0) throw ValidationError("policy.rollout_len must be >= 1");
}

ActorCritic ActorCritic::create(std::size_t n_items, const StateTrackerConfig& tracker, const ActorCriticHyper& hyper) {
  if (tracker.window == 0) throw ValidationError("state tracker window must be >= 1");
  if (tracker.emb_dim == 0) throw ValidationError("state tracker emb_dim must be >= 1");
  hyper.validate();
  ActorCritic ac;
  ac.tracker = tracker;
  ac.hyper = hyper;
  ac.normalizer = RewardNormalizer(tracker.eps);
  const std::size_t d = tracker.emb_dim;
  ac.item_embeddings = Matrix::zeros(n_items, d);
  std::mt19937_64 rng(hyper.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  for (auto& v : ac.item_embeddings.data) v = init(rng);
  ac.actor_weight = Matrix::zeros(n_items, d + 1);
  ac.actor_bias.assign(n_items, 0.0);
  ac.critic_weight.assign(d + 1, 0.0);
  return ac;
}

std::size_t ActorCritic::parameter_count() const {
  return item_embeddings.data.size() + actor_weight.data.size() + actor_bias.size() + critic_weight.size() + 1;
}

double& ActorCritic::parameter(std::size_t index) {
  for (auto& b : blocks(*this)) {
    if (index < b.values.size()) return b.values[index];
    index -= b.values.size();
  }
  throw ValidationError("parameter index out of range");
}

ActorCritic zero_like(const ActorCritic& ac) {
  ActorCritic z;
  z.tracker = ac.tracker;
  z.hyper = ac.hyper;
  z.item_embeddings = Matrix::zeros(ac.item_embeddings.rows, ac.item_embeddings.cols);
  z.actor_weight = Matrix::zeros(ac.actor_weight.rows, ac.actor_weight.cols);
  z.actor_bias.assign(ac.actor_bias.size(), 0.0);
  z.critic_weight.assign(ac.critic_weight.size(), 0.0);
  return z;
}

std::vector<double> actor_forward(const ActorCritic& ac, std::span<const double> state, const std::vector<bool>& mask) {
  const std::size_t n = ac.n_items();
  if (mask.size() != n) throw ValidationError("mask length does not match the item count");
  if (count_allowed(mask) == 0) throw ValidationError("every item is masked");
  std::vector<double> probs(n, 0.0);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (!mask[j]) continue;
    probs[j] = dot(ac.actor_weight.row(j), state) + ac.actor_bias[j];
    top = std::max(top, probs[j]);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!mask[j]) continue;
    probs[j] = std::exp(probs[j] - top);
    total += probs[j];
  }
  for (auto& p : probs) p /= total;
  return probs;
}

double critic_value(const ActorCritic& ac, std::span<const double> state) {
  return dot(ac.critic_weight, state) + ac.critic_bias;
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < values.size(); ++j) {
    if (values[j] > values[best]) best = j;
  }
  return best;
}

std::size_t act(const ActorCritic& ac, std::span<const double> state, const std::vector<bool>& mask, ActMode mode,
                std::mt19937_64& rng) {
  const auto probs = actor_forward(ac, state, mask);
  if (mode == ActMode::greedy) {
    std::size_t best = ac.n_items();
    for (std::size_t j = 0; j < probs.size(); ++j) {
      if (mask[j] && (best == ac.n_items() || probs[j] > probs[best])) best = j;
    }
    return best;
  }
  return sample_index(probs, rng);
}

std::vector<double> transition_state(const ActorCritic& ac, const Transition& tr) {
  const std::size_t d = ac.item_embeddings.cols;
  std::vector<double> s(d + 1, 0.0);
  const std::size_t n = tr.window_items.size();
  if (n == 0) return s;
  for (std::size_t w = 0; w < n; ++w) {
    const auto e = ac.item_embeddings.row(tr.window_items[w]);
    for (std::size_t k = 0; k < d; ++k) s[k] += e[k];
    s[d] += tr.window_rewards[w];
  }
  for (auto& v : s) v /= static_cast<double>(n);
  return s;
}

TransitionLoss transition_loss(const ActorCritic& ac, const Transition& tr) {
  const auto s = transition_state(ac, tr);
  const auto probs = actor_forward(ac, s, tr.mask);
  TransitionLoss loss;
  const double h = shannon_entropy(probs);
  loss.actor = -tr.advantage * std::log(probs[tr.action]) - ac.hyper.entropy_coef * h;
  const double err = tr.target - critic_value(ac, s);
  loss.critic = err * err;
  return loss;
}

TransitionLoss accumulate_transition_gradient(const ActorCritic& ac, const Transition& tr, ActorCritic& grad) {
  const std::size_t d = ac.item_embeddings.cols;
  const std::size_t n_items = ac.n_items();
  const auto s = transition_state(ac, tr);
  const auto probs = actor_forward(ac, s, tr.mask);
  const double h = shannon_entropy(probs);
  const double beta = ac.hyper.entropy_coef;
  const double value = critic_value(ac, s);

  TransitionLoss loss;
  loss.actor = -tr.advantage * std::log(probs[tr.action]) - beta * h;
  loss.critic = (tr.target - value) * (tr.target - value);

  std::vector<double> d_state(d + 1, 0.0);
  for (std::size_t j = 0; j < n_items; ++j) {
    if (!tr.mask[j]) continue;
    const double p = probs[j];
    // ∂/∂z_j of −A·log p_a and of −β·H.
    double g = -tr.advantage * ((j == tr.action ? 1.0 : 0.0) - p);
    if (p > 0.0) g += beta * p * (std::log(p) + h);
    if (g == 0.0) continue;
    auto gw = grad.actor_weight.row(j);
    const auto w = ac.actor_weight.row(j);
    for (std::size_t k = 0; k <= d; ++k) {
      gw[k] += g * s[k];
      d_state[k] += g * w[k];
    }
    grad.actor_bias[j] += g;
  }

  const double d_value = -2.0 * (tr.target - value);
  for (std::size_t k = 0; k <= d; ++k) {
    grad.critic_weight[k] += d_value * s[k];
    d_state[k] += d_value * ac.critic_weight[k];
  }
  grad.critic_bias += d_value;

  const std::size_t n = tr.window_items.size();
  for (std::size_t w = 0; w < n; ++w) {
    auto ge = grad.item_embeddings.row(tr.window_items[w]);
    for (std::size_t k = 0; k < d; ++k) ge[k] += d_state[k] / static_cast<double>(n);
  }
  return loss;
}

double simulated_reward(const GPMEnsemble& ensemble, const EntropyIndex& index, const PenaltyConfig& penalty,
                        std::size_t user, std::span<const std::size_t> recent_items, std::size_t item) {
  const double r_hat = ensemble_reward(ensemble, user, item);
  const double p_u = penalty.lambda1 > 0.0 ? uncertainty(ensemble, user, item) : 0.0;
  double p_e = 0.0;
  if (penalty.lambda2 > 0.0) {
    std::vector<std::size_t> window;
    const std::size_t keep = std::min(recent_items.size(), index.orders().empty() ? 0 : index.orders().back() - 1);
    window.assign(recent_items.end() - static_cast<std::ptrdiff_t>(keep), recent_items.end());
    window.push_back(item);
    p_e = entropy_penalty(index, window);
  }
  return modified_reward(r_hat, p_u, p_e, penalty);
}

ActorCritic train_policy(const GPMEnsemble& ensemble, const EntropyIndex& index, const PenaltyConfig& penalty,
                         std::size_t n_users, ActorCritic ac, PolicyTrainReport* report) {
  penalty.validate();
  ensemble.validate();
  ac.hyper.validate();
  const std::size_t n_items = ac.n_items();
  if (ensemble.n_items() != n_items || index.n_items() != n_items) {
    throw ValidationError("user model, entropy index and policy must share one item universe");
  }
  if (n_users == 0 || n_users > ensemble.n_users()) throw ValidationError("n_users does not match the user model");

  const auto& hp = ac.hyper;
  std::mt19937_64 rng(hp.seed);
  std::uniform_int_distribution<std::size_t> pick_user(0, n_users - 1);
  Adam adam(ac);
  ActorCritic grad = zero_like(ac);
  const std::size_t window = ac.tracker.window;

  std::vector<TrackedStep> history;
  std::vector<std::size_t> items;
  std::vector<bool> mask;
  Transition tr;

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    double reward_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t ep = 0; ep < hp.episodes_per_epoch; ++ep) {
      const std::size_t user = pick_user(rng);
      history.clear();
      items.clear();
      mask.assign(n_items, true);
      const std::size_t horizon = std::min(hp.rollout_len, n_items);
      for (std::size_t t = 0; t < horizon; ++t) {
        const auto state = encode_state(history, ac.tracker, ac.normalizer, ac.item_embeddings);
        const std::size_t n_win = std::min(window, history.size());
        tr.window_items.assign(items.end() - static_cast<std::ptrdiff_t>(n_win), items.end());
        tr.window_rewards.clear();
        for (auto it = history.end() - static_cast<std::ptrdiff_t>(n_win); it != history.end(); ++it) {
          tr.window_rewards.push_back(ac.normalizer.apply(it->reward));
        }

        const std::size_t a = act(ac, state, mask, ActMode::sample, rng);
        const double r = simulated_reward(ensemble, index, penalty, user, items, a);
        if (!std::isfinite(r)) throw DivergenceError("modified reward is not finite");
        ac.normalizer.observe(r);
        history.push_back({a, r});
        items.push_back(a);
        mask[a] = false;
        reward_sum += r;
        ++steps;

        const bool done = t + 1 == horizon;
        double target = r;
        if (!done) {
          const auto next = encode_state(history, ac.tracker, ac.normalizer, ac.item_embeddings);
          target += hp.gamma * critic_value(ac, next);
        }
        tr.action = a;
        tr.mask = mask;
        tr.mask[a] = true;
        tr.target = target;
        tr.advantage = target - critic_value(ac, state);
        const auto loss = accumulate_transition_gradient(ac, tr, grad);
        if (!std::isfinite(loss.actor) || !std::isfinite(loss.critic)) {
          throw DivergenceError("policy loss is not finite at epoch " + std::to_string(epoch) +
                                "; lower the policy learning rates");
        }
      }
      adam.step(ac, grad, hp.lr_actor, hp.lr_critic);
    }
    if (report) report->epoch_mean_reward.push_back(steps ? reward_sum / static_cast<double>(steps) : 0.0);
  }
  return ac;
}

std::size_t epsilon_greedy_act(const GPMEnsemble& ensemble, std::size_t user, const std::vector<bool>& mask,
                               double epsilon, std::mt19937_64& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0, 1]");
  std::vector<std::size_t> allowed;
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j]) allowed.push_back(j);
  }
  if (allowed.empty()) throw ValidationError("every item is masked");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
    return allowed[pick(rng)];
  }
  std::size_t best = allowed.front();
  double best_r = ensemble_reward(ensemble, user, best);
  for (std::size_t j = 1; j < allowed.size(); ++j) {
    const double r = ensemble_reward(ensemble, user, allowed[j]);
    if (r > best_r) {
      best_r = r;
      best = allowed[j];
    }
  }
  return best;
}

void UCBState::update(std::size_t item, double reward) {
  ++pulls[item];
  ++total;
  mean_reward[item] += (reward - mean_reward[item]) / static_cast<double>(pulls[item]);
}

std::size_t ucb_act(const UCBState& ucb, const std::vector<bool>& mask) {
  const std::size_t n = ucb.pulls.size();
  if (mask.size() != n) throw ValidationError("mask length does not match the item count");
  for (std::size_t j = 0; j < n; ++j) {
    if (mask[j] && ucb.pulls[j] == 0) return j;
  }
  const double log_t = std::log(static_cast<double>(std::max<std::uint64_t>(ucb.total, 1)));
  std::size_t best = n;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (!mask[j]) continue;
    const double score = ucb.mean_reward[j] + std::sqrt(2.0 * log_t / static_cast<double>(ucb.pulls[j]));
    if (score > best_score) {
      best_score = score;
      best = j;
    }
  }
  if (best == n) throw ValidationError("every item is masked");
  return best;
}

Baseline parse_baseline(std::string_view name) {
  if (name == "dorl") return Baseline::dorl;
  if (name == "mopo") return Baseline::mopo;
  if (name == "mbpo") return Baseline::mbpo;
  if (name == "ips") return Baseline::ips;
  if (name == "egreedy") return Baseline::egreedy;
  if (name == "ucb") return Baseline::ucb;
  throw ValidationError("unknown baseline '" + std::string(name) + "'");
}

std::string_view to_string(Baseline b) noexcept {
  switch (b) {
    case Baseline::dorl: return "dorl";
    case Baseline::mopo: return "mopo";
    case Baseline::mbpo: return "mbpo";
    case Baseline::ips: return "ips";
    case Baseline::egreedy: return "egreedy";
    case Baseline::ucb: return "ucb";
  }
  return "unknown";
}

PenaltyConfig baseline_penalty(Baseline b, const PenaltyConfig& dorl) {
  PenaltyConfig p = dorl;
  switch (b) {
    case Baseline::dorl: break;
    case Baseline::mopo: p.lambda2 = 0.0; break;
    default: p.lambda1 = p.lambda2 = 0.0; break;
  }
  return p;
}

bool baseline_uses_ips(Baseline b) noexcept { return b == Baseline::ips; }

bool baseline_has_policy(Baseline b) noexcept { return b != Baseline::egreedy && b != Baseline::ucb; }

PolicyRecommender::PolicyRecommender(const ActorCritic& ac, const GPMEnsemble& ensemble, const EntropyIndex& index,
                                     PenaltyConfig penalty, ActMode mode)
    : ac_(ac), ensemble_(ensemble), index_(index), penalty_(std::move(penalty)), mode_(mode) {}

void PolicyRecommender::begin_episode(std::size_t user) {
  user_ = user;
  history_.clear();
  items_.clear();
}

std::size_t PolicyRecommender::recommend(const EnvState&, const std::vector<bool>& mask, std::mt19937_64& rng) {
  const auto state = encode_state(history_, ac_.tracker, ac_.normalizer, ac_.item_embeddings);
  return act(ac_, state, mask, mode_, rng);
}

void PolicyRecommender::observe(std::size_t item, double) {
  const double r = simulated_reward(ensemble_, index_, penalty_, user_, items_, item);
  history_.push_back({item, r});
  items_.push_back(item);
}

std::size_t EpsilonGreedyRecommender::recommend(const EnvState&, const std::vector<bool>& mask, std::mt19937_64& rng) {
  return epsilon_greedy_act(ensemble_, user_, mask, epsilon_, rng);
}

std::size_t UCBRecommender::recommend(const EnvState&, const std::vector<bool>& mask, std::mt19937_64&) {
  return ucb_act(state_, mask);
}

void save_policy(const std::filesystem::path& path, const ActorCritic& ac, const std::string& config_hash,
                 std::uint64_t seed, std::string_view baseline) {
  const auto& h = ac.hyper;
  nlohmann::json j = {
      {"version", kPolicyVersion},
      {"config_hash", config_hash},
      {"seed", seed},
      {"baseline", baseline},
      {"tracker", {{"window", ac.tracker.window}, {"emb_dim", ac.tracker.emb_dim}, {"eps", ac.tracker.eps}}},
      {"hyper",
       {{"lr_actor", h.lr_actor},
        {"lr_critic", h.lr_critic},
        {"gamma", h.gamma},
        {"entropy_coef", h.entropy_coef},
        {"rollout_len", h.rollout_len},
        {"episodes_per_epoch", h.episodes_per_epoch},
        {"epochs", h.epochs},
        {"seed", h.seed}}},
      {"item_embeddings", matrix_json(ac.item_embeddings)},
      {"actor_weight", matrix_json(ac.actor_weight)},
      {"actor_bias", ac.actor_bias},
      {"critic_weight", ac.critic_weight},
      {"critic_bias", ac.critic_bias},
      {"normalizer",
       {{"lo", ac.normalizer.lo()}, {"hi", ac.normalizer.hi()}, {"seen", ac.normalizer.seen()}}},
  };
  std::ofstream out(path);
  if (!out) throw Error("cannot write policy checkpoint " + path.string());
  out << j.dump() << '\n';
}

ActorCritic load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open policy checkpoint " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    if (j.at("version").get<int>() != kPolicyVersion) throw ValidationError("unsupported policy checkpoint version");
    ActorCritic ac;
    const auto& t = j.at("tracker");
    ac.tracker = {t.at("window"), t.at("emb_dim"), t.at("eps")};
    const auto& h = j.at("hyper");
    ac.hyper.lr_actor = h.at("lr_actor");
    ac.hyper.lr_critic = h.at("lr_critic");
    ac.hyper.gamma = h.at("gamma");
    ac.hyper.entropy_coef = h.at("entropy_coef");
    ac.hyper.rollout_len = h.at("rollout_len");
    ac.hyper.episodes_per_epoch = h.at("episodes_per_epoch");
    ac.hyper.epochs = h.at("epochs");
    ac.hyper.seed = h.at("seed");
    ac.item_embeddings = matrix_from(j.at("item_embeddings"));
    ac.actor_weight = matrix_from(j.at("actor_weight"));
    ac.actor_bias = j.at("actor_bias").get<std::vector<double>>();
    ac.critic_weight = j.at("critic_weight").get<std::vector<double>>();
    ac.critic_bias = j.at("critic_bias");
    const auto& nj = j.at("normalizer");
    ac.normalizer = nj.at("seen").get<bool>()
                        ? RewardNormalizer(nj.at("lo").get<double>(), nj.at("hi").get<double>(), ac.tracker.eps)
                        : RewardNormalizer(ac.tracker.eps);
    const std::size_t d = ac.item_embeddings.cols;
    if (ac.actor_weight.rows != ac.item_embeddings.rows || ac.actor_weight.cols != d + 1 ||
        ac.actor_bias.size() != ac.item_embeddings.rows || ac.critic_weight.size() != d + 1) {
      throw ValidationError("policy checkpoint has inconsistent dimensions");
    }
    return ac;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("policy checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace dorl
