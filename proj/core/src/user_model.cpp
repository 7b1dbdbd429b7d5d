#include "dorl/user_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <thread>

#include <json.hpp>

#include "dorl/error.hpp"

namespace dorl {
namespace {

constexpr int kCheckpointVersion = 1;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double sq_norm(std::span<const double> a) { return dot(a, a); }

struct Touched {
  std::vector<std::size_t> users;
  std::vector<std::size_t> items;
};

Touched touched_rows(std::span<const RatingSample> batch) {
  Touched t;
  for (const auto& s : batch) {
    t.users.push_back(s.user);
    t.items.push_back(s.item);
  }
  for (auto* v : {&t.users, &t.items}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  return t;
}

void check_ids(const GPMMember& m, std::size_t user, std::size_t item) {
  if (user >= m.n_users || item >= m.n_items) {
    throw ValidationError("id out of range: user " + std::to_string(user) + ", item " + std::to_string(item));
  }
}

// Adds the batch gradient into `grad`. Rows of `grad` not in `touched` are
// left alone, so callers that track touched rows never need a full clear.
double accumulate(const GPMMember& m, std::span<const RatingSample> batch, std::span<const double> weights,
                  double l2_reg, const Touched& touched, GPMMember& grad) {
  if (!weights.empty() && weights.size() != batch.size()) {
    throw ValidationError("sample weights must match the batch length");
  }
  const std::size_t d = m.dim;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& s = batch[j];
    check_ids(m, s.user, s.item);
    const double w = weights.empty() ? 1.0 : weights[j];
    const auto x = m.user(s.user);
    const auto y = m.item(s.item);
    const double mu = m.global_bias + m.user_bias[s.user] + m.item_bias[s.item] + dot(x, y);
    const double raw = dot(x, std::span(m.var_weight).first(d)) + dot(y, std::span(m.var_weight).last(d)) + m.var_bias;
    const bool clamped = raw < kMinLogVar || raw > kMaxLogVar;
    const double log_var = std::clamp(raw, kMinLogVar, kMaxLogVar);
    const double inv_var = std::exp(-log_var);
    const double resid = s.target - mu;
    loss += w * (0.5 * resid * resid * inv_var + 0.5 * log_var) * inv_n;

    const double d_mu = -w * resid * inv_var * inv_n;
    const double d_s = clamped ? 0.0 : w * (0.5 - 0.5 * resid * resid * inv_var) * inv_n;
    grad.global_bias += d_mu;
    grad.user_bias[s.user] += d_mu;
    grad.item_bias[s.item] += d_mu;
    auto gx = grad.user(s.user);
    auto gy = grad.item(s.item);
    for (std::size_t k = 0; k < d; ++k) {
      gx[k] += d_mu * y[k] + d_s * m.var_weight[k];
      gy[k] += d_mu * x[k] + d_s * m.var_weight[d + k];
      grad.var_weight[k] += d_s * x[k];
      grad.var_weight[d + k] += d_s * y[k];
    }
    grad.var_bias += d_s;
  }
  if (l2_reg > 0.0) {
    for (auto u : touched.users) {
      loss += l2_reg * sq_norm(m.user(u));
      auto g = grad.user(u);
      const auto x = m.user(u);
      for (std::size_t k = 0; k < d; ++k) g[k] += 2.0 * l2_reg * x[k];
    }
    for (auto i : touched.items) {
      loss += l2_reg * sq_norm(m.item(i));
      auto g = grad.item(i);
      const auto y = m.item(i);
      for (std::size_t k = 0; k < d; ++k) g[k] += 2.0 * l2_reg * y[k];
    }
  }
  return loss;
}

struct AdamMoments {
  GPMMember m;
  GPMMember v;
};

class LazyAdam {
 public:
  LazyAdam(const GPMMember& shape, double lr) : lr_(lr) {
    moments_.m = GPMMember::zeros(shape.n_users, shape.n_items, shape.dim);
    moments_.v = moments_.m;
  }

  void apply(GPMMember& p, GPMMember& g, const Touched& touched) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto upd = [&](double& param, double& grad, double& m, double& v) {
      m = kBeta1 * m + (1.0 - kBeta1) * grad;
      v = kBeta2 * v + (1.0 - kBeta2) * grad * grad;
      param -= lr_ * (m / c1) / (std::sqrt(v / c2) + kEps);
      grad = 0.0;
    };
    const std::size_t d = p.dim;
    for (auto u : touched.users) {
      for (std::size_t k = 0; k < d; ++k) {
        const std::size_t idx = u * d + k;
        upd(p.user_emb[idx], g.user_emb[idx], moments_.m.user_emb[idx], moments_.v.user_emb[idx]);
      }
      upd(p.user_bias[u], g.user_bias[u], moments_.m.user_bias[u], moments_.v.user_bias[u]);
    }
    for (auto i : touched.items) {
      for (std::size_t k = 0; k < d; ++k) {
        const std::size_t idx = i * d + k;
        upd(p.item_emb[idx], g.item_emb[idx], moments_.m.item_emb[idx], moments_.v.item_emb[idx]);
      }
      upd(p.item_bias[i], g.item_bias[i], moments_.m.item_bias[i], moments_.v.item_bias[i]);
    }
    upd(p.global_bias, g.global_bias, moments_.m.global_bias, moments_.v.global_bias);
    for (std::size_t k = 0; k < p.var_weight.size(); ++k) {
      upd(p.var_weight[k], g.var_weight[k], moments_.m.var_weight[k], moments_.v.var_weight[k]);
    }
    upd(p.var_bias, g.var_bias, moments_.m.var_bias, moments_.v.var_bias);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  std::uint64_t t_ = 0;
  AdamMoments moments_;
};

GPMMember train_member(const std::vector<RatingSample>& samples, const std::vector<double>& weights,
                       std::size_t n_users, std::size_t n_items, const TrainConfig& cfg, std::size_t k,
                       double& final_loss) {
  std::mt19937_64 rng(cfg.seed + k);
  GPMMember member = GPMMember::zeros(n_users, n_items, cfg.dim);
  std::normal_distribution<double> init(0.0, cfg.init_std);
  for (auto& v : member.user_emb) v = init(rng);
  for (auto& v : member.item_emb) v = init(rng);

  GPMMember grad = GPMMember::zeros(n_users, n_items, cfg.dim);
  LazyAdam adam(member, cfg.learning_rate);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<RatingSample> batch;
  std::vector<double> batch_w;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      batch_w.clear();
      for (std::size_t j = start; j < end; ++j) {
        batch.push_back(samples[order[j]]);
        if (!weights.empty()) batch_w.push_back(weights[order[j]]);
      }
      const Touched touched = touched_rows(batch);
      const double loss = accumulate(member, batch, batch_w, cfg.l2_reg, touched, grad);
      if (!std::isfinite(loss)) {
        throw DivergenceError("user-model training diverged (loss is not finite) in member " + std::to_string(k) +
                              ", epoch " + std::to_string(epoch) + "; use a smaller learning_rate");
      }
      epoch_loss += loss * static_cast<double>(end - start);
      adam.apply(member, grad, touched);
    }
    final_loss = epoch_loss / static_cast<double>(samples.size());
  }
  return member;
}

nlohmann::json member_to_json(const GPMMember& m) {
  return {{"user_emb", m.user_emb},       {"item_emb", m.item_emb},     {"user_bias", m.user_bias},
          {"item_bias", m.item_bias},     {"global_bias", m.global_bias}, {"var_weight", m.var_weight},
          {"var_bias", m.var_bias}};
}

}  // namespace

GPMMember GPMMember::zeros(std::size_t n_users, std::size_t n_items, std::size_t dim) {
  GPMMember m;
  m.n_users = n_users;
  m.n_items = n_items;
  m.dim = dim;
  m.user_emb.assign(n_users * dim, 0.0);
  m.item_emb.assign(n_items * dim, 0.0);
  m.user_bias.assign(n_users, 0.0);
  m.item_bias.assign(n_items, 0.0);
  m.var_weight.assign(2 * dim, 0.0);
  return m;
}

std::size_t GPMMember::parameter_count() const {
  return user_emb.size() + item_emb.size() + user_bias.size() + item_bias.size() + 1 + var_weight.size() + 1;
}

double& GPMMember::parameter(std::size_t index) {
  for (auto* v : {&user_emb, &item_emb, &user_bias, &item_bias}) {
    if (index < v->size()) return (*v)[index];
    index -= v->size();
  }
  if (index == 0) return global_bias;
  --index;
  if (index < var_weight.size()) return var_weight[index];
  index -= var_weight.size();
  if (index == 0) return var_bias;
  throw ValidationError("parameter index out of range");
}

Prediction predict(const GPMMember& m, std::size_t user, std::size_t item) {
  check_ids(m, user, item);
  const auto x = m.user(user);
  const auto y = m.item(item);
  Prediction p;
  p.mean = m.global_bias + m.user_bias[user] + m.item_bias[item] + dot(x, y);
  const double raw =
      dot(x, std::span(m.var_weight).first(m.dim)) + dot(y, std::span(m.var_weight).last(m.dim)) + m.var_bias;
  p.log_var = std::clamp(raw, kMinLogVar, kMaxLogVar);
  return p;
}

double gpm_loss(const GPMMember& member, std::span<const RatingSample> batch, std::span<const double> weights,
                double l2_reg) {
  GPMMember scratch = GPMMember::zeros(member.n_users, member.n_items, member.dim);
  return gpm_loss_and_gradient(member, batch, weights, l2_reg, scratch);
}

double gpm_loss_and_gradient(const GPMMember& member, std::span<const RatingSample> batch,
                             std::span<const double> weights, double l2_reg, GPMMember& grad) {
  if (batch.empty()) return 0.0;
  grad = GPMMember::zeros(member.n_users, member.n_items, member.dim);
  return accumulate(member, batch, weights, l2_reg, touched_rows(batch), grad);
}

void TrainConfig::validate() const {
  if (dim == 0) throw ValidationError("user_model.dim must be >= 1");
  if (ensemble_size == 0) throw ValidationError("user_model.ensemble_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("user_model.learning_rate must be > 0");
  if (l2_reg < 0.0) throw ValidationError("user_model.l2_reg must be >= 0");
  if (batch_size == 0) throw ValidationError("user_model.batch_size must be >= 1");
  if (!(ips_clip.first > 0.0 && ips_clip.first <= ips_clip.second)) {
    throw ValidationError("user_model.ips_clip must satisfy 0 < low <= high");
  }
  if (!(init_std >= 0.0)) throw ValidationError("user_model.init_std must be >= 0");
}

void GPMEnsemble::validate() const {
  if (members.empty()) throw ValidationError("ensemble has no members");
  const auto& f = members.front();
  for (const auto& m : members) {
    if (m.n_users != f.n_users || m.n_items != f.n_items || m.dim != f.dim) {
      throw ValidationError("ensemble members disagree on (n_users, n_items, dim)");
    }
    if (m.user_emb.size() != m.n_users * m.dim || m.item_emb.size() != m.n_items * m.dim ||
        m.user_bias.size() != m.n_users || m.item_bias.size() != m.n_items || m.var_weight.size() != 2 * m.dim) {
      throw ValidationError("ensemble member parameter arrays have inconsistent sizes");
    }
  }
}

GPMEnsemble train_ensemble(const LogTable& logs, const TrainConfig& cfg) {
  cfg.validate();
  if (logs.empty()) throw ValidationError("cannot train a user model on an empty log");

  std::vector<RatingSample> samples;
  samples.reserve(logs.records.size());
  for (const auto& r : logs.records) samples.push_back({r.user_id, r.item_id, r.reward});
  const std::vector<double> weights = cfg.ips ? ips_weights(logs, cfg.ips_clip) : std::vector<double>{};

  GPMEnsemble ens;
  ens.config = cfg;
  ens.members.resize(cfg.ensemble_size);
  ens.final_epoch_loss.assign(cfg.ensemble_size, 0.0);

  auto run = [&](std::size_t k) {
    ens.members[k] = train_member(samples, weights, logs.n_users, logs.n_items, cfg, k, ens.final_epoch_loss[k]);
  };
  const std::size_t n_threads = std::clamp<std::size_t>(cfg.threads, 1, cfg.ensemble_size);
  if (n_threads == 1) {
    for (std::size_t k = 0; k < cfg.ensemble_size; ++k) run(k);
  } else {
    std::vector<std::exception_ptr> errors(n_threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t k = t; k < cfg.ensemble_size; k += n_threads) run(k);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return ens;
}

double ensemble_reward(const GPMEnsemble& ensemble, std::size_t user, std::size_t item) {
  double sum = 0.0;
  for (const auto& m : ensemble.members) sum += predict(m, user, item).mean;
  return sum / static_cast<double>(ensemble.members.size());
}

double uncertainty(const GPMEnsemble& ensemble, std::size_t user, std::size_t item) {
  double best = 0.0;
  for (const auto& m : ensemble.members) best = std::max(best, std::exp(predict(m, user, item).log_var));
  return best;
}

std::vector<double> ips_weights(const LogTable& logs, std::pair<double, double> clip) {
  if (logs.empty()) throw ValidationError("ips_weights needs a non-empty log");
  std::map<std::size_t, std::size_t> counts;
  for (const auto& r : logs.records) ++counts[r.item_id];
  const double mean_count = static_cast<double>(logs.records.size()) / static_cast<double>(counts.size());
  std::vector<double> w;
  w.reserve(logs.records.size());
  for (const auto& r : logs.records) {
    w.push_back(std::clamp(mean_count / static_cast<double>(counts[r.item_id]), clip.first, clip.second));
  }
  return w;
}

void save_ensemble(const std::filesystem::path& path, const GPMEnsemble& ens, const std::string& config_hash,
                   std::uint64_t seed) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  const auto& c = ens.config;
  j["train_config"] = {{"dim", c.dim},
                       {"ensemble_size", c.ensemble_size},
                       {"learning_rate", c.learning_rate},
                       {"l2_reg", c.l2_reg},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"ips", c.ips},
                       {"ips_clip", {c.ips_clip.first, c.ips_clip.second}},
                       {"init_std", c.init_std},
                       {"seed", c.seed}};
  j["n_users"] = ens.n_users();
  j["n_items"] = ens.n_items();
  j["dim"] = ens.members.front().dim;
  j["final_epoch_loss"] = ens.final_epoch_loss;
  auto members = nlohmann::json::array();
  for (const auto& m : ens.members) members.push_back(member_to_json(m));
  j["members"] = std::move(members);
  std::ofstream out(path);
  if (!out) throw Error("cannot write user-model checkpoint " + path.string());
  out << j.dump() << '\n';
}

GPMEnsemble load_ensemble(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open user-model checkpoint " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    if (j.at("version").get<int>() != kCheckpointVersion) throw ValidationError("unsupported checkpoint version");
    GPMEnsemble ens;
    const auto& c = j.at("train_config");
    ens.config.dim = c.at("dim");
    ens.config.ensemble_size = c.at("ensemble_size");
    ens.config.learning_rate = c.at("learning_rate");
    ens.config.l2_reg = c.at("l2_reg");
    ens.config.epochs = c.at("epochs");
    ens.config.batch_size = c.at("batch_size");
    ens.config.ips = c.at("ips");
    ens.config.ips_clip = {c.at("ips_clip").at(0).get<double>(), c.at("ips_clip").at(1).get<double>()};
    ens.config.init_std = c.at("init_std");
    ens.config.seed = c.at("seed");
    const auto n_users = j.at("n_users").get<std::size_t>();
    const auto n_items = j.at("n_items").get<std::size_t>();
    const auto dim = j.at("dim").get<std::size_t>();
    ens.final_epoch_loss = j.at("final_epoch_loss").get<std::vector<double>>();
    for (const auto& mj : j.at("members")) {
      GPMMember m;
      m.n_users = n_users;
      m.n_items = n_items;
      m.dim = dim;
      m.user_emb = mj.at("user_emb").get<std::vector<double>>();
      m.item_emb = mj.at("item_emb").get<std::vector<double>>();
      m.user_bias = mj.at("user_bias").get<std::vector<double>>();
      m.item_bias = mj.at("item_bias").get<std::vector<double>>();
      m.global_bias = mj.at("global_bias");
      m.var_weight = mj.at("var_weight").get<std::vector<double>>();
      m.var_bias = mj.at("var_bias");
      ens.members.push_back(std::move(m));
    }
    ens.validate();
    return ens;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("user-model checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace dorl
