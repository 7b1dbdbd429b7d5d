#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dorl/data.hpp"

namespace dorl {

inline constexpr double kMinLogVar = -10.0;
inline constexpr double kMaxLogVar = 4.0;

/// One Gaussian probabilistic reward model: a biased matrix factorization for
/// the mean plus a linear head over the concatenated embeddings for log σ².
struct GPMMember {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t dim = 0;
  std::vector<double> user_emb;   // [n_users x dim]
  std::vector<double> item_emb;   // [n_items x dim]
  std::vector<double> user_bias;  // [n_users]
  std::vector<double> item_bias;  // [n_items]
  double global_bias = 0.0;
  std::vector<double> var_weight;  // [2 * dim], user half first
  double var_bias = 0.0;

  static GPMMember zeros(std::size_t n_users, std::size_t n_items, std::size_t dim);

  [[nodiscard]] std::span<const double> user(std::size_t u) const { return {user_emb.data() + u * dim, dim}; }
  [[nodiscard]] std::span<const double> item(std::size_t i) const { return {item_emb.data() + i * dim, dim}; }
  [[nodiscard]] std::span<double> user(std::size_t u) { return {user_emb.data() + u * dim, dim}; }
  [[nodiscard]] std::span<double> item(std::size_t i) { return {item_emb.data() + i * dim, dim}; }

  /// Flat view order used by gradient checks: user_emb, item_emb, user_bias,
  /// item_bias, global_bias, var_weight, var_bias.
  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] double& parameter(std::size_t index);

  friend bool operator==(const GPMMember&, const GPMMember&) = default;
};

struct Prediction {
  double mean = 0.0;
  double log_var = 0.0;
};

Prediction predict(const GPMMember& member, std::size_t user, std::size_t item);

struct RatingSample {
  std::size_t user = 0;
  std::size_t item = 0;
  double target = 0.0;
};

/// Weighted Gaussian negative log-likelihood over the batch (divided by batch
/// size) plus `l2_reg` times the squared norm of every distinct embedding row
/// the batch touches. Empty `weights` means unit weights.
double gpm_loss(const GPMMember& member, std::span<const RatingSample> batch, std::span<const double> weights,
                double l2_reg);

/// Same loss; writes its analytic gradient into `grad` (shape of `member`,
/// overwritten).
double gpm_loss_and_gradient(const GPMMember& member, std::span<const RatingSample> batch,
                             std::span<const double> weights, double l2_reg, GPMMember& grad);

struct TrainConfig {
  std::size_t dim = 16;
  std::size_t ensemble_size = 5;
  double learning_rate = 0.01;
  double l2_reg = 1e-4;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  bool ips = false;
  std::pair<double, double> ips_clip{0.1, 10.0};
  double init_std = 0.1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct GPMEnsemble {
  std::vector<GPMMember> members;
  std::vector<double> final_epoch_loss;  // one per member
  TrainConfig config;

  [[nodiscard]] std::size_t n_users() const { return members.front().n_users; }
  [[nodiscard]] std::size_t n_items() const { return members.front().n_items; }
  void validate() const;
};

/// Trains K members with Adam-driven mini-batch SGD on gpm_loss. Member k is
/// seeded with cfg.seed + k; members are independent, so the result does not
/// depend on cfg.threads.
GPMEnsemble train_ensemble(const LogTable& logs, const TrainConfig& cfg);

/// Mean of the members' predicted means.
double ensemble_reward(const GPMEnsemble& ensemble, std::size_t user, std::size_t item);

/// Largest predicted variance across members.
double uncertainty(const GPMEnsemble& ensemble, std::size_t user, std::size_t item);

/// Inverse exposure weights per record: clamp(mean_count / count(item), clip).
std::vector<double> ips_weights(const LogTable& logs, std::pair<double, double> clip);

void save_ensemble(const std::filesystem::path& path, const GPMEnsemble& ensemble, const std::string& config_hash = "",
                   std::uint64_t seed = 0);
GPMEnsemble load_ensemble(const std::filesystem::path& path);

}  // namespace dorl
