#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "dorl/error.hpp"
#include "dorl/user_model.hpp"
#include "support/oracles.hpp"

namespace dorl {
namespace {

TEST(Predict, ZeroParameters) {
  const auto m = GPMMember::zeros(2, 3, 2);
  const auto p = predict(m, 1, 2);
  EXPECT_DOUBLE_EQ(p.mean, 0.0);
  EXPECT_DOUBLE_EQ(p.log_var, 0.0);
}

TEST(Predict, DotProductAndClamp) {
  auto m = GPMMember::zeros(1, 1, 2);
  m.user_emb = {1, 0};
  m.item_emb = {1, 0};
  EXPECT_DOUBLE_EQ(predict(m, 0, 0).mean, 1.0);
  m.var_weight = {1e6, 0, 0, 0};
  EXPECT_DOUBLE_EQ(predict(m, 0, 0).log_var, kMaxLogVar);
  m.var_weight = {-1e6, 0, 0, 0};
  EXPECT_DOUBLE_EQ(predict(m, 0, 0).log_var, kMinLogVar);
  EXPECT_THROW(predict(m, 1, 0), Error);
  EXPECT_THROW(predict(m, 0, 1), Error);
}

TEST(GpmLoss, HandValues) {
  auto m = GPMMember::zeros(1, 1, 1);
  const std::vector<RatingSample> at_mean{{0, 0, 0.0}};
  const std::vector<RatingSample> off_by_one{{0, 0, 1.0}};
  EXPECT_DOUBLE_EQ(gpm_loss(m, at_mean, {}, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(gpm_loss(m, off_by_one, {}, 0.0), 0.5);
  m.var_bias = 1.0;  // σ² = e
  EXPECT_DOUBLE_EQ(gpm_loss(m, at_mean, {}, 0.0), 0.5);
}

TEST(GpmLoss, WeightsScaleSamples) {
  auto m = GPMMember::zeros(1, 2, 1);
  const std::vector<RatingSample> batch{{0, 0, 1.0}, {0, 1, 2.0}};
  const std::vector<double> w{2.0, 0.5};
  // (2·0.5 + 0.5·2) / 2
  EXPECT_DOUBLE_EQ(gpm_loss(m, batch, w, 0.0), 1.0);
}

TEST(GpmLoss, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = oracle::random_member(3, 4, 3, rng);
    std::vector<RatingSample> batch;
    std::vector<double> weights;
    std::uniform_int_distribution<std::size_t> u(0, 2), i(0, 3);
    std::uniform_real_distribution<double> y(0.0, 1.0), w(0.2, 3.0);
    for (int k = 0; k < 6; ++k) {
      batch.push_back({u(rng), i(rng), y(rng)});
      weights.push_back(w(rng));
    }
    const double l2 = 0.01;
    GPMMember grad;
    const double loss = gpm_loss_and_gradient(m, batch, weights, l2, grad);
    EXPECT_NEAR(loss, gpm_loss(m, batch, weights, l2), 1e-12);
    const auto numeric = oracle::central_differences<GPMMember>(
        m, m.parameter_count(), [&](const GPMMember& x) { return gpm_loss(x, batch, weights, l2); });
    EXPECT_LT(oracle::relative_error(oracle::flatten(grad), numeric), 1e-4) << "trial " << trial;
  }
}

TEST(GpmLoss, ClampedLogVarHasZeroVarianceGradient) {
  auto m = GPMMember::zeros(1, 1, 1);
  m.var_bias = 10.0;
  const std::vector<RatingSample> batch{{0, 0, 0.3}};
  GPMMember grad;
  gpm_loss_and_gradient(m, batch, {}, 0.0, grad);
  EXPECT_EQ(grad.var_bias, 0.0);
  EXPECT_EQ(grad.var_weight, (std::vector<double>{0.0, 0.0}));
}

LogTable constant_log(double value, std::size_t users, std::size_t items, std::size_t per_user) {
  std::vector<InteractionRecord> recs;
  for (std::size_t u = 0; u < users; ++u) {
    for (std::size_t t = 0; t < per_user; ++t) recs.push_back({u, t % items, static_cast<std::int64_t>(t), value, 0});
  }
  return make_log_table(recs);
}

TEST(TrainEnsemble, ConstantRewardIsLearned) {
  TrainConfig cfg;
  cfg.ensemble_size = 1;
  cfg.dim = 4;
  cfg.epochs = 30;
  const auto ens = train_ensemble(constant_log(0.7, 5, 6, 30), cfg);
  for (std::size_t u = 0; u < 5; ++u) {
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(ensemble_reward(ens, u, i), 0.7, 0.05);
  }
}

TEST(TrainEnsemble, DeterministicAndThreadIndependent) {
  TrainConfig cfg;
  cfg.ensemble_size = 3;
  cfg.epochs = 3;
  cfg.seed = 9;
  const auto logs = constant_log(0.4, 4, 5, 12);
  const auto a = train_ensemble(logs, cfg);
  const auto b = train_ensemble(logs, cfg);
  cfg.threads = 3;
  const auto c = train_ensemble(logs, cfg);
  EXPECT_EQ(a.members, b.members);
  EXPECT_EQ(a.members, c.members);
  EXPECT_EQ(a.final_epoch_loss, c.final_epoch_loss);
}

TEST(TrainEnsemble, MembersDiffer) {
  TrainConfig cfg;
  cfg.ensemble_size = 5;
  cfg.epochs = 2;
  const auto ens = train_ensemble(constant_log(0.4, 4, 5, 12), cfg);
  ASSERT_EQ(ens.members.size(), 5u);
  for (std::size_t a = 0; a < 5; ++a) {
    for (std::size_t b = a + 1; b < 5; ++b) EXPECT_NE(ens.members[a], ens.members[b]);
  }
}

TEST(TrainEnsemble, SeparatesGoodAndBadItems) {
  std::vector<InteractionRecord> recs;
  for (std::size_t u = 0; u < 6; ++u) {
    for (std::size_t t = 0; t < 20; ++t) recs.push_back({u, t % 2, static_cast<std::int64_t>(t), t % 2 == 0 ? 1.0 : 0.0, 0});
  }
  TrainConfig cfg;
  cfg.ensemble_size = 2;
  cfg.epochs = 40;
  const auto ens = train_ensemble(make_log_table(recs), cfg);
  for (std::size_t u = 0; u < 6; ++u) EXPECT_GT(ensemble_reward(ens, u, 0), ensemble_reward(ens, u, 1));
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < idx.size(); ++k) r[idx[k]] = static_cast<double>(k);
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d2 += (ra[k] - rb[k]) * (ra[k] - rb[k]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

TEST(TrainEnsemble, HeteroscedasticNoiseRaisesPredictedVariance) {
  const std::size_t n_items = 10, n_users = 20;
  std::vector<double> noise(n_items);
  for (std::size_t i = 0; i < n_items; ++i) noise[i] = 0.02 + 0.04 * static_cast<double>(i);
  std::mt19937_64 rng(5);
  std::bernoulli_distribution sign(0.5);
  std::vector<InteractionRecord> recs;
  for (std::size_t u = 0; u < n_users; ++u) {
    for (std::size_t t = 0; t < 100; ++t) {
      const std::size_t i = t % n_items;
      const double y = 0.5 + (sign(rng) ? noise[i] : -noise[i]);
      recs.push_back({u, i, static_cast<std::int64_t>(t), y, 0});
    }
  }
  TrainConfig cfg;
  cfg.dim = 4;
  cfg.ensemble_size = 3;
  cfg.epochs = 30;
  const auto ens = train_ensemble(make_log_table(recs), cfg);
  std::vector<double> predicted(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    for (std::size_t u = 0; u < n_users; ++u) predicted[i] += uncertainty(ens, u, i) / n_users;
  }
  EXPECT_GT(spearman(noise, predicted), 0.0);
}

TEST(TrainEnsemble, DivergenceAdvisesSmallerLearningRate) {
  TrainConfig cfg;
  cfg.learning_rate = 1e300;
  cfg.ensemble_size = 1;
  cfg.epochs = 5;
  try {
    train_ensemble(constant_log(0.5, 3, 3, 10), cfg);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

TEST(TrainEnsemble, RejectsEmptyLogsAndBadConfig) {
  EXPECT_THROW(train_ensemble(LogTable{}, TrainConfig{}), ValidationError);
  TrainConfig cfg;
  cfg.ips_clip = {2.0, 1.0};
  EXPECT_THROW(train_ensemble(constant_log(0.5, 2, 2, 2), cfg), ValidationError);
}

GPMEnsemble bias_ensemble(const std::vector<double>& means, const std::vector<double>& variances) {
  GPMEnsemble ens;
  for (std::size_t k = 0; k < means.size(); ++k) {
    auto m = GPMMember::zeros(1, 1, 1);
    m.global_bias = means[k];
    m.var_bias = std::log(variances[k]);
    ens.members.push_back(m);
  }
  return ens;
}

TEST(Ensemble, RewardIsMeanOfMeans) {
  EXPECT_NEAR(ensemble_reward(bias_ensemble({0.2, 0.4}, {1, 1}), 0, 0), 0.3, 1e-15);
  EXPECT_DOUBLE_EQ(ensemble_reward(bias_ensemble({0.35}, {1}), 0, 0), 0.35);
  EXPECT_DOUBLE_EQ(ensemble_reward(bias_ensemble({0, 0, 0}, {1, 1, 1}), 0, 0), 0.0);
}

TEST(Ensemble, UncertaintyIsMaxVariance) {
  EXPECT_NEAR(uncertainty(bias_ensemble({0, 0, 0}, {0.1, 0.3, 0.2}), 0, 0), 0.3, 1e-12);
  EXPECT_NEAR(uncertainty(bias_ensemble({0}, {0.7}), 0, 0), 0.7, 1e-12);
  EXPECT_NEAR(uncertainty(bias_ensemble({0, 0}, {0.4, 0.4}), 0, 0), 0.4, 1e-12);
}

TEST(Ensemble, PermutationInvarianceAndMonotoneUncertainty) {
  std::mt19937_64 rng(8);
  GPMEnsemble ens;
  for (int k = 0; k < 4; ++k) ens.members.push_back(oracle::random_member(3, 4, 2, rng));
  GPMEnsemble rev = ens;
  std::reverse(rev.members.begin(), rev.members.end());
  GPMEnsemble grown = ens;
  grown.members.push_back(oracle::random_member(3, 4, 2, rng));
  for (std::size_t u = 0; u < 3; ++u) {
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(ensemble_reward(ens, u, i), ensemble_reward(rev, u, i), 1e-12);
      EXPECT_DOUBLE_EQ(uncertainty(ens, u, i), uncertainty(rev, u, i));
      EXPECT_GE(uncertainty(grown, u, i), uncertainty(ens, u, i));
    }
  }
}

TEST(IpsWeights, Examples) {
  // Uniform exposure.
  auto uniform = constant_log(0.5, 2, 4, 8);
  for (double w : ips_weights(uniform, {0.1, 10.0})) EXPECT_DOUBLE_EQ(w, 1.0);
  // Item 0 seen once, item 1 seen 19 times: mean count 10.
  std::vector<InteractionRecord> recs{{0, 0, 0, 0.5, 0}};
  for (int t = 1; t < 20; ++t) recs.push_back({0, 1, t, 0.5, 0});
  const auto logs = make_log_table(recs);
  EXPECT_DOUBLE_EQ(ips_weights(logs, {0.1, 100.0})[0], 10.0);
  EXPECT_DOUBLE_EQ(ips_weights(logs, {0.1, 4.0})[0], 4.0);
  for (double w : ips_weights(logs, {1.0, 1.0})) EXPECT_DOUBLE_EQ(w, 1.0);
  EXPECT_THROW(ips_weights(LogTable{}, {0.1, 10.0}), ValidationError);
}

TEST(Ensemble, SaveLoadRoundTrip) {
  TrainConfig cfg;
  cfg.ensemble_size = 2;
  cfg.epochs = 1;
  const auto ens = train_ensemble(constant_log(0.5, 3, 4, 6), cfg);
  const auto dir = std::filesystem::temp_directory_path() / "dorl_test_um";
  std::filesystem::create_directories(dir);
  save_ensemble(dir / "m.json", ens, "h", 1);
  const auto back = load_ensemble(dir / "m.json");
  EXPECT_EQ(back.members, ens.members);
  EXPECT_EQ(back.config, ens.config);
}

}  // namespace
}  // namespace dorl
