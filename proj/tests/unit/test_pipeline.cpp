#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dorl/error.hpp"
#include "dorl/pipeline.hpp"

namespace dorl {
namespace {

namespace fs = std::filesystem;

const char* kTiny = R"({
  "world": {"n_users": 6, "n_items": 24, "n_categories": 4, "latent_dim": 3, "noise_scale": 0.05,
            "quit_window": 4, "quit_tolerance": 0, "max_rounds": 10},
  "behavior": {"kind": "popularity_softmax", "temperature": 0.5, "popularity_center": 0,
               "popularity_width": 6, "events_per_user": 20},
  "user_model": {"dim": 4, "ensemble_size": 2, "learning_rate": 0.01, "epochs": 3, "batch_size": 16},
  "penalty": {"lambda1": 0.1, "lambda2": 1.0, "orders": [1, 2]},
  "policy": {"window": 3, "emb_dim": 4, "rollout_len": 10, "episodes_per_epoch": 4, "epochs": 2},
  "eval": {"n_episodes": 5},
  "sweep": {"lambda2": [0, 1]},
  "seed": 11
})";

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string message_of(const std::string& json) {
  try {
    parse_config(json);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("dorl_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  [[nodiscard]] const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ExperimentConfig tiny(const fs::path& dir) {
  auto cfg = parse_config(kTiny);
  cfg.out_dir = dir.string();
  return cfg;
}

TEST(Config, UnknownKeyNamesPath) {
  EXPECT_NE(message_of(R"({"world": {"n_users": 3, "bogus": 1}})").find("world.bogus"), std::string::npos);
  EXPECT_NE(message_of(R"({"extra": 1})").find("extra"), std::string::npos);
}

TEST(Config, TypeErrorNamesKey) {
  const auto msg = message_of(R"({"penalty": {"lambda1": "big"}})");
  EXPECT_NE(msg.find("penalty.lambda1"), std::string::npos);
  EXPECT_NE(message_of(R"({"world": {"n_users": -2}})").find("world.n_users"), std::string::npos);
  EXPECT_THROW(parse_config("{not json"), ParseError);
}

TEST(Config, Defaults) {
  const auto cfg = parse_config("{}");
  EXPECT_EQ(cfg.eval.n_episodes, 100u);
  EXPECT_EQ(cfg.threads, 1u);
}

TEST(Config, HashIsStableAndSensitive) {
  const auto a = parse_config(kTiny);
  const auto b = parse_config(config_json(a));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  auto c = a;
  c.penalty.lambda1 = 0.2;
  EXPECT_NE(config_hash(a), config_hash(c));
  auto d = a;
  d.out_dir = "elsewhere";
  d.threads = 4;
  EXPECT_EQ(config_hash(a), config_hash(d));
  EXPECT_EQ(stage_seed(a, Stage::world), 12u);
  EXPECT_EQ(stage_seed(a, Stage::theory), 17u);
}

TEST(Pipeline, MissingInputsNameTheStage) {
  TempDir dir("missing");
  std::ostringstream log;
  Pipeline p(tiny(dir.path()), log);
  try {
    p.gen_logs();
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("run gen-world first"), std::string::npos);
  }
  p.gen_world();
  p.gen_logs();
  p.train_user_model();
  p.build_entropy_index();
  try {
    p.evaluate(Baseline::dorl);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("run train-policy first"), std::string::npos);
  }
}

TEST(Pipeline, RunAllWritesArtifactsDeterministically) {
  TempDir a("run_a");
  TempDir b("run_b");
  std::ostringstream log;
  Pipeline pa(tiny(a.path()), log);
  Pipeline pb(tiny(b.path()), log);
  pa.run_all(Baseline::dorl);
  pb.run_all(Baseline::dorl);
  for (const char* name : {"world.json", "logs.csv", "user_model.json", "entropy_index.json", "policy_dorl.json",
                           "eval_dorl.json", "results_dorl.csv", "sweep.csv", "analysis.json"}) {
    ASSERT_TRUE(fs::exists(a.path() / name)) << name;
    EXPECT_EQ(read_file(a.path() / name), read_file(b.path() / name)) << name;
  }
  EXPECT_NE(read_file(a.path() / "eval_dorl.json").find(pa.hash()), std::string::npos);
  const auto sweep = read_file(a.path() / "sweep.csv");
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 3);
}

TEST(Pipeline, HeuristicBaselinesNeedNoPolicy) {
  TempDir dir("heur");
  std::ostringstream log;
  Pipeline p(tiny(dir.path()), log);
  p.gen_world();
  p.gen_logs();
  p.train_user_model();
  p.build_entropy_index();
  p.train_policy(Baseline::egreedy);
  const auto s = p.evaluate(Baseline::egreedy);
  EXPECT_EQ(s.n_episodes, 5u);
}

TEST(LemmaTable, RowsAgree) {
  const auto rows = lemma_table(20, 4, 3, 100);
  ASSERT_EQ(rows.size(), 20u);
  for (const auto& r : rows) {
    EXPECT_LT(r.diff, 1e-8);
    EXPECT_LE(r.n_states, 4u);
    EXPECT_GE(r.n_actions, 1u);
  }
  EXPECT_EQ(rows[3].seed, 103u);
  EXPECT_DOUBLE_EQ(rows[1].gamma, 0.9);
}

}  // namespace
}  // namespace dorl
