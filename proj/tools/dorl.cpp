#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dorl/error.hpp"
#include "dorl/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string baseline = "dorl";
  std::optional<std::string> logs;
};

void add_common(CLI::App* cmd, Common& c, bool baseline) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required();
  cmd->add_option("--out", c.out, "artifact directory (overrides out_dir)");
  cmd->add_option("--seed", c.seed, "global seed (overrides seed)");
  cmd->add_option("--threads", c.threads, "worker threads for ensemble training");
  if (baseline) {
    cmd->add_option("--baseline", c.baseline, "dorl, mopo, mbpo, ips, egreedy or ucb")
        ->check(CLI::IsMember({"dorl", "mopo", "mbpo", "ips", "egreedy", "ucb"}));
  }
}

dorl::ExperimentConfig resolve(const Common& c) {
  auto cfg = dorl::load_config(c.config);
  if (c.out) cfg.out_dir = *c.out;
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  return cfg;
}

int verify_lemma(const dorl::ExperimentConfig& cfg) {
  const auto rows = dorl::lemma_table(cfg.theory.instances, cfg.theory.max_states, cfg.theory.max_actions,
                                      dorl::stage_seed(cfg, dorl::Stage::theory));
  std::printf("%-20s %3s %3s %5s %14s %14s %10s\n", "seed", "S", "A", "gamma", "lhs", "rhs", "diff");
  double worst = 0.0;
  for (const auto& r : rows) {
    std::printf("%-20llu %3zu %3zu %5.2f %14.10f %14.10f %10.3e\n", static_cast<unsigned long long>(r.seed),
                r.n_states, r.n_actions, r.gamma, r.lhs, r.rhs, r.diff);
    worst = std::max(worst, r.diff);
  }
  std::printf("max diff %.3e over %zu instances\n", worst, rows.size());
  return worst > 1e-6 ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline RL recommender pipeline with entropy and uncertainty penalties"};
  app.require_subcommand(1);
  Common c;

  const char* stages[][2] = {
      {"gen-world", "generate the synthetic ground-truth world"},
      {"gen-logs", "sample behavior-policy logs from the world"},
      {"train-user-model", "train the plain and IPS user-model ensembles"},
      {"build-entropy-index", "count k-order patterns in the logs"},
      {"train-policy", "train an actor-critic policy on the user model"},
      {"evaluate", "run the policy against the world and export metrics"},
      {"sweep", "train and evaluate over the configured penalty grid"},
      {"analyze-logs", "repeat-rate and retention statistics of a log"},
      {"verify-lemma", "numerically check the model-mismatch identity on random MDPs"},
  };
  for (const auto& [name, help] : stages) {
    const std::string n = name;
    auto* cmd = app.add_subcommand(n, help);
    add_common(cmd, c, n == "train-policy" || n == "evaluate" || n == "sweep");
    if (n == "analyze-logs") cmd->add_option("--logs", c.logs, "log CSV to analyze instead of the generated one");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string name = app.get_subcommands().front()->get_name();

  try {
    const auto cfg = resolve(c);
    if (name == "verify-lemma") return verify_lemma(cfg);

    dorl::Pipeline p(cfg, std::cerr);
    const auto b = dorl::parse_baseline(c.baseline);
    if (name == "gen-world") {
      p.gen_world();
    } else if (name == "gen-logs") {
      p.gen_logs();
    } else if (name == "train-user-model") {
      p.train_user_model();
    } else if (name == "build-entropy-index") {
      p.build_entropy_index();
    } else if (name == "train-policy") {
      p.train_policy(b);
    } else if (name == "evaluate") {
      p.evaluate(b);
    } else if (name == "sweep") {
      p.sweep(b);
    } else if (name == "analyze-logs") {
      p.analyze_logs(c.logs ? std::optional<std::filesystem::path>(*c.logs) : std::nullopt);
    }
  } catch (const dorl::ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
