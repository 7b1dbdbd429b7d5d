#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dorl/agent.hpp"
#include "dorl/data.hpp"
#include "dorl/eval.hpp"
#include "dorl/penalty.hpp"
#include "dorl/user_model.hpp"

namespace dorl {

struct EvalConfig {
  std::size_t n_episodes = 100;
  bool greedy = true;
  double epsilon = 0.1;   // ε-greedy baseline
  double coverage = 0.8;  // dominated-category coverage
};

struct SweepConfig {
  std::vector<double> lambda1;
  std::vector<double> lambda2;
  std::vector<std::size_t> quit_window;
  std::size_t repeats = 1;  // policy/eval seeds per grid point, results averaged
  std::optional<std::string> marginalize;
};

struct TheoryConfig {
  std::size_t instances = 100;
  std::size_t max_states = 5;
  std::size_t max_actions = 3;
};

struct ExperimentConfig {
  WorldParams world;
  BehaviorPolicyConfig behavior;
  std::size_t events_per_user = 100;
  TrainConfig user_model;
  PenaltyConfig penalty;
  StateTrackerConfig tracker;
  ActorCriticHyper policy;
  EvalConfig eval;
  SweepConfig sweep;
  TheoryConfig theory;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
};

/// Per-stage seed derivation: global seed + fixed offset.
enum class Stage : std::uint64_t { world = 1, logs = 2, user_model = 3, policy = 4, eval = 5, theory = 6 };
std::uint64_t stage_seed(const ExperimentConfig& cfg, Stage stage);

/// Parses JSON text; unknown keys and type mismatches raise ValidationError
/// naming the key path.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON of the effective configuration.
std::string config_json(const ExperimentConfig& cfg);
/// 16 hex digits of FNV-1a over config_json without out_dir and threads.
std::string config_hash(const ExperimentConfig& cfg);

/// Artifact-producing stages. Each reads its inputs from `out_dir` and writes
/// versioned files carrying the config hash and seed.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, std::ostream& log);

  [[nodiscard]] const ExperimentConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const std::string& hash() const noexcept { return hash_; }
  [[nodiscard]] std::filesystem::path path(const std::string& name) const;

  void gen_world();
  void gen_logs();
  /// Trains the plain ensemble and its IPS-weighted twin.
  void train_user_model();
  void build_entropy_index();
  void train_policy(Baseline baseline);
  EvalSummary evaluate(Baseline baseline);
  std::vector<SweepRow> sweep(Baseline baseline);
  void analyze_logs(const std::optional<std::filesystem::path>& logs_override = std::nullopt);

  /// Runs gen-world through sweep for `baseline`, then analyze-logs.
  void run_all(Baseline baseline);

  static std::string policy_file(Baseline b);
  static std::string results_file(Baseline b);

 private:
  WorldSpec require_world() const;
  LogTable require_logs() const;
  GPMEnsemble require_ensemble(bool ips) const;
  EntropyIndex require_index() const;
  ActorCritic train_policy_with(const GPMEnsemble& ens, const EntropyIndex& index, const PenaltyConfig& penalty,
                                std::uint64_t seed) const;
  EvalSummary evaluate_policy(const WorldSpec& world, const ActorCritic& ac, const GPMEnsemble& ens,
                              const EntropyIndex& index, const PenaltyConfig& penalty,
                              const std::set<std::size_t>& dominated, std::uint64_t seed) const;
  void write_meta(const std::filesystem::path& artifact, std::uint64_t seed) const;
  void check_hash(const std::filesystem::path& artifact) const;

  ExperimentConfig cfg_;
  std::string hash_;
  std::filesystem::path dir_;
  std::ostream& log_;
  mutable std::set<std::string> warned_;  // artifacts already reported by check_hash
};

struct LemmaRow {
  std::uint64_t seed = 0;
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  double gamma = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double diff = 0.0;
};

/// Random MDP pairs (S ≤ max_states, A ≤ max_actions, γ cycling through
/// {0.5, 0.9, 0.99}), instance k seeded with base_seed + k.
std::vector<LemmaRow> lemma_table(std::size_t instances, std::size_t max_states, std::size_t max_actions,
                                  std::uint64_t base_seed);

}  // namespace dorl
