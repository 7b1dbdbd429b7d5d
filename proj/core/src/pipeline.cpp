#include "dorl/pipeline.hpp"

#include <array>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dorl/error.hpp"
#include "dorl/theory.hpp"

namespace dorl {
namespace {

using nlohmann::json;

constexpr int kArtifactVersion = 1;

// Reads one JSON object section, remembering which keys were consumed so
// leftovers can be rejected with their full path.
class SectionReader {
 public:
  SectionReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config key '" + display() + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    out = convert<T>(*it, key);
  }

  template <typename T>
  void read_optional(const char* key, std::optional<T>& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    out = convert<T>(*it, key);
  }

  std::optional<SectionReader> section(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return SectionReader(*it, full(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ValidationError("unknown config key '" + full(key) + "'");
    }
  }

 private:
  [[nodiscard]] std::string display() const { return path_.empty() ? "<root>" : path_; }
  [[nodiscard]] std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  T convert(const json& v, const char* key) const {
    const auto fail = [&](const char* expected) {
      return ValidationError("config key '" + full(key) + "': expected " + expected);
    };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw fail("a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw fail("a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw fail("a string");
      return v.get<std::string>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw fail("a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::pair<double, double>>) {
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) throw fail("[low, high]");
      return {v[0].get<double>(), v[1].get<double>()};
    } else {
      // std::vector<double> / std::vector<std::size_t>
      using E = typename T::value_type;
      if (!v.is_array()) throw fail("an array");
      T out;
      for (const auto& e : v) {
        if constexpr (std::is_unsigned_v<E>) {
          if (!e.is_number_unsigned()) throw fail("an array of non-negative integers");
        } else {
          if (!e.is_number()) throw fail("an array of numbers");
        }
        out.push_back(e.get<E>());
      }
      return out;
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::string kind_name(BehaviorKind k) { return k == BehaviorKind::uniform ? "uniform" : "popularity_softmax"; }

BehaviorKind parse_kind(const std::string& s) {
  if (s == "uniform") return BehaviorKind::uniform;
  if (s == "popularity_softmax") return BehaviorKind::popularity_softmax;
  throw ValidationError("config key 'behavior.kind': expected 'uniform' or 'popularity_softmax'");
}

json to_json(const ExperimentConfig& c) {
  json sweep = {{"lambda1", c.sweep.lambda1},
                {"lambda2", c.sweep.lambda2},
                {"quit_window", c.sweep.quit_window},
                {"repeats", c.sweep.repeats},
                {"marginalize", c.sweep.marginalize ? json(*c.sweep.marginalize) : json(nullptr)}};
  return {
      {"world",
       {{"n_users", c.world.n_users},
        {"n_items", c.world.n_items},
        {"n_categories", c.world.n_categories},
        {"latent_dim", c.world.latent_dim},
        {"noise_scale", c.world.noise_scale},
        {"quit_window", c.world.quit_rule.window},
        {"quit_tolerance", c.world.quit_rule.tolerance},
        {"max_rounds", c.world.max_rounds}}},
      {"behavior",
       {{"kind", kind_name(c.behavior.kind)},
        {"temperature", c.behavior.temperature},
        {"popularity_center", c.behavior.popularity_center},
        {"popularity_width", c.behavior.popularity_width},
        {"events_per_user", c.events_per_user}}},
      {"user_model",
       {{"dim", c.user_model.dim},
        {"ensemble_size", c.user_model.ensemble_size},
        {"learning_rate", c.user_model.learning_rate},
        {"l2_reg", c.user_model.l2_reg},
        {"epochs", c.user_model.epochs},
        {"batch_size", c.user_model.batch_size},
        {"ips_clip", {c.user_model.ips_clip.first, c.user_model.ips_clip.second}},
        {"init_std", c.user_model.init_std}}},
      {"penalty", {{"lambda1", c.penalty.lambda1}, {"lambda2", c.penalty.lambda2}, {"orders", c.penalty.orders}}},
      {"policy",
       {{"window", c.tracker.window},
        {"emb_dim", c.tracker.emb_dim},
        {"gamma", c.policy.gamma},
        {"lr_actor", c.policy.lr_actor},
        {"lr_critic", c.policy.lr_critic},
        {"entropy_coef", c.policy.entropy_coef},
        {"rollout_len", c.policy.rollout_len},
        {"episodes_per_epoch", c.policy.episodes_per_epoch},
        {"epochs", c.policy.epochs}}},
      {"eval",
       {{"n_episodes", c.eval.n_episodes},
        {"greedy", c.eval.greedy},
        {"epsilon", c.eval.epsilon},
        {"coverage", c.eval.coverage}}},
      {"sweep", sweep},
      {"theory",
       {{"instances", c.theory.instances}, {"max_states", c.theory.max_states}, {"max_actions", c.theory.max_actions}}},
      {"out_dir", c.out_dir},
      {"seed", c.seed},
      {"threads", c.threads},
  };
}

json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

json summary_json(const EvalSummary& s) {
  auto ms = [](const MetricSummary& m) { return json{{"mean", m.mean}, {"std", m.std}}; };
  json episodes = json::array();
  for (const auto& t : s.trajectories) {
    json items = json::array(), cats = json::array();
    for (const auto& st : t.steps) {
      items.push_back(st.item_id);
      cats.push_back(st.category_id);
    }
    episodes.push_back({{"user", t.user}, {"reason", std::string(to_string(t.reason))}, {"reward", t.total_reward()},
                        {"items", items}, {"categories", cats}});
  }
  return {{"n_episodes", s.n_episodes}, {"r_tra", ms(s.r_tra)}, {"r_each", ms(s.r_each)}, {"length", ms(s.length)},
          {"mcd", s.mcd}, {"episodes", episodes}};
}

EvalSummary merge(std::vector<EvalSummary> parts, const std::set<std::size_t>& dominated) {
  EvalSummary out;
  std::vector<double> r_tra, r_each, length;
  for (auto& p : parts) {
    out.n_episodes += p.n_episodes;
    for (auto& t : p.trajectories) {
      const auto m = trajectory_metrics(t, dominated);
      r_tra.push_back(m.r_tra);
      r_each.push_back(m.r_each);
      length.push_back(static_cast<double>(m.length));
      out.trajectories.push_back(std::move(t));
    }
  }
  out.r_tra = summarize(r_tra);
  out.r_each = summarize(r_each);
  out.length = summarize(length);
  out.mcd = mcd(out.trajectories, dominated);
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (world.n_users == 0 || world.n_items == 0 || world.n_categories == 0) {
    throw ValidationError("world counts must be >= 1");
  }
  if (world.latent_dim == 0) throw ValidationError("world.latent_dim must be >= 1");
  if (!(world.noise_scale >= 0.0 && world.noise_scale < 0.5)) throw ValidationError("world.noise_scale must lie in [0, 0.5)");
  if (world.max_rounds == 0) throw ValidationError("world.max_rounds must be >= 1");
  behavior.validate();
  if (events_per_user == 0) throw ValidationError("behavior.events_per_user must be >= 1");
  user_model.validate();
  penalty.validate();
  if (tracker.window == 0 || tracker.emb_dim == 0) throw ValidationError("policy.window and policy.emb_dim must be >= 1");
  policy.validate();
  if (eval.n_episodes == 0) throw ValidationError("eval.n_episodes must be >= 1");
  if (!(eval.epsilon >= 0.0 && eval.epsilon <= 1.0)) throw ValidationError("eval.epsilon must lie in [0, 1]");
  if (!(eval.coverage > 0.0 && eval.coverage <= 1.0)) throw ValidationError("eval.coverage must lie in (0, 1]");
  if (sweep.repeats == 0) throw ValidationError("sweep.repeats must be >= 1");
  if (sweep.marginalize && *sweep.marginalize != "lambda1" && *sweep.marginalize != "lambda2" &&
      *sweep.marginalize != "quit_window") {
    throw ValidationError("sweep.marginalize must name lambda1, lambda2 or quit_window");
  }
  if (theory.max_states == 0 || theory.max_actions == 0) throw ValidationError("theory sizes must be >= 1");
  if (threads == 0) throw ValidationError("threads must be >= 1");
}

std::uint64_t stage_seed(const ExperimentConfig& cfg, Stage stage) {
  return cfg.seed + static_cast<std::uint64_t>(stage);
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  SectionReader root(j, "");
  if (auto s = root.section("world")) {
    s->read("n_users", c.world.n_users);
    s->read("n_items", c.world.n_items);
    s->read("n_categories", c.world.n_categories);
    s->read("latent_dim", c.world.latent_dim);
    s->read("noise_scale", c.world.noise_scale);
    s->read("quit_window", c.world.quit_rule.window);
    s->read("quit_tolerance", c.world.quit_rule.tolerance);
    s->read("max_rounds", c.world.max_rounds);
    s->finish();
  }
  if (auto s = root.section("behavior")) {
    std::string kind = kind_name(c.behavior.kind);
    s->read("kind", kind);
    c.behavior.kind = parse_kind(kind);
    s->read("temperature", c.behavior.temperature);
    s->read("popularity_center", c.behavior.popularity_center);
    s->read("popularity_width", c.behavior.popularity_width);
    s->read("events_per_user", c.events_per_user);
    s->finish();
  }
  if (auto s = root.section("user_model")) {
    s->read("dim", c.user_model.dim);
    s->read("ensemble_size", c.user_model.ensemble_size);
    s->read("learning_rate", c.user_model.learning_rate);
    s->read("l2_reg", c.user_model.l2_reg);
    s->read("epochs", c.user_model.epochs);
    s->read("batch_size", c.user_model.batch_size);
    s->read("ips_clip", c.user_model.ips_clip);
    s->read("init_std", c.user_model.init_std);
    s->finish();
  }
  if (auto s = root.section("penalty")) {
    s->read("lambda1", c.penalty.lambda1);
    s->read("lambda2", c.penalty.lambda2);
    s->read("orders", c.penalty.orders);
    s->finish();
  }
  if (auto s = root.section("policy")) {
    s->read("window", c.tracker.window);
    s->read("emb_dim", c.tracker.emb_dim);
    s->read("gamma", c.policy.gamma);
    s->read("lr_actor", c.policy.lr_actor);
    s->read("lr_critic", c.policy.lr_critic);
    s->read("entropy_coef", c.policy.entropy_coef);
    s->read("rollout_len", c.policy.rollout_len);
    s->read("episodes_per_epoch", c.policy.episodes_per_epoch);
    s->read("epochs", c.policy.epochs);
    s->finish();
  }
  if (auto s = root.section("eval")) {
    s->read("n_episodes", c.eval.n_episodes);
    s->read("greedy", c.eval.greedy);
    s->read("epsilon", c.eval.epsilon);
    s->read("coverage", c.eval.coverage);
    s->finish();
  }
  if (auto s = root.section("sweep")) {
    s->read("lambda1", c.sweep.lambda1);
    s->read("lambda2", c.sweep.lambda2);
    s->read("quit_window", c.sweep.quit_window);
    s->read("repeats", c.sweep.repeats);
    s->read_optional("marginalize", c.sweep.marginalize);
    s->finish();
  }
  if (auto s = root.section("theory")) {
    s->read("instances", c.theory.instances);
    s->read("max_states", c.theory.max_states);
    s->read("max_actions", c.theory.max_actions);
    s->finish();
  }
  root.read("out_dir", c.out_dir);
  root.read("seed", c.seed);
  root.read("threads", c.threads);
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(); }

std::string config_hash(const ExperimentConfig& cfg) {
  // Output location and thread count do not change any artifact.
  auto j = to_json(cfg);
  j.erase("out_dir");
  j.erase("threads");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

Pipeline::Pipeline(ExperimentConfig cfg, std::ostream& log)
    : cfg_(std::move(cfg)), hash_(config_hash(cfg_)), dir_(cfg_.out_dir), log_(log) {
  cfg_.validate();
  std::filesystem::create_directories(dir_);
}

std::filesystem::path Pipeline::path(const std::string& name) const { return dir_ / name; }

std::string Pipeline::policy_file(Baseline b) { return "policy_" + std::string(to_string(b)) + ".json"; }
std::string Pipeline::results_file(Baseline b) { return "results_" + std::string(to_string(b)) + ".csv"; }

void Pipeline::write_meta(const std::filesystem::path& artifact, std::uint64_t seed) const {
  json j = {{"version", kArtifactVersion},
            {"config_hash", hash_},
            {"seed", seed},
            {"artifact", artifact.filename().string()}};
  write_text(artifact.string() + ".meta.json", j.dump() + "\n");
}

void Pipeline::check_hash(const std::filesystem::path& artifact) const {
  std::filesystem::path source = artifact;
  if (artifact.extension() == ".csv") source = artifact.string() + ".meta.json";
  if (!std::filesystem::exists(source)) return;
  const auto j = read_json_file(source);
  const auto it = j.find("config_hash");
  if (it != j.end() && it->is_string() && it->get<std::string>() != hash_ &&
      warned_.insert(artifact.filename().string()).second) {
    log_ << "warning: " << artifact.filename().string() << " was produced with config " << it->get<std::string>()
         << ", current config is " << hash_ << '\n';
  }
}

WorldSpec Pipeline::require_world() const {
  const auto p = path("world.json");
  if (!std::filesystem::exists(p)) throw Error("missing " + p.string() + "; run gen-world first");
  check_hash(p);
  return load_world(p);
}

LogTable Pipeline::require_logs() const {
  const auto p = path("logs.csv");
  if (!std::filesystem::exists(p)) throw Error("missing " + p.string() + "; run gen-logs first");
  check_hash(p);
  LogTable logs = load_logs(p);
  const auto world = require_world();
  if (logs.n_users > world.n_users || logs.n_items > world.n_items || logs.n_categories > world.n_categories) {
    throw ValidationError("logs reference ids outside the world");
  }
  for (const auto& r : logs.records) {
    if (world.item_category[r.item_id] != r.category_id) {
      throw ValidationError("log category of item " + std::to_string(r.item_id) + " disagrees with the world");
    }
  }
  logs.n_users = world.n_users;
  logs.n_items = world.n_items;
  logs.n_categories = world.n_categories;
  return logs;
}

GPMEnsemble Pipeline::require_ensemble(bool ips) const {
  const auto p = path(ips ? "user_model_ips.json" : "user_model.json");
  if (!std::filesystem::exists(p)) throw Error("missing " + p.string() + "; run train-user-model first");
  check_hash(p);
  return load_ensemble(p);
}

EntropyIndex Pipeline::require_index() const {
  const auto p = path("entropy_index.json");
  if (!std::filesystem::exists(p)) throw Error("missing " + p.string() + "; run build-entropy-index first");
  check_hash(p);
  return load_entropy_index(p);
}

void Pipeline::gen_world() {
  const auto seed = stage_seed(cfg_, Stage::world);
  const auto world = generate_world(cfg_.world, seed);
  save_world(path("world.json"), world, hash_, seed);
  log_ << "gen-world: " << world.n_users << " users x " << world.n_items << " items, " << world.n_categories
       << " categories -> " << path("world.json").string() << '\n';
}

void Pipeline::gen_logs() {
  const auto world = require_world();
  const auto seed = stage_seed(cfg_, Stage::logs);
  const auto logs = generate_logs(world, cfg_.behavior, cfg_.events_per_user, seed);
  write_logs(path("logs.csv"), logs);
  write_meta(path("logs.csv"), seed);
  log_ << "gen-logs: " << logs.records.size() << " records -> " << path("logs.csv").string() << '\n';
}

void Pipeline::train_user_model() {
  const auto logs = require_logs();
  const auto seed = stage_seed(cfg_, Stage::user_model);
  for (bool ips : {false, true}) {
    TrainConfig tc = cfg_.user_model;
    tc.seed = seed;
    tc.threads = cfg_.threads;
    tc.ips = ips;
    const auto ens = train_ensemble(logs, tc);
    const auto p = path(ips ? "user_model_ips.json" : "user_model.json");
    save_ensemble(p, ens, hash_, seed);
    log_ << "train-user-model: " << (ips ? "ips" : "plain") << " ensemble of " << ens.members.size()
         << ", final-epoch loss";
    for (double l : ens.final_epoch_loss) log_ << ' ' << l;
    log_ << " -> " << p.string() << '\n';
  }
}

void Pipeline::build_entropy_index() {
  const auto logs = require_logs();
  const auto index = dorl::build_entropy_index(logs, cfg_.penalty.orders);
  save_entropy_index(path("entropy_index.json"), index, hash_, cfg_.seed);
  std::size_t keys = 0;
  for (auto k : index.orders()) keys += index.table(k).size();
  log_ << "build-entropy-index: " << keys << " patterns -> " << path("entropy_index.json").string() << '\n';
}

ActorCritic Pipeline::train_policy_with(const GPMEnsemble& ens, const EntropyIndex& index, const PenaltyConfig& penalty,
                                        std::uint64_t seed) const {
  ActorCriticHyper hyper = cfg_.policy;
  hyper.seed = seed;
  auto ac = ActorCritic::create(ens.n_items(), cfg_.tracker, hyper);
  PolicyTrainReport report;
  ac = dorl::train_policy(ens, index, penalty, ens.n_users(), std::move(ac), &report);
  if (!report.epoch_mean_reward.empty()) {
    log_ << "  policy seed " << seed << ": mean r~ per step " << report.epoch_mean_reward.front() << " (epoch 1) -> "
         << report.epoch_mean_reward.back() << " (epoch " << report.epoch_mean_reward.size() << ")\n";
  }
  return ac;
}

void Pipeline::train_policy(Baseline b) {
  if (!baseline_has_policy(b)) {
    log_ << "train-policy: baseline " << to_string(b) << " has no policy to train\n";
    return;
  }
  const auto ens = require_ensemble(baseline_uses_ips(b));
  const auto index = require_index();
  const auto seed = stage_seed(cfg_, Stage::policy);
  const auto ac = train_policy_with(ens, index, baseline_penalty(b, cfg_.penalty), seed);
  save_policy(path(policy_file(b)), ac, hash_, seed, to_string(b));
  log_ << "train-policy: " << to_string(b) << " -> " << path(policy_file(b)).string() << '\n';
}

EvalSummary Pipeline::evaluate_policy(const WorldSpec& world, const ActorCritic& ac, const GPMEnsemble& ens,
                                      const EntropyIndex& index, const PenaltyConfig& penalty,
                                      const std::set<std::size_t>& dominated, std::uint64_t seed) const {
  PolicyRecommender rec(ac, ens, index, penalty, cfg_.eval.greedy ? ActMode::greedy : ActMode::sample);
  return dorl::evaluate(world, rec, dominated, cfg_.eval.n_episodes, seed);
}

EvalSummary Pipeline::evaluate(Baseline b) {
  const auto world = require_world();
  const auto logs = require_logs();
  const auto dominated = dominated_categories(logs, cfg_.eval.coverage);
  const auto seed = stage_seed(cfg_, Stage::eval);
  EvalSummary summary;
  PenaltyConfig penalty = baseline_penalty(b, cfg_.penalty);
  if (baseline_has_policy(b)) {
    const auto p = path(policy_file(b));
    if (!std::filesystem::exists(p)) {
      throw Error("missing " + p.string() + "; run train-policy first (--baseline " + std::string(to_string(b)) + ")");
    }
    check_hash(p);
    const auto ac = load_policy(p);
    const auto ens = require_ensemble(baseline_uses_ips(b));
    const auto index = require_index();
    summary = evaluate_policy(world, ac, ens, index, penalty, dominated, seed);
  } else if (b == Baseline::egreedy) {
    const auto ens = require_ensemble(false);
    EpsilonGreedyRecommender rec(ens, cfg_.eval.epsilon);
    summary = dorl::evaluate(world, rec, dominated, cfg_.eval.n_episodes, seed);
  } else {
    UCBRecommender rec(world.n_items);
    summary = dorl::evaluate(world, rec, dominated, cfg_.eval.n_episodes, seed);
  }

  json j = summary_json(summary);
  j["version"] = kArtifactVersion;
  j["config_hash"] = hash_;
  j["seed"] = seed;
  j["baseline"] = to_string(b);
  j["dominated_categories"] = dominated;
  write_text(path("eval_" + std::string(to_string(b)) + ".json"), j.dump() + "\n");

  SweepRow row{{{{"lambda1", penalty.lambda1}, {"lambda2", penalty.lambda2}}}, summary.r_tra, summary.r_each,
               summary.length, summary.mcd};
  write_text(path(results_file(b)), format_results_csv({row}));
  write_meta(path(results_file(b)), seed);
  log_ << "evaluate: " << to_string(b) << " R_tra " << summary.r_tra.mean << " R_each " << summary.r_each.mean
       << " length " << summary.length.mean << " MCD " << summary.mcd << '\n';
  return summary;
}

std::vector<SweepRow> Pipeline::sweep(Baseline b) {
  const auto world = require_world();
  const auto logs = require_logs();
  const auto dominated = dominated_categories(logs, cfg_.eval.coverage);
  const auto ens = require_ensemble(baseline_uses_ips(b));
  const auto index = require_index();

  const auto& sc = cfg_.sweep;
  const std::vector<double> l1 = sc.lambda1.empty() ? std::vector<double>{cfg_.penalty.lambda1} : sc.lambda1;
  const std::vector<double> l2 = sc.lambda2.empty() ? std::vector<double>{cfg_.penalty.lambda2} : sc.lambda2;
  std::vector<SweepPoint> grid;
  for (double a : l1) {
    for (double c : l2) {
      if (sc.quit_window.empty()) {
        grid.push_back({{{"lambda1", a}, {"lambda2", c}}});
      } else {
        for (auto n : sc.quit_window) grid.push_back({{{"lambda1", a}, {"lambda2", c}, {"quit_window", double(n)}}});
      }
    }
  }

  // Training ignores the quit rule, so one policy per (λ1, λ2, repeat) serves every window.
  std::map<std::tuple<double, double, std::size_t>, ActorCritic> cache;
  auto run = [&](const SweepPoint& pt) {
    PenaltyConfig penalty = cfg_.penalty;
    penalty.lambda1 = pt.params[0].second;
    penalty.lambda2 = pt.params[1].second;
    WorldSpec w = world;
    if (pt.params.size() > 2) w.quit_rule.window = static_cast<std::size_t>(pt.params[2].second);
    std::vector<EvalSummary> parts;
    for (std::size_t r = 0; r < sc.repeats; ++r) {
      const auto key = std::make_tuple(penalty.lambda1, penalty.lambda2, r);
      auto it = cache.find(key);
      if (it == cache.end()) {
        it = cache.emplace(key, train_policy_with(ens, index, penalty, stage_seed(cfg_, Stage::policy) + r)).first;
      }
      parts.push_back(evaluate_policy(w, it->second, ens, index, penalty, dominated, stage_seed(cfg_, Stage::eval) + r));
    }
    auto s = merge(std::move(parts), dominated);
    log_ << "sweep:";
    for (const auto& [k, v] : pt.params) log_ << ' ' << k << '=' << v;
    log_ << " -> R_tra " << s.r_tra.mean << " length " << s.length.mean << " MCD " << s.mcd << '\n';
    return s;
  };
  const auto rows = dorl::sweep(grid, run);
  write_text(path("sweep.csv"), format_results_csv(rows));
  write_meta(path("sweep.csv"), cfg_.seed);
  if (sc.marginalize) {
    write_text(path("sweep_marginal.csv"), format_results_csv(marginalize(rows, *sc.marginalize)));
    write_meta(path("sweep_marginal.csv"), cfg_.seed);
  }
  return rows;
}

void Pipeline::analyze_logs(const std::optional<std::filesystem::path>& logs_override) {
  const LogTable logs = logs_override ? load_logs(*logs_override) : require_logs();
  json j;
  j["version"] = kArtifactVersion;
  j["config_hash"] = hash_;
  j["seed"] = cfg_.seed;
  j["n_records"] = logs.records.size();
  j["dominated_categories"] = logs.empty() ? std::set<std::size_t>{} : dominated_categories(logs, cfg_.eval.coverage);

  const auto rates = repeat_rates(logs);
  double item_sum = 0.0, cat_sum = 0.0;
  for (const auto& r : rates) {
    item_sum += r.item_level;
    cat_sum += r.category_level;
  }
  const double n = rates.empty() ? 1.0 : static_cast<double>(rates.size());
  j["repeat_rate"] = {{"user_days", rates.size()}, {"item_level_mean", item_sum / n}, {"category_level_mean", cat_sum / n}};

  const std::vector<ActivityBucket> buckets{{1, 1}, {2, 5}, {6, 20}, {21, std::numeric_limits<std::size_t>::max()}};
  try {
    json rows = json::array();
    for (const auto& row : day1_retention(logs, buckets)) {
      rows.push_back({{"events_lo", row.bucket.lo}, {"events_hi", row.bucket.hi}, {"retained", row.retained},
                      {"eligible", row.eligible}, {"rate", row.rate()}});
    }
    j["day1_retention"] = rows;
  } catch (const ValidationError& e) {
    j["day1_retention"] = nullptr;
    j["day1_retention_note"] = e.what();
  }
  write_text(path("analysis.json"), j.dump(2) + "\n");
  log_ << "analyze-logs: " << rates.size() << " user-days -> " << path("analysis.json").string() << '\n';
}

void Pipeline::run_all(Baseline b) {
  gen_world();
  gen_logs();
  train_user_model();
  build_entropy_index();
  train_policy(b);
  evaluate(b);
  if (!cfg_.sweep.lambda1.empty() || !cfg_.sweep.lambda2.empty() || !cfg_.sweep.quit_window.empty()) sweep(b);
  analyze_logs();
}

std::vector<LemmaRow> lemma_table(std::size_t instances, std::size_t max_states, std::size_t max_actions,
                                  std::uint64_t base_seed) {
  constexpr std::array<double, 3> kGammas{0.5, 0.9, 0.99};
  std::vector<LemmaRow> rows;
  rows.reserve(instances);
  for (std::size_t k = 0; k < instances; ++k) {
    const std::uint64_t seed = base_seed + k;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> ns(1, max_states), na(1, max_actions);
    const std::size_t s = ns(rng);
    const std::size_t a = na(rng);
    const double gamma = kGammas[k % kGammas.size()];
    const auto m = theory::random_mdp(s, a, gamma, rng);
    const auto m_hat = theory::perturbed_mdp(m, 0.3, rng);
    const auto pi = theory::random_policy(s, a, rng);
    const auto c = theory::verify_lemma1(m, m_hat, pi);
    rows.push_back({seed, s, a, gamma, c.lhs, c.rhs, c.abs_diff});
  }
  return rows;
}

}  // namespace dorl
