#include "dorl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string_view>

#include <json.hpp>

#include "dorl/error.hpp"

namespace dorl {
namespace {

constexpr std::string_view kLogHeader = "user_id,item_id,timestamp,reward,category_id";
constexpr int kWorldVersion = 1;

template <typename T>
T parse_number(std::string_view field, std::size_t line, std::string_view name) {
  T value{};
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw ParseError("line " + std::to_string(line) + ": cannot parse " + std::string(name) + " '" +
                     std::string(field) + "'");
  }
  return value;
}

std::size_t parse_id(std::string_view field, std::size_t line, std::string_view name) {
  if (!field.empty() && field.front() == '-') {
    throw ParseError("line " + std::to_string(line) + ": " + std::string(name) + " must be non-negative");
  }
  return parse_number<std::size_t>(field, line, name);
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<std::vector<std::size_t>> LogTable::user_sequences() const {
  std::vector<std::vector<std::size_t>> seqs(n_users);
  for (const auto& r : records) seqs[r.user_id].push_back(r.item_id);
  return seqs;
}

LogTable make_log_table(std::vector<InteractionRecord> records) {
  LogTable table;
  std::map<std::size_t, std::size_t> item_cat;
  for (const auto& r : records) {
    if (!(r.reward >= 0.0 && r.reward <= 1.0)) {
      throw ValidationError("reward " + format_double(r.reward) + " of user " + std::to_string(r.user_id) +
                            " item " + std::to_string(r.item_id) + " is outside [0,1]");
    }
    auto [it, inserted] = item_cat.emplace(r.item_id, r.category_id);
    if (!inserted && it->second != r.category_id) {
      throw ValidationError("item " + std::to_string(r.item_id) + " carries two categories (" +
                            std::to_string(it->second) + " and " + std::to_string(r.category_id) + ")");
    }
    table.n_users = std::max(table.n_users, r.user_id + 1);
    table.n_items = std::max(table.n_items, r.item_id + 1);
    table.n_categories = std::max(table.n_categories, r.category_id + 1);
  }
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.user_id, a.timestamp) < std::tie(b.user_id, b.timestamp);
  });
  table.records = std::move(records);
  return table;
}

LogTable parse_logs(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim_cr(line) != kLogHeader) {
    throw ParseError("line 1: expected header '" + std::string(kLogHeader) + "'");
  }
  std::vector<InteractionRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view row = trim_cr(line);
    if (row.empty()) continue;
    std::string_view fields[5];
    std::size_t n = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = row.find(',', start);
      if (n == 5) throw ParseError("line " + std::to_string(line_no) + ": expected 5 fields");
      fields[n++] = row.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (n != 5) throw ParseError("line " + std::to_string(line_no) + ": expected 5 fields, got " + std::to_string(n));
    InteractionRecord r;
    r.user_id = parse_id(fields[0], line_no, "user_id");
    r.item_id = parse_id(fields[1], line_no, "item_id");
    r.timestamp = parse_number<std::int64_t>(fields[2], line_no, "timestamp");
    r.reward = parse_number<double>(fields[3], line_no, "reward");
    r.category_id = parse_id(fields[4], line_no, "category_id");
    if (!(r.reward >= 0.0 && r.reward <= 1.0)) {
      throw ValidationError("line " + std::to_string(line_no) + ": reward " + std::string(fields[3]) +
                            " is outside [0,1]");
    }
    records.push_back(r);
  }
  return make_log_table(std::move(records));
}

LogTable load_logs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open log file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_logs(ss.str());
}

std::string format_logs(const LogTable& logs) {
  std::string out(kLogHeader);
  out += '\n';
  for (const auto& r : logs.records) {
    out += std::to_string(r.user_id) + ',' + std::to_string(r.item_id) + ',' + std::to_string(r.timestamp) + ',' +
           format_double(r.reward) + ',' + std::to_string(r.category_id) + '\n';
  }
  return out;
}

void write_logs(const std::filesystem::path& path, const LogTable& logs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write log file " + path.string());
  out << format_logs(logs);
}

void WorldSpec::validate() const {
  if (preference.size() != n_users * n_items) throw ValidationError("preference matrix has wrong size");
  if (item_category.size() != n_items) throw ValidationError("item_category has wrong length");
  for (double p : preference) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("preference entry outside [0,1]");
  }
  for (auto c : item_category) {
    if (c >= n_categories) throw ValidationError("item category out of range");
  }
  if (max_rounds == 0) throw ValidationError("max_rounds must be >= 1");
}

std::size_t block_category(std::size_t item, std::size_t n_items, std::size_t n_categories) {
  return item * n_categories / n_items;
}

WorldSpec generate_world(const WorldParams& p, std::uint64_t seed) {
  if (p.n_users == 0 || p.n_items == 0 || p.n_categories == 0) throw ValidationError("world counts must be >= 1");
  if (p.latent_dim == 0) throw ValidationError("latent_dim must be >= 1");
  if (!(p.noise_scale >= 0.0 && p.noise_scale < 0.5)) throw ValidationError("noise_scale must lie in [0, 0.5)");

  std::mt19937_64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.latent_dim));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](std::size_t rows) {
    std::vector<double> m(rows * p.latent_dim, 0.0);
    for (auto& v : m) v = p.zero_latent ? 0.0 : normal(rng) * scale;
    return m;
  };
  const auto users = draw(p.n_users);
  const auto items = draw(p.n_items);

  WorldSpec w;
  w.n_users = p.n_users;
  w.n_items = p.n_items;
  w.n_categories = p.n_categories;
  w.quit_rule = p.quit_rule;
  w.max_rounds = p.max_rounds;
  w.preference.resize(p.n_users * p.n_items);
  std::uniform_real_distribution<double> noise(-p.noise_scale, p.noise_scale);
  for (std::size_t u = 0; u < p.n_users; ++u) {
    for (std::size_t i = 0; i < p.n_items; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < p.latent_dim; ++k) dot += users[u * p.latent_dim + k] * items[i * p.latent_dim + k];
      const double eps = p.noise_scale > 0.0 ? noise(rng) : 0.0;
      w.preference[u * p.n_items + i] = std::clamp(sigmoid(dot) + eps, 0.0, 1.0);
    }
  }
  w.item_category.resize(p.n_items);
  for (std::size_t i = 0; i < p.n_items; ++i) w.item_category[i] = block_category(i, p.n_items, p.n_categories);
  w.validate();
  return w;
}

void save_world(const std::filesystem::path& path, const WorldSpec& w, const std::string& config_hash,
                std::uint64_t seed) {
  nlohmann::json j;
  j["version"] = kWorldVersion;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["n_users"] = w.n_users;
  j["n_items"] = w.n_items;
  j["n_categories"] = w.n_categories;
  j["item_category"] = w.item_category;
  auto rows = nlohmann::json::array();
  for (std::size_t u = 0; u < w.n_users; ++u) {
    rows.push_back(std::vector<double>(w.preference.begin() + static_cast<std::ptrdiff_t>(u * w.n_items),
                                       w.preference.begin() + static_cast<std::ptrdiff_t>((u + 1) * w.n_items)));
  }
  j["preference"] = std::move(rows);
  j["quit_rule"] = {{"window", w.quit_rule.window}, {"tolerance", w.quit_rule.tolerance}};
  j["max_rounds"] = w.max_rounds;
  std::ofstream out(path);
  if (!out) throw Error("cannot write world file " + path.string());
  out << j.dump() << '\n';
}

WorldSpec load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open world file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("version").get<int>() != kWorldVersion) throw ValidationError("unsupported world file version");
    WorldSpec w;
    w.n_users = j.at("n_users").get<std::size_t>();
    w.n_items = j.at("n_items").get<std::size_t>();
    w.n_categories = j.at("n_categories").get<std::size_t>();
    w.item_category = j.at("item_category").get<std::vector<std::size_t>>();
    const auto& rows = j.at("preference");
    if (rows.size() != w.n_users) throw ValidationError("preference has wrong number of rows");
    w.preference.reserve(w.n_users * w.n_items);
    for (const auto& row : rows) {
      auto r = row.get<std::vector<double>>();
      if (r.size() != w.n_items) throw ValidationError("preference row has wrong length");
      w.preference.insert(w.preference.end(), r.begin(), r.end());
    }
    w.quit_rule.window = j.at("quit_rule").at("window").get<std::size_t>();
    w.quit_rule.tolerance = j.at("quit_rule").at("tolerance").get<std::size_t>();
    w.max_rounds = j.at("max_rounds").get<std::size_t>();
    w.validate();
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("world file " + path.string() + ": " + e.what());
  }
}

void BehaviorPolicyConfig::validate() const {
  if (!(temperature > 0.0)) throw ValidationError("behavior temperature must be > 0");
  if (!(popularity_width > 0.0)) throw ValidationError("behavior popularity_width must be > 0");
}

std::vector<double> behavior_distribution(const WorldSpec& world, const BehaviorPolicyConfig& behavior,
                                          std::size_t user) {
  behavior.validate();
  std::vector<double> probs(world.n_items, 1.0 / static_cast<double>(world.n_items));
  if (behavior.kind == BehaviorKind::uniform) return probs;

  const double two_w2 = 2.0 * behavior.popularity_width * behavior.popularity_width;
  std::vector<double> logits(world.n_items);
  for (std::size_t i = 0; i < world.n_items; ++i) {
    const double offset = static_cast<double>(i) - behavior.popularity_center;
    const double bump = std::exp(-offset * offset / two_w2);
    logits[i] = (world.pref(user, i) + bump) / behavior.temperature;
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < world.n_items; ++i) total += probs[i] = std::exp(logits[i] - top);
  for (auto& p : probs) p /= total;
  return probs;
}

LogTable generate_logs(const WorldSpec& world, const BehaviorPolicyConfig& behavior, std::size_t events_per_user,
                       std::uint64_t seed) {
  if (events_per_user == 0) throw ValidationError("events_per_user must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<InteractionRecord> records;
  records.reserve(world.n_users * events_per_user);
  for (std::size_t u = 0; u < world.n_users; ++u) {
    const auto probs = behavior_distribution(world, behavior, u);
    std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
    for (std::size_t t = 0; t < events_per_user; ++t) {
      const std::size_t item = pick(rng);
      records.push_back({u, item, static_cast<std::int64_t>(t), world.pref(u, item), world.item_category[item]});
    }
  }
  LogTable table = make_log_table(std::move(records));
  // Keep the world's universe even if some ids were never sampled.
  table.n_users = world.n_users;
  table.n_items = world.n_items;
  table.n_categories = world.n_categories;
  return table;
}

std::set<std::size_t> dominated_categories(const LogTable& logs, double coverage) {
  if (!(coverage > 0.0 && coverage <= 1.0)) throw ValidationError("coverage must lie in (0, 1]");
  if (logs.empty()) throw ValidationError("dominated_categories needs a non-empty log");
  std::vector<std::size_t> counts(logs.n_categories, 0);
  for (const auto& r : logs.records) ++counts[r.category_id];
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return counts[a] > counts[b]; });

  const double target = coverage * static_cast<double>(logs.records.size());
  std::set<std::size_t> out;
  std::size_t cum = 0;
  for (auto c : order) {
    if (static_cast<double>(cum) >= target) break;
    out.insert(c);
    cum += counts[c];
  }
  return out;
}

}  // namespace dorl
