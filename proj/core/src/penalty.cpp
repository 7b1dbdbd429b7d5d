#include "dorl/penalty.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "dorl/error.hpp"

namespace dorl {
namespace {

constexpr int kIndexVersion = 1;

const std::map<PatternKey, CountMap> kEmptyTable;

std::size_t parse_size(std::string_view s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError("bad id '" + std::string(s) + "' in index key");
  return v;
}

}  // namespace

PatternKey make_pattern_key(std::span<const std::size_t> window) {
  PatternKey key(window.begin(), window.end());
  std::sort(key.begin(), key.end());
  return key;
}

EntropyIndex::EntropyIndex(std::vector<std::size_t> orders, std::size_t n_items)
    : orders_(std::move(orders)), n_items_(n_items) {
  std::sort(orders_.begin(), orders_.end());
  orders_.erase(std::unique(orders_.begin(), orders_.end()), orders_.end());
  for (auto k : orders_) {
    if (k == 0) throw ValidationError("entropy orders must be >= 1");
  }
}

const CountMap* EntropyIndex::find(const PatternKey& key) const {
  auto t = tables_.find(key.size());
  if (t == tables_.end()) return nullptr;
  auto it = t->second.find(key);
  return it == t->second.end() ? nullptr : &it->second;
}

const double* EntropyIndex::find_entropy(const PatternKey& key) const {
  auto it = entropy_.find(key);
  return it == entropy_.end() ? nullptr : &it->second;
}

const std::map<PatternKey, CountMap>& EntropyIndex::table(std::size_t order) const {
  auto t = tables_.find(order);
  return t == tables_.end() ? kEmptyTable : t->second;
}

void EntropyIndex::add(const PatternKey& key, std::size_t next_item, std::uint64_t count) {
  if (count == 0) return;
  tables_[key.size()][key][next_item] += count;
}

void EntropyIndex::finalize() {
  entropy_.clear();
  for (const auto& [order, table] : tables_) {
    for (const auto& [key, counts] : table) entropy_.emplace(key, normalized_entropy(counts));
  }
}

void PenaltyConfig::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ValidationError("penalty weights must be >= 0");
  if (orders.empty()) throw ValidationError("penalty.orders must not be empty");
  for (auto k : orders) {
    if (k == 0) throw ValidationError("penalty.orders entries must be >= 1");
  }
}

EntropyIndex build_entropy_index(const LogTable& logs, const std::vector<std::size_t>& orders) {
  EntropyIndex index(orders, logs.n_items);
  // Records are sorted by (user, timestamp), so each user's run is contiguous
  // and windows never straddle two users.
  std::size_t begin = 0;
  const auto& rec = logs.records;
  std::vector<std::size_t> seq;
  while (begin < rec.size()) {
    std::size_t end = begin;
    seq.clear();
    while (end < rec.size() && rec[end].user_id == rec[begin].user_id) seq.push_back(rec[end++].item_id);
    for (auto k : index.orders()) {
      for (std::size_t t = 0; t + k < seq.size(); ++t) {
        index.add(make_pattern_key(std::span(seq).subspan(t, k)), seq[t + k]);
      }
    }
    begin = end;
  }
  index.finalize();
  return index;
}

double normalized_entropy(const CountMap& counts) {
  if (counts.empty()) throw ValidationError("normalized_entropy of an empty count map");
  if (counts.size() == 1) return 0.0;
  double total = 0.0;
  for (const auto& [item, c] : counts) total += static_cast<double>(c);
  double h = 0.0;
  for (const auto& [item, c] : counts) {
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(counts.size()));
}

double entropy_penalty(const EntropyIndex& index, std::span<const std::size_t> recent_items) {
  double total = 0.0;
  for (auto k : index.orders()) {
    if (recent_items.size() < k) continue;
    if (const double* e = index.find_entropy(make_pattern_key(recent_items.last(k)))) total += *e;
  }
  return total;
}

double modified_reward(double r_hat, double p_u, double p_e, const PenaltyConfig& cfg) {
  return r_hat - cfg.lambda1 * p_u + cfg.lambda2 * p_e;
}

double shannon_entropy(std::span<const double> dist) {
  double h = 0.0;
  for (double p : dist) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double kl_to_uniform(std::span<const double> dist) {
  if (dist.empty()) throw ValidationError("kl_to_uniform of an empty distribution");
  double sum = 0.0;
  for (double p : dist) {
    if (!(p >= 0.0)) throw ValidationError("distribution has a negative or NaN entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("distribution does not sum to 1");
  const double log_n = std::log(static_cast<double>(dist.size()));
  double kl = 0.0;
  for (double p : dist) {
    if (p > 0.0) kl += p * (std::log(p) + log_n);
  }
  const double identity = log_n - shannon_entropy(dist);
  if (std::abs(kl - identity) > 1e-9) throw InternalError("KL-to-uniform identity violated");
  return kl;
}

void save_entropy_index(const std::filesystem::path& path, const EntropyIndex& index, const std::string& config_hash,
                        std::uint64_t seed) {
  nlohmann::json counts = nlohmann::json::object();
  for (auto k : index.orders()) {
    for (const auto& [key, next] : index.table(k)) {
      std::string prefix = std::to_string(k) + '/';
      for (std::size_t j = 0; j < key.size(); ++j) prefix += (j ? "," : "") + std::to_string(key[j]);
      for (const auto& [item, c] : next) counts[prefix + '/' + std::to_string(item)] = c;
    }
  }
  nlohmann::json j = {{"version", kIndexVersion}, {"config_hash", config_hash}, {"seed", seed},
                      {"orders", index.orders()}, {"n_items", index.n_items()}, {"counts", std::move(counts)}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write entropy index " + path.string());
  out << j.dump() << '\n';
}

EntropyIndex load_entropy_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open entropy index " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    if (j.at("version").get<int>() != kIndexVersion) throw ValidationError("unsupported entropy index version");
    EntropyIndex index(j.at("orders").get<std::vector<std::size_t>>(), j.at("n_items").get<std::size_t>());
    for (const auto& [name, c] : j.at("counts").items()) {
      const auto s1 = name.find('/');
      const auto s2 = name.rfind('/');
      if (s1 == std::string::npos || s2 == s1) throw ParseError("bad index key '" + name + "'");
      const auto order = parse_size(std::string_view(name).substr(0, s1));
      PatternKey key;
      std::string_view items = std::string_view(name).substr(s1 + 1, s2 - s1 - 1);
      while (!items.empty()) {
        const auto comma = items.find(',');
        key.push_back(parse_size(items.substr(0, comma)));
        items = comma == std::string_view::npos ? std::string_view{} : items.substr(comma + 1);
      }
      if (key.size() != order) throw ParseError("index key '" + name + "' has the wrong arity");
      index.add(key, parse_size(std::string_view(name).substr(s2 + 1)), c.get<std::uint64_t>());
    }
    index.finalize();
    return index;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("entropy index " + path.string() + ": " + e.what());
  }
}

}  // namespace dorl
