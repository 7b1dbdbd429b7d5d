#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "dorl/quit_rule.hpp"

namespace dorl {

struct InteractionRecord {
  std::size_t user_id = 0;
  std::size_t item_id = 0;
  std::int64_t timestamp = 0;
  double reward = 0.0;
  std::size_t category_id = 0;

  friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

/// Offline interaction log. Records are kept sorted by (user_id, timestamp).
struct LogTable {
  std::vector<InteractionRecord> records;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t n_categories = 0;

  [[nodiscard]] bool empty() const noexcept { return records.empty(); }

  /// Item sequence of every user, in timestamp order. Users without events get
  /// an empty sequence.
  [[nodiscard]] std::vector<std::vector<std::size_t>> user_sequences() const;

  friend bool operator==(const LogTable&, const LogTable&) = default;
};

/// Sorts records by (user_id, timestamp), infers the counts as max id + 1 and
/// checks every invariant. Throws ValidationError on violation.
LogTable make_log_table(std::vector<InteractionRecord> records);

/// Reads a `user_id,item_id,timestamp,reward,category_id` CSV.
LogTable load_logs(const std::filesystem::path& path);
LogTable parse_logs(const std::string& text);
void write_logs(const std::filesystem::path& path, const LogTable& logs);
std::string format_logs(const LogTable& logs);

/// Ground-truth world that plays the online users.
struct WorldSpec {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t n_categories = 0;
  std::vector<double> preference;  // row-major [n_users x n_items], entries in [0,1]
  std::vector<std::size_t> item_category;
  QuitRule quit_rule;
  std::size_t max_rounds = 30;

  [[nodiscard]] double pref(std::size_t user, std::size_t item) const {
    return preference[user * n_items + item];
  }

  void validate() const;
  friend bool operator==(const WorldSpec&, const WorldSpec&) = default;
};

struct WorldParams {
  std::size_t n_users = 50;
  std::size_t n_items = 200;
  std::size_t n_categories = 8;
  std::size_t latent_dim = 4;
  double noise_scale = 0.05;
  QuitRule quit_rule;
  std::size_t max_rounds = 30;
  // Test hook: forces all latent factors to zero so every entry is sigmoid(0).
  bool zero_latent = false;
};

/// Low-rank sigmoid preferences with uniform noise and block categories.
WorldSpec generate_world(const WorldParams& params, std::uint64_t seed);

/// Category of `item` under contiguous near-equal blocks.
std::size_t block_category(std::size_t item, std::size_t n_items, std::size_t n_categories);

WorldSpec load_world(const std::filesystem::path& path);
void save_world(const std::filesystem::path& path, const WorldSpec& world,
                const std::string& config_hash = "", std::uint64_t seed = 0);

enum class BehaviorKind { uniform, popularity_softmax };

struct BehaviorPolicyConfig {
  BehaviorKind kind = BehaviorKind::popularity_softmax;
  double temperature = 0.2;
  double popularity_center = 0.0;
  double popularity_width = 10.0;

  void validate() const;
};

/// Per-user item distribution of the logging policy.
std::vector<double> behavior_distribution(const WorldSpec& world, const BehaviorPolicyConfig& behavior,
                                          std::size_t user);

LogTable generate_logs(const WorldSpec& world, const BehaviorPolicyConfig& behavior,
                       std::size_t events_per_user, std::uint64_t seed);

/// Smallest set of most-interacted categories covering `coverage` of all
/// interactions. Ties in count go to the lower category id.
std::set<std::size_t> dominated_categories(const LogTable& logs, double coverage = 0.8);

}  // namespace dorl
