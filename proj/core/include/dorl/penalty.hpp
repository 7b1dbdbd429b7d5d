#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dorl/data.hpp"

namespace dorl {

/// Sorted item ids of a k-item window; windows that are permutations of each
/// other share a key.
using PatternKey = std::vector<std::size_t>;
using CountMap = std::map<std::size_t, std::uint64_t>;

PatternKey make_pattern_key(std::span<const std::size_t> window);

/// k-order (pattern -> next item) counts over logged user sequences.
class EntropyIndex {
 public:
  EntropyIndex() = default;
  EntropyIndex(std::vector<std::size_t> orders, std::size_t n_items);

  [[nodiscard]] const std::vector<std::size_t>& orders() const noexcept { return orders_; }
  [[nodiscard]] std::size_t n_items() const noexcept { return n_items_; }

  /// Count map for `key` at order `key.size()`; nullptr if never observed.
  [[nodiscard]] const CountMap* find(const PatternKey& key) const;
  /// Cached normalized entropy of the count map at `key`, or nullptr.
  [[nodiscard]] const double* find_entropy(const PatternKey& key) const;

  [[nodiscard]] const std::map<PatternKey, CountMap>& table(std::size_t order) const;

  void add(const PatternKey& key, std::size_t next_item, std::uint64_t count = 1);
  /// Recomputes the cached entropies; call after the last add().
  void finalize();

  friend bool operator==(const EntropyIndex& a, const EntropyIndex& b) {
    return a.orders_ == b.orders_ && a.n_items_ == b.n_items_ && a.tables_ == b.tables_;
  }

 private:
  std::vector<std::size_t> orders_;
  std::size_t n_items_ = 0;
  std::map<std::size_t, std::map<PatternKey, CountMap>> tables_;
  std::map<PatternKey, double> entropy_;
};

struct PenaltyConfig {
  double lambda1 = 0.0;  // uncertainty weight
  double lambda2 = 0.0;  // entropy weight
  std::vector<std::size_t> orders{1, 2, 3};

  void validate() const;
  friend bool operator==(const PenaltyConfig&, const PenaltyConfig&) = default;
};

EntropyIndex build_entropy_index(const LogTable& logs, const std::vector<std::size_t>& orders);

/// Shannon entropy of the empirical distribution divided by ln(#distinct);
/// zero when a single next item was observed.
double normalized_entropy(const CountMap& counts);

/// Sum over orders of the normalized entropy at the pattern formed by the last
/// k recent items (most recent last). Unseen patterns and too-short histories
/// contribute 0.
double entropy_penalty(const EntropyIndex& index, std::span<const std::size_t> recent_items);

/// r̃ = r̂ − λ₁·P_U + λ₂·P_E
double modified_reward(double r_hat, double p_u, double p_e, const PenaltyConfig& cfg);

/// Shannon entropy in nats with 0·ln 0 = 0.
double shannon_entropy(std::span<const double> dist);

/// D_KL(p || uniform) over |p| actions. Throws if p is not a distribution.
double kl_to_uniform(std::span<const double> dist);

/// Debug dump: {"version", "orders", "n_items", "counts": {"k/i,j,.../next": count}}.
void save_entropy_index(const std::filesystem::path& path, const EntropyIndex& index,
                        const std::string& config_hash = "", std::uint64_t seed = 0);
EntropyIndex load_entropy_index(const std::filesystem::path& path);

}  // namespace dorl
