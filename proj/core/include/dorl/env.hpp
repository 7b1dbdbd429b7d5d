#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "dorl/data.hpp"
#include "dorl/quit_rule.hpp"

namespace dorl {

enum class TerminationReason { none, quit_rule, max_rounds };

std::string_view to_string(TerminationReason reason) noexcept;

struct HistoryEntry {
  std::size_t item_id = 0;
  double reward = 0.0;
  std::size_t category_id = 0;

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

struct EnvState {
  std::size_t user_id = 0;
  std::vector<HistoryEntry> history;
  bool terminated = false;
  TerminationReason reason = TerminationReason::none;

  /// True for items that may still be recommended (not yet in history).
  [[nodiscard]] std::vector<bool> allowed_mask(std::size_t n_items) const;
  [[nodiscard]] bool contains(std::size_t item) const noexcept;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
  TerminationReason reason = TerminationReason::none;
};

EnvState reset(const WorldSpec& world, std::size_t user_id);

/// `recent_categories` are the previous recommendations' categories, most
/// recent last; only the last `rule.window` of them are inspected.
bool should_quit(std::span<const std::size_t> recent_categories, std::size_t current_category, const QuitRule& rule);

/// Serves the ground-truth reward of `item_id`, applies the quit rule against
/// the history before appending, and terminates on quit or on max_rounds.
StepResult step(const WorldSpec& world, EnvState state, std::size_t item_id);

}  // namespace dorl
