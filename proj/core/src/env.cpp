#include "dorl/env.hpp"

#include <algorithm>
#include <string>

#include "dorl/error.hpp"

namespace dorl {

std::string_view to_string(TerminationReason reason) noexcept {
  switch (reason) {
    case TerminationReason::none: return "none";
    case TerminationReason::quit_rule: return "quit_rule";
    case TerminationReason::max_rounds: return "max_rounds";
  }
  return "unknown";
}

std::vector<bool> EnvState::allowed_mask(std::size_t n_items) const {
  std::vector<bool> mask(n_items, true);
  for (const auto& h : history) mask[h.item_id] = false;
  return mask;
}

bool EnvState::contains(std::size_t item) const noexcept {
  return std::any_of(history.begin(), history.end(), [item](const auto& h) { return h.item_id == item; });
}

EnvState reset(const WorldSpec& world, std::size_t user_id) {
  if (user_id >= world.n_users) {
    throw ValidationError("user " + std::to_string(user_id) + " out of range (n_users=" +
                          std::to_string(world.n_users) + ")");
  }
  EnvState s;
  s.user_id = user_id;
  return s;
}

bool should_quit(std::span<const std::size_t> recent_categories, std::size_t current_category, const QuitRule& rule) {
  if (!rule.enabled()) return false;
  const auto n = std::min(rule.window, recent_categories.size());
  const auto window = recent_categories.last(n);
  const auto count = static_cast<std::size_t>(std::count(window.begin(), window.end(), current_category));
  return count > rule.tolerance;
}

StepResult step(const WorldSpec& world, EnvState state, std::size_t item_id) {
  if (state.terminated) throw ValidationError("step called on a terminated episode");
  if (item_id >= world.n_items) throw ValidationError("item " + std::to_string(item_id) + " out of range");
  if (state.contains(item_id)) {
    throw ValidationError("item " + std::to_string(item_id) + " was already recommended in this episode");
  }

  const std::size_t category = world.item_category[item_id];
  const double reward = world.pref(state.user_id, item_id);

  const auto& rule = world.quit_rule;
  std::vector<std::size_t> recent;
  const auto n = std::min(rule.window, state.history.size());
  recent.reserve(n);
  for (auto it = state.history.end() - static_cast<std::ptrdiff_t>(n); it != state.history.end(); ++it) {
    recent.push_back(it->category_id);
  }
  const bool quit = should_quit(recent, category, rule);

  state.history.push_back({item_id, reward, category});
  if (quit) {
    state.reason = TerminationReason::quit_rule;
  } else if (state.history.size() >= world.max_rounds) {
    state.reason = TerminationReason::max_rounds;
  }
  state.terminated = state.reason != TerminationReason::none;
  StepResult out{std::move(state), reward, false, TerminationReason::none};
  out.done = out.state.terminated;
  out.reason = out.state.reason;
  return out;
}

}  // namespace dorl
