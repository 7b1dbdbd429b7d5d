#pragma once

#include <cstddef>

namespace dorl {

/// Category-boredom exit rule: the session ends when the current item's
/// category already occurs more than `tolerance` times among the previous
/// `window` recommendations. `window == 0` disables the rule.
struct QuitRule {
  std::size_t window = 4;
  std::size_t tolerance = 0;

  [[nodiscard]] bool enabled() const noexcept { return window > 0; }
  friend bool operator==(const QuitRule&, const QuitRule&) = default;
};

}  // namespace dorl
