#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace polylean {

/// UTC epoch seconds. All day arithmetic uses 86,400-second days.
using Timestamp = std::int64_t;

inline constexpr Timestamp kSecondsPerDay = 86'400;

/// Accepts `YYYY-MM-DD`, `YYYY-MM-DDTHH:MM[:SS]` with optional `Z` or
/// `+HH:MM`/`-HH:MM` offset, or a bare integer epoch.
std::optional<Timestamp> parse_time(std::string_view text);

/// `YYYY-MM-DDTHH:MM:SSZ`.
std::string format_time(Timestamp t);

Timestamp floor_to_day(Timestamp t);

} // namespace polylean
