#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace polylean::csv {

/// RFC 4180 field split of one physical line. Returns nullopt on unbalanced
/// or misplaced quotes. Embedded newlines are not supported.
std::optional<std::vector<std::string>> split(std::string_view line);

/// Quotes the field when it contains a comma, quote or line break.
std::string escape(std::string_view field);

} // namespace polylean::csv
