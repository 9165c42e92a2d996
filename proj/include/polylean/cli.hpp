#pragma once

#include <iosfwd>

namespace polylean::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitInternal = 2;

/// Entry point for the `polylean` executable. Reports go to files; usage and
/// diagnostics go to `err`, version and help text to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace polylean::cli
