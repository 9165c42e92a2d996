#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace polylean::io {

/// Whole-file read; throws IoFailure.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written report. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

} // namespace polylean::io
