#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace hidformer::io {

/// Shortest-stable text form used by every file output: 17 significant
/// digits, '.' decimal separator, independent of the global locale.
std::string format_double(double value);

/// Writes `contents` verbatim (LF line endings preserved). Throws DataError
/// tagged with `module` when the file cannot be written.
void write_text_file(const std::filesystem::path& path, std::string_view contents,
                     const std::string& module);

std::string read_text_file(const std::filesystem::path& path, const std::string& module);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace hidformer::io
