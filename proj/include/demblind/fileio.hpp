#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace demblind {

/// Writes `contents` to a sibling temporary file and renames it into place.
/// Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Whole-file read. Throws IoError.
std::string read_file(const std::filesystem::path& path);

}  // namespace demblind
