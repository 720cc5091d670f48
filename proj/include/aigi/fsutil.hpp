#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace aigi {

/// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Creates the directory if needed and probes that it accepts new files.
void ensure_writable_dir(const std::filesystem::path& dir);

}  // namespace aigi
