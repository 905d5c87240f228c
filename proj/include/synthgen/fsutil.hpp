#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace synthgen {

std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename(2), so readers see either the
/// old content or the new content, never a prefix.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace synthgen
