#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace medagent {

/// Writes to "<path>.tmp" and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

std::string trim(std::string_view s);
std::string to_lower(std::string s);
/// Splits on `sep` and trims each piece; empty pieces are dropped.
std::vector<std::string> split_list(std::string_view s, char sep = ',');
std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace medagent
