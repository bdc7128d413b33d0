#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace fairgen {

// Writes via a temp file in the same directory plus rename, so interrupted
// runs never leave torn outputs.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace fairgen
