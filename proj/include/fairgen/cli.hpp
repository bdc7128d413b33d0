#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fairgen::cli {

inline constexpr const char* kVersion = "0.1.0";

// Exit codes: 0 success, 2 usage/config error, 3 numerical abort.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

// Every output directory gets exactly one manifest.json describing the run.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string timestamp;  // ISO 8601 UTC; the only non-reproducible field
  double wall_clock_seconds = 0.0;
  std::string extra_json;  // optional per-command stats, serialized JSON object
};

void write_manifest(const RunManifest& manifest, const std::filesystem::path& out_dir);

}  // namespace fairgen::cli
