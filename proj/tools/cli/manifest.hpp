#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tdir::cli {

inline constexpr const char* kRunManifestName = "run_manifest.json";

/// Written next to every command's outputs. `flags` holds every flag of the
/// command with its resolved value, so replaying it needs nothing else.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> flags;  // long name without dashes → value
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string tool_version;
  double duration_seconds = 0.0;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);

  /// Command line that reproduces the run; `out_override` replaces --out.
  std::vector<std::string> replay_args(const std::string& out_override = {}) const;
};

void write_manifest(const RunManifest& m, const std::filesystem::path& dir);
RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace tdir::cli
