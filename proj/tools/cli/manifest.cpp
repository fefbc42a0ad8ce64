#include "manifest.hpp"

#include <stdexcept>

#include "json.hpp"
#include "tdir/io.hpp"

namespace tdir::cli {

using nlohmann::json;

std::string RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["flags"] = flags;
  j["seeds"] = seeds;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["tool_version"] = tool_version;
  j["duration_seconds"] = duration_seconds;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.flags = j.at("flags").get<std::map<std::string, std::string>>();
    if (j.contains("seeds")) m.seeds = j["seeds"].get<std::map<std::string, std::uint64_t>>();
    if (j.contains("inputs")) m.inputs = j["inputs"].get<std::vector<std::string>>();
    if (j.contains("outputs")) m.outputs = j["outputs"].get<std::vector<std::string>>();
    if (j.contains("tool_version")) m.tool_version = j["tool_version"].get<std::string>();
    if (j.contains("duration_seconds")) m.duration_seconds = j["duration_seconds"].get<double>();
    return m;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed run manifest: ") + e.what());
  }
}

std::vector<std::string> RunManifest::replay_args(const std::string& out_override) const {
  std::vector<std::string> args{command};
  for (const auto& [name, value] : flags) {
    const std::string& v = (name == "out" && !out_override.empty()) ? out_override : value;
    if (v.empty()) continue;  // unset optional flag
    args.push_back("--" + name + "=" + v);
  }
  return args;
}

void write_manifest(const RunManifest& m, const std::filesystem::path& dir) {
  write_file_atomic(dir / kRunManifestName, m.to_json());
}

RunManifest read_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::invalid_argument("run manifest not found: " + path.string());
  return RunManifest::from_json(read_file(path));
}

}  // namespace tdir::cli
