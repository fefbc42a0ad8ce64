#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "tdir/model.hpp"

namespace tdir {

/// Binary layout (little-endian):
///   "TDIR" | u32 version | u32 len, ModelConfig text | u32 tensor count |
///   per tensor in name order: u32 name len, name, u32 ndim, u32 dims...,
///   f32 values... | u32 len, metadata text (sorted key=value lines)
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t format_version = kFormatVersion;
  ModelConfig config;
  ModelParams params;
  std::map<std::string, std::string> metadata;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tdir
