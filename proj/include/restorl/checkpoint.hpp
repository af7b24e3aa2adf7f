#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "restorl/model.hpp"
#include "restorl/optimizer.hpp"

namespace restorl {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// Full training snapshot. Save followed by load followed by save produces
// byte-identical files.
struct Checkpoint {
  std::uint32_t format_version = kCheckpointFormatVersion;
  ModelParams params;
  OptimizerState opt;
  std::string schedule_hash;
  std::uint64_t train_step = 0;
  std::string rng_state;
  std::string config_json;  // resolved config snapshot
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Throws on missing file, corrupt payload, or format-version mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace restorl
