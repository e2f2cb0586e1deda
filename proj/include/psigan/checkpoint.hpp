#pragma once

#include <filesystem>
#include <string>

#include "psigan/trainer.hpp"

namespace psigan::ckpt {

inline constexpr int kSchemaVersion = 1;

// Versioned container: named parameter groups, optimizer states, RNG states,
// config copy + hash, counters. Written atomically (temp file then rename).
void save_checkpoint(const train::TrainState& state, const std::filesystem::path& path);

// Rebuilds the state from the embedded config. If expected_config_hash is
// non-empty and differs from the stored hash, refuses unless force.
train::TrainState load_checkpoint(const std::filesystem::path& path,
                                  const std::string& expected_config_hash = "",
                                  bool force = false);

std::string checkpoint_config_hash(const std::filesystem::path& path);

}  // namespace psigan::ckpt
