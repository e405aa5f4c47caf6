#pragma once

#include <filesystem>
#include <optional>

#include "hidformer/config.hpp"
#include "hidformer/model.hpp"

namespace hidformer::training {

struct Checkpoint {
  RunConfig config;
  model::ModelParams params;
};

/// Writes `manifest.txt`, `weights.bin` (little-endian f64 in manifest order)
/// and `config.txt` into `dir`, creating it if needed.
void save_checkpoint(const model::ModelParams& params, const RunConfig& config,
                     const std::filesystem::path& dir);

/// Reads a checkpoint directory. Throws CorruptionError when the manifest,
/// weights and config disagree. When `expected` is given its model and window
/// keys must match the stored config (ConfigError otherwise).
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           const std::optional<RunConfig>& expected = std::nullopt);

}  // namespace hidformer::training
