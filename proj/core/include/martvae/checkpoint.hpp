#pragma once

#include "martvae/model.hpp"

#include <filesystem>
#include <string>

namespace martvae {

inline constexpr int kCheckpointFormatVersion = 1;

/// JSON form of ModelConfig (all fields, variant as its CLI spelling).
std::string model_config_to_json(const ModelConfig& cfg);
/// Fields absent from `text` keep their value from `defaults`.
ModelConfig model_config_from_json(const std::string& text, ModelConfig defaults = {});

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

/// Layout documented in docs/checkpoint_format.md.
void save_checkpoint(const ModelConfig& cfg, ModelParams& params, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace martvae
