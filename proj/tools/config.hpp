#pragma once

#include "martvae/classifier.hpp"
#include "martvae/evaluation.hpp"
#include "martvae/preprocess.hpp"
#include "martvae/synthetic.hpp"
#include "martvae/training.hpp"

#include <json.hpp>

#include <filesystem>

namespace martvae::cli {

using nlohmann::json;

/// Parsed --config document; every section is optional.
json load_config(const std::filesystem::path& path);

// Each apply_* overwrites the fields present in `section` and leaves the rest alone.
// Unknown keys raise ConfigError naming the key.
void apply(const json& section, SyntheticDatasetConfig& c);
void apply(const json& section, TrainConfig& c);
void apply(const json& section, LossWeights& c);
void apply(const json& section, ClassifierConfig& c);
void apply(const json& section, FilterParams& c);
void apply(const json& section, EvalConfig& c);
void apply(const json& section, ModelConfig& c);

json to_json(const SyntheticDatasetConfig& c);
json to_json(const TrainConfig& c);
json to_json(const LossWeights& c);
json to_json(const ClassifierConfig& c);
json to_json(const FilterParams& c);
json to_json(const EvalConfig& c);
json to_json(const ModelConfig& c);

}  // namespace martvae::cli
