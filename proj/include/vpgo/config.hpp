#pragma once

// JSON form of the model and training configs. Unknown keys and wrongly typed
// values raise ConfigError naming the dotted key path.

#include "vpgo/model.hpp"
#include "vpgo/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace vpgo::config {

using Json = nlohmann::ordered_json;

Json to_json(const model::ModelConfig& cfg);
Json to_json(const training::TrainConfig& cfg);

// Missing keys keep their defaults.
model::ModelConfig parse_model_config(const Json& j, const std::string& prefix = "model");
training::TrainConfig parse_train_config(const Json& j, const std::string& prefix = "train");

// {"model": {...}, "train": {...}}
struct ExperimentConfig {
    model::ModelConfig model;
    training::TrainConfig train;
};

Json to_json(const ExperimentConfig& cfg);
ExperimentConfig parse_experiment_config(const Json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace vpgo::config
