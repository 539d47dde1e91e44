#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>

#include "msdnet/config.hpp"
#include "msdnet/dataset.hpp"
#include "msdnet/trainer.hpp"

namespace msdnet {

// Where the data comes from: a dataset file pair when `images` is set,
// otherwise a freshly generated easy/hard mixture.
struct DataConfig {
  std::string images;
  std::string labels;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  std::size_t image_size = 16;
  double hard_fraction = 0.4;
  std::uint64_t seed = 0;
  MixtureParams mixture;
};

// {"version": 1, "network": {...}, "training": {...}, "data": {...}}
struct ExperimentConfig {
  NetworkConfig network;
  TrainConfig training;
  DataConfig data;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
// Relative dataset paths resolve against the config file's directory.
ExperimentConfig load_experiment_config(const std::string& path);

Dataset make_dataset(const DataConfig& data);

}  // namespace msdnet
