#include "msdnet/experiment.hpp"

#include <filesystem>
#include <fstream>

#include "json_fields.hpp"
#include "msdnet/errors.hpp"
#include "msdnet/serialization.hpp"

namespace msdnet {

using nlohmann::json;
using jsonf::get_field;
using jsonf::get_optional;
using jsonf::reject_unknown;

namespace {

TrainConfig training_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config field 'training': must be an object");
  reject_unknown(j,
                 {"epochs", "batch_size", "learning_rate", "lr_drops", "lr_factor", "momentum", "weight_decay",
                  "loss_weights", "seed"},
                 "training");
  TrainConfig t;
  t.epochs = get_optional<int>(j, "epochs", t.epochs, "training.epochs");
  t.batch_size = get_optional<std::size_t>(j, "batch_size", t.batch_size, "training.batch_size");
  t.learning_rate = get_optional<double>(j, "learning_rate", t.learning_rate, "training.learning_rate");
  t.lr_drops = get_optional<std::vector<int>>(j, "lr_drops", t.lr_drops, "training.lr_drops");
  t.lr_factor = get_optional<double>(j, "lr_factor", t.lr_factor, "training.lr_factor");
  t.momentum = get_optional<double>(j, "momentum", t.momentum, "training.momentum");
  t.weight_decay = get_optional<double>(j, "weight_decay", t.weight_decay, "training.weight_decay");
  t.loss_weights = get_optional<std::vector<double>>(j, "loss_weights", t.loss_weights, "training.loss_weights");
  t.seed = get_optional<std::uint64_t>(j, "seed", t.seed, "training.seed");
  t.validate();
  return t;
}

DataConfig data_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config field 'data': must be an object");
  reject_unknown(j,
                 {"images", "labels", "n_train", "n_val", "n_test", "image_size", "hard_fraction", "seed",
                  "mixture"},
                 "data");
  DataConfig d;
  d.images = get_optional<std::string>(j, "images", d.images, "data.images");
  d.labels = get_optional<std::string>(j, "labels", d.labels, "data.labels");
  if (d.images.empty() != d.labels.empty()) {
    jsonf::field_error("data", "'images' and 'labels' must be given together");
  }
  d.n_train = get_optional<std::size_t>(j, "n_train", d.n_train, "data.n_train");
  d.n_val = get_optional<std::size_t>(j, "n_val", d.n_val, "data.n_val");
  d.n_test = get_optional<std::size_t>(j, "n_test", d.n_test, "data.n_test");
  d.image_size = get_optional<std::size_t>(j, "image_size", d.image_size, "data.image_size");
  d.hard_fraction = get_optional<double>(j, "hard_fraction", d.hard_fraction, "data.hard_fraction");
  d.seed = get_optional<std::uint64_t>(j, "seed", d.seed, "data.seed");
  if (j.contains("mixture")) {
    const json& m = j.at("mixture");
    if (!m.is_object()) jsonf::field_error("data.mixture", "must be an object");
    reject_unknown(m,
                   {"noise", "ramp_amplitude", "patch_size", "easy_stripe_amplitude", "hard_stripe_amplitude",
                    "distractors", "distractor_amplitude"},
                   "data.mixture");
    auto& p = d.mixture;
    p.noise = get_optional<double>(m, "noise", p.noise, "data.mixture.noise");
    p.ramp_amplitude = get_optional<double>(m, "ramp_amplitude", p.ramp_amplitude, "data.mixture.ramp_amplitude");
    p.patch_size = get_optional<std::size_t>(m, "patch_size", p.patch_size, "data.mixture.patch_size");
    p.easy_stripe_amplitude =
        get_optional<double>(m, "easy_stripe_amplitude", p.easy_stripe_amplitude, "data.mixture.easy_stripe_amplitude");
    p.hard_stripe_amplitude =
        get_optional<double>(m, "hard_stripe_amplitude", p.hard_stripe_amplitude, "data.mixture.hard_stripe_amplitude");
    p.distractors = get_optional<std::size_t>(m, "distractors", p.distractors, "data.mixture.distractors");
    p.distractor_amplitude =
        get_optional<double>(m, "distractor_amplitude", p.distractor_amplitude, "data.mixture.distractor_amplitude");
  }
  if (!(d.hard_fraction >= 0.0 && d.hard_fraction <= 1.0)) {
    jsonf::field_error("data.hard_fraction", "must lie in [0, 1]");
  }
  return d;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
  check_config_version(j, "experiment config");
  reject_unknown(j, {"version", "network", "training", "data"}, "");
  ExperimentConfig e;
  e.network = network_config_from_json(get_field<json>(j, "network", "network"));
  if (j.contains("training")) e.training = training_from_json(j.at("training"));
  if (j.contains("data")) e.data = data_from_json(j.at("data"));
  return e;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  ExperimentConfig e = experiment_config_from_json(j);
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).string();
  };
  resolve(e.data.images);
  resolve(e.data.labels);
  return e;
}

Dataset make_dataset(const DataConfig& data) {
  if (!data.images.empty()) return load_dataset(data.images, data.labels);
  Dataset ds = generate_mixture_dataset(data.n_train + data.n_val + data.n_test, data.image_size, data.hard_fraction,
                                        data.seed, data.mixture);
  assign_splits(ds, data.n_train, data.n_val);
  return ds;
}

}  // namespace msdnet
