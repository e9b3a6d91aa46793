#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpnet/dataset.hpp"
#include "mpnet/model.hpp"
#include "mpnet/train.hpp"

namespace mpnet {

/// Sectioned key=value text. '#' starts a comment; keys are unique within
/// a section. Unknown sections/keys are rejected by the typed loaders.
using IniData = std::map<std::string, std::map<std::string, std::string>>;

IniData parse_ini(const std::string& text);
std::string ini_to_text(const IniData& data);

/// Everything needed to reproduce one experiment run. Serialized into the
/// output directory at run start; a rerun from that file with the same
/// seed reproduces the results.
struct ExperimentConfig {
  // [run]
  std::string name = "run";
  std::string out = "out";
  int threads = 1;

  // [model]
  int64_t paths = 2;
  ModelMode mode = ModelMode::adaptive;
  int64_t classes = 10;
  int64_t gate_hidden = 16;

  // [train]
  TrainConfig train;

  // [data]
  std::string source = "synthetic";  // synthetic | cifar10 | file
  std::string data_path;             // cifar10 directory or dataset file
  double val_fraction = 0.2;
  SyntheticContextSpec synth;

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& text);
std::string experiment_config_to_text(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::string& path);

/// Train/val datasets plus train-split normalization stats, assembled per
/// the [data] section.
struct PreparedData {
  Dataset train;
  Dataset val;
  ChannelStats stats;
};
PreparedData prepare_data(const ExperimentConfig& cfg);

/// Model spec per the [model] section, with input dims taken from the
/// dataset.
ModelSpec model_spec_from_config(const ExperimentConfig& cfg, const Dataset& sample);

}  // namespace mpnet
