#pragma once

#include <functional>
#include <string>
#include <vector>

#include "restgate/data.hpp"
#include "restgate/models.hpp"
#include "restgate/train.hpp"
#include "restgate/tsne.hpp"

namespace restgate::cli {

// Everything a subcommand can be configured with. Keys are dotted
// (`train.epochs`); a config file may nest them as objects.
struct RunConfig {
  data::SynthConfig synth;
  double probe_seconds = 0.0;
  std::uint64_t probe_seed = 1;
  train::PreprocessConfig preprocess;
  train::TrainConfig train;
  gate::GateConfig gate;
  models::ClassifierConfig classifier;
  tsne::TsneConfig tsne;
  std::size_t filter_points = 512;
};

struct Setting {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;  // throws ConfigError
};

const std::vector<Setting>& settings();
const Setting* find_setting(const std::string& key);

// Applies a JSON config document. Unknown keys and ill-typed values throw ConfigError.
void apply_config_text(RunConfig& config, const std::string& text);

// Every key with its value, one `key = value` per line, in registry order.
std::string describe(const RunConfig& config);

}  // namespace restgate::cli
