#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "restgate/models.hpp"
#include "restgate/train.hpp"

namespace restgate {

// Container: "EEGMODL1", u32le header length, JSON header, then the f64le
// parameter blob described by the header's manifest.
struct ModelFile {
  models::IntegratedModel model;
  train::TrainConfig train_config;
  train::PreprocessConfig preprocess;
  std::optional<int> holdout_subject;
  std::uint64_t config_hash = 0;
};

std::string train_config_json(const train::TrainConfig& config, const train::PreprocessConfig& preprocess);
std::uint64_t train_config_hash(const train::TrainConfig& config, const train::PreprocessConfig& preprocess);

std::vector<std::uint8_t> encode_model(const ModelFile& file);
ModelFile decode_model(std::span<const std::uint8_t> bytes);

void save_model(const ModelFile& file, const std::string& path);
ModelFile load_model(const std::string& path);

}  // namespace restgate
