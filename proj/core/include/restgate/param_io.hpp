#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "restgate/tensor.hpp"

namespace restgate {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Manifest is JSON text: {"dtype":"f64le","tensors":[{"name","shape","offset","bytes"}...]}.
// The blob holds every tensor's values back to back as little-endian float64.
struct ParameterBundle {
  std::string manifest;
  std::vector<std::uint8_t> blob;
};

ParameterBundle serialize_parameters(std::span<const NamedTensor> tensors);

// Throws FormatError on a malformed manifest or a blob that does not match it.
std::vector<NamedTensor> deserialize_parameters(const std::string& manifest,
                                                std::span<const std::uint8_t> blob);

// `<prefix>.manifest.json` and `<prefix>.bin`.
void save_parameters(const std::string& prefix, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_parameters(const std::string& prefix);

}  // namespace restgate
