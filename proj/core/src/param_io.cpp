#include "restgate/param_io.hpp"

#include <json.hpp>

#include "restgate/errors.hpp"
#include "restgate/io.hpp"

namespace restgate {

using nlohmann::json;

ParameterBundle serialize_parameters(std::span<const NamedTensor> tensors) {
  ParameterBundle bundle;
  json entries = json::array();
  for (const auto& [name, tensor] : tensors) {
    const std::size_t offset = bundle.blob.size();
    for (double v : tensor.values()) put_f64le(bundle.blob, v);
    entries.push_back({{"name", name},
                       {"shape", tensor.shape()},
                       {"offset", offset},
                       {"bytes", tensor.numel() * 8}});
  }
  json manifest = {{"dtype", "f64le"}, {"tensors", entries}};
  bundle.manifest = manifest.dump(2);
  return bundle;
}

std::vector<NamedTensor> deserialize_parameters(const std::string& manifest_text,
                                                std::span<const std::uint8_t> blob) {
  json manifest;
  try {
    manifest = json::parse(manifest_text);
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::BadHeader, std::string("parameter manifest: ") + e.what());
  }
  if (!manifest.is_object() || manifest.value("dtype", "") != "f64le" ||
      !manifest.contains("tensors") || !manifest["tensors"].is_array())
    throw FormatError(FormatError::Kind::BadHeader, "parameter manifest: missing dtype or tensors");

  std::vector<NamedTensor> out;
  std::size_t expected_end = 0;
  try {
    for (const auto& e : manifest["tensors"]) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto bytes = e.at("bytes").get<std::size_t>();
      if (bytes != shape_numel(shape) * 8)
        throw FormatError(FormatError::Kind::SizeMismatch,
                          "parameter " + name + ": byte count disagrees with shape");
      if (offset + bytes > blob.size())
        throw FormatError(FormatError::Kind::Truncated, "parameter " + name + " runs past the blob");
      std::vector<double> values(shape_numel(shape));
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_f64le(&blob[offset + 8 * i]);
      out.push_back({name, Tensor(shape, std::move(values))});
      expected_end = std::max(expected_end, offset + bytes);
    }
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::BadHeader, std::string("parameter manifest: ") + e.what());
  }
  if (expected_end != blob.size())
    throw FormatError(FormatError::Kind::SizeMismatch, "parameter blob has trailing bytes");
  return out;
}

void save_parameters(const std::string& prefix, std::span<const NamedTensor> tensors) {
  const auto bundle = serialize_parameters(tensors);
  atomic_write(prefix + ".bin", bundle.blob);
  atomic_write(prefix + ".manifest.json", bundle.manifest);
}

std::vector<NamedTensor> load_parameters(const std::string& prefix) {
  const auto manifest = read_file(prefix + ".manifest.json");
  const auto blob = read_file(prefix + ".bin");
  return deserialize_parameters(std::string(manifest.begin(), manifest.end()), blob);
}

}  // namespace restgate
