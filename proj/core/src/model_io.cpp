#include "restgate/model_io.hpp"

#include <cstdio>
#include <cstring>
#include <map>

#include <json.hpp>

#include "restgate/errors.hpp"
#include "restgate/io.hpp"

namespace restgate {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'E', 'E', 'G', 'M', 'O', 'D', 'L', '1'};

json gate_json(const gate::GateConfig& c) {
  return {{"channels", c.channels},
          {"fs", c.fs},
          {"dropout", c.dropout},
          {"center", c.center == gate::CenterMode::PostSpatial ? "post_spatial" : "pre_spatial"},
          {"bn_eps", c.bn_eps},
          {"bn_momentum", c.bn_momentum}};
}

json classifier_json(const models::ClassifierConfig& c) {
  return {{"channels", c.channels},           {"samples", c.samples},
          {"n_classes", c.n_classes},         {"kernels", c.kernels},
          {"temporal_length", c.temporal_length}, {"pool_window", c.pool_window},
          {"pool_stride", c.pool_stride},     {"dropout", c.dropout},
          {"bn_eps", c.bn_eps},               {"bn_momentum", c.bn_momentum}};
}

gate::GateConfig gate_from(const json& j) {
  gate::GateConfig c;
  c.channels = j.at("channels").get<std::size_t>();
  c.fs = j.at("fs").get<double>();
  c.dropout = j.at("dropout").get<double>();
  const auto center = j.at("center").get<std::string>();
  if (center == "post_spatial")
    c.center = gate::CenterMode::PostSpatial;
  else if (center == "pre_spatial")
    c.center = gate::CenterMode::PreSpatial;
  else
    throw FormatError(FormatError::Kind::BadHeader, "model: unknown center mode '" + center + "'");
  c.bn_eps = j.at("bn_eps").get<double>();
  c.bn_momentum = j.at("bn_momentum").get<double>();
  return c;
}

models::ClassifierConfig classifier_from(const json& j) {
  models::ClassifierConfig c;
  c.channels = j.at("channels").get<std::size_t>();
  c.samples = j.at("samples").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.kernels = j.at("kernels").get<std::size_t>();
  c.temporal_length = j.at("temporal_length").get<std::size_t>();
  c.pool_window = j.at("pool_window").get<std::size_t>();
  c.pool_stride = j.at("pool_stride").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.bn_eps = j.at("bn_eps").get<double>();
  c.bn_momentum = j.at("bn_momentum").get<double>();
  return c;
}

json train_json(const train::TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"lr", c.lr},       {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},         {"eta_min", c.eta_min}, {"beta1", c.beta1},
          {"beta2", c.beta2},           {"adam_eps", c.adam_eps}, {"seed", c.seed},
          {"use_gate", c.use_gate}};
}

json preprocess_json(const train::PreprocessConfig& c) {
  return {{"filter_order", c.filter_order}, {"f_lo", c.f_lo},           {"f_hi", c.f_hi},
          {"zero_phase", c.zero_phase},     {"ems_alpha", c.ems_alpha}, {"ems_eps", c.ems_eps}};
}

train::TrainConfig train_from(const json& j) {
  train::TrainConfig c;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.eta_min = j.at("eta_min").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.use_gate = j.at("use_gate").get<bool>();
  return c;
}

train::PreprocessConfig preprocess_from(const json& j) {
  train::PreprocessConfig c;
  c.filter_order = j.at("filter_order").get<int>();
  c.f_lo = j.at("f_lo").get<double>();
  c.f_hi = j.at("f_hi").get<double>();
  c.zero_phase = j.at("zero_phase").get<bool>();
  c.ems_alpha = j.at("ems_alpha").get<double>();
  c.ems_eps = j.at("ems_eps").get<double>();
  return c;
}

std::vector<NamedTensor> stored_tensors(const models::IntegratedModel& m) {
  auto out = m.parameters();
  for (auto& b : m.buffers()) out.push_back(std::move(b));
  return out;
}

// Maps every stored buffer name to the vector it lives in.
std::map<std::string, std::vector<double>*> buffer_slots(models::IntegratedModel& m) {
  std::map<std::string, std::vector<double>*> slots{
      {"classifier.bn.running_mean", &m.classifier.bn.running_mean},
      {"classifier.bn.running_var", &m.classifier.bn.running_var}};
  if (m.use_gate) {
    slots["gate.temporal.bn.running_mean"] = &m.gate.bn_temporal.running_mean;
    slots["gate.temporal.bn.running_var"] = &m.gate.bn_temporal.running_var;
    slots["gate.spatial.bn.running_mean"] = &m.gate.bn_spatial.running_mean;
    slots["gate.spatial.bn.running_var"] = &m.gate.bn_spatial.running_var;
  }
  return slots;
}

}  // namespace

std::string train_config_json(const train::TrainConfig& config, const train::PreprocessConfig& preprocess) {
  return json{{"train", train_json(config)}, {"preprocess", preprocess_json(preprocess)}}.dump();
}

std::uint64_t train_config_hash(const train::TrainConfig& config, const train::PreprocessConfig& preprocess) {
  return fnv1a64(train_config_json(config, preprocess));
}

std::vector<std::uint8_t> encode_model(const ModelFile& file) {
  const auto tensors = stored_tensors(file.model);
  const auto bundle = serialize_parameters(tensors);
  const json header{
      {"use_gate", file.model.use_gate},
      {"gate", gate_json(file.model.gate.config)},
      {"classifier", classifier_json(file.model.classifier.config)},
      {"train", train_json(file.train_config)},
      {"preprocess", preprocess_json(file.preprocess)},
      {"config_hash", hex64(train_config_hash(file.train_config, file.preprocess))},
      {"holdout_subject", file.holdout_subject ? json(*file.holdout_subject) : json(nullptr)},
      {"parameter_count", file.model.parameter_count()},
      {"manifest", json::parse(bundle.manifest)}};
  const auto text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u32le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bundle.blob.begin(), bundle.blob.end());
  return out;
}

ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  using Kind = FormatError::Kind;
  if (bytes.size() < 8) throw FormatError(Kind::Truncated, "model: file shorter than its magic");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError(Kind::BadMagic, "model: bad magic");
  if (bytes.size() < 12) throw FormatError(Kind::Truncated, "model: missing header length");
  const std::size_t header_len = get_u32le(bytes.data() + 8);
  if (bytes.size() - 12 < header_len) throw FormatError(Kind::Truncated, "model: header is truncated");

  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw FormatError(Kind::BadHeader, std::string("model: header is not valid JSON: ") + e.what());
  }

  std::optional<ModelFile> parsed;
  std::vector<NamedTensor> stored;
  try {
    models::ModelConfig config{gate_from(header.at("gate")), classifier_from(header.at("classifier")),
                               header.at("use_gate").get<bool>()};
    parsed.emplace(ModelFile{models::IntegratedModel::init(config, 0), {}, {}, std::nullopt, 0});
    auto& file = *parsed;
    file.train_config = train_from(header.at("train"));
    file.preprocess = preprocess_from(header.at("preprocess"));
    const auto& holdout = header.at("holdout_subject");
    if (!holdout.is_null()) file.holdout_subject = holdout.get<int>();
    file.config_hash = std::stoull(header.at("config_hash").get<std::string>(), nullptr, 16);
    stored = deserialize_parameters(header.at("manifest").dump(), bytes.subspan(12 + header_len));
  } catch (const json::exception& e) {
    throw FormatError(Kind::BadHeader, std::string("model: malformed header: ") + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(Kind::BadHeader, std::string("model: malformed header: ") + e.what());
  }

  auto& file = *parsed;
  std::map<std::string, Tensor> by_name;
  for (auto& t : stored) by_name.emplace(t.name, t.tensor);
  const auto expected = stored_tensors(file.model);
  if (by_name.size() != expected.size() || stored.size() != expected.size())
    throw FormatError(Kind::SizeMismatch, "model: stored tensor set does not match the model layout");

  auto slots = buffer_slots(file.model);
  for (const auto& [name, target] : expected) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(Kind::SizeMismatch, "model: missing tensor " + name);
    if (it->second.shape() != target.shape())
      throw FormatError(Kind::SizeMismatch, "model: tensor " + name + " has shape " +
                                                shape_str(it->second.shape()) + ", expected " +
                                                shape_str(target.shape()));
    const auto src = it->second.data();
    if (const auto slot = slots.find(name); slot != slots.end()) {
      slot->second->assign(src.begin(), src.end());
    } else {
      auto dst = Tensor(target).mutable_data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  return file;
}

void save_model(const ModelFile& file, const std::string& path) { atomic_write(path, encode_model(file)); }

ModelFile load_model(const std::string& path) { return decode_model(read_file(path)); }

}  // namespace restgate
