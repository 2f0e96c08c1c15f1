#include "restgate/run_config.hpp"

#include <charconv>
#include <type_traits>

#include <json.hpp>

#include "restgate/errors.hpp"

namespace restgate::cli {

namespace {

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  }
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + text + "'");
  } else if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else {
    T v{};
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (text.empty() || res.ec != std::errc() || res.ptr != end)
      throw ConfigError(key + ": cannot parse '" + text + "'");
    return v;
  }
}

template <typename Access>
Setting make(std::string key, std::string help, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<RunConfig&>()))>;
  return Setting{key, std::move(help),
                 [access](const RunConfig& c) { return format_value(access(const_cast<RunConfig&>(c))); },
                 [access, key](RunConfig& c, const std::string& text) { access(c) = parse_value<T>(key, text); }};
}

Setting center_setting() {
  return Setting{"gate.center", "where the rest center vector is taken: post_spatial or pre_spatial",
                 [](const RunConfig& c) {
                   return std::string(c.gate.center == gate::CenterMode::PostSpatial ? "post_spatial"
                                                                                     : "pre_spatial");
                 },
                 [](RunConfig& c, const std::string& text) {
                   if (text == "post_spatial")
                     c.gate.center = gate::CenterMode::PostSpatial;
                   else if (text == "pre_spatial")
                     c.gate.center = gate::CenterMode::PreSpatial;
                   else
                     throw ConfigError("gate.center: expected post_spatial or pre_spatial, got '" + text + "'");
                 }};
}

std::vector<Setting> build() {
  std::vector<Setting> s;
  s.push_back(make("synth.n_subjects", "number of synthetic subjects", [](RunConfig& c) -> auto& { return c.synth.n_subjects; }));
  s.push_back(make("synth.trials_per_class", "trials per class and subject", [](RunConfig& c) -> auto& { return c.synth.trials_per_class; }));
  s.push_back(make("synth.channels", "electrode count", [](RunConfig& c) -> auto& { return c.synth.channels; }));
  s.push_back(make("synth.fs", "sampling rate in Hz", [](RunConfig& c) -> auto& { return c.synth.fs; }));
  s.push_back(make("synth.trial_seconds", "trial length in seconds", [](RunConfig& c) -> auto& { return c.synth.trial_seconds; }));
  s.push_back(make("synth.mu_frequency", "mu rhythm frequency in Hz", [](RunConfig& c) -> auto& { return c.synth.mu_frequency; }));
  s.push_back(make("synth.mu_amplitude", "mu rhythm standard deviation", [](RunConfig& c) -> auto& { return c.synth.mu_amplitude; }));
  s.push_back(make("synth.erd_depth", "fractional mu amplitude drop on the class group during MI", [](RunConfig& c) -> auto& { return c.synth.erd_depth; }));
  s.push_back(make("synth.noise_level", "pink background noise standard deviation", [](RunConfig& c) -> auto& { return c.synth.noise_level; }));
  s.push_back(make("synth.mixing_scale", "per-subject mixing perturbation scale", [](RunConfig& c) -> auto& { return c.synth.mixing_scale; }));
  s.push_back(make("synth.seed", "generator seed", [](RunConfig& c) -> auto& { return c.synth.seed; }));
  s.push_back(make("synth.probe_seconds", "length of the spliced rest probe (0 disables)", [](RunConfig& c) -> auto& { return c.probe_seconds; }));
  s.push_back(make("synth.probe_seed", "seed for probe placement and content", [](RunConfig& c) -> auto& { return c.probe_seed; }));
  s.push_back(make("preprocess.filter_order", "Butterworth prototype order", [](RunConfig& c) -> auto& { return c.preprocess.filter_order; }));
  s.push_back(make("preprocess.f_lo", "bandpass lower edge in Hz", [](RunConfig& c) -> auto& { return c.preprocess.f_lo; }));
  s.push_back(make("preprocess.f_hi", "bandpass upper edge in Hz", [](RunConfig& c) -> auto& { return c.preprocess.f_hi; }));
  s.push_back(make("preprocess.zero_phase", "filter forward and backward instead of causally", [](RunConfig& c) -> auto& { return c.preprocess.zero_phase; }));
  s.push_back(make("preprocess.ems_alpha", "moving standardization decay", [](RunConfig& c) -> auto& { return c.preprocess.ems_alpha; }));
  s.push_back(make("preprocess.ems_eps", "moving standardization std floor", [](RunConfig& c) -> auto& { return c.preprocess.ems_eps; }));
  s.push_back(make("train.batch_size", "mini-batch size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
  s.push_back(make("train.lr", "peak learning rate", [](RunConfig& c) -> auto& { return c.train.lr; }));
  s.push_back(make("train.weight_decay", "decoupled weight decay", [](RunConfig& c) -> auto& { return c.train.weight_decay; }));
  s.push_back(make("train.epochs", "training epochs (also the cosine horizon)", [](RunConfig& c) -> auto& { return c.train.epochs; }));
  s.push_back(make("train.eta_min", "final learning rate of the cosine schedule", [](RunConfig& c) -> auto& { return c.train.eta_min; }));
  s.push_back(make("train.beta1", "first-moment decay", [](RunConfig& c) -> auto& { return c.train.beta1; }));
  s.push_back(make("train.beta2", "second-moment decay", [](RunConfig& c) -> auto& { return c.train.beta2; }));
  s.push_back(make("train.adam_eps", "optimizer denominator epsilon", [](RunConfig& c) -> auto& { return c.train.adam_eps; }));
  s.push_back(make("train.seed", "seed for initialization, shuffling and dropout", [](RunConfig& c) -> auto& { return c.train.seed; }));
  s.push_back(make("gate.dropout", "dropout probability in the spatial block", [](RunConfig& c) -> auto& { return c.gate.dropout; }));
  s.push_back(center_setting());
  s.push_back(make("gate.bn_eps", "batch-norm std floor", [](RunConfig& c) -> auto& { return c.gate.bn_eps; }));
  s.push_back(make("gate.bn_momentum", "batch-norm running-stat momentum", [](RunConfig& c) -> auto& { return c.gate.bn_momentum; }));
  s.push_back(make("classifier.kernels", "temporal and spatial kernel count", [](RunConfig& c) -> auto& { return c.classifier.kernels; }));
  s.push_back(make("classifier.temporal_length", "temporal kernel length in samples", [](RunConfig& c) -> auto& { return c.classifier.temporal_length; }));
  s.push_back(make("classifier.pool_window", "average pooling window", [](RunConfig& c) -> auto& { return c.classifier.pool_window; }));
  s.push_back(make("classifier.pool_stride", "average pooling stride", [](RunConfig& c) -> auto& { return c.classifier.pool_stride; }));
  s.push_back(make("classifier.dropout", "dropout probability before the dense layer", [](RunConfig& c) -> auto& { return c.classifier.dropout; }));
  s.push_back(make("classifier.bn_eps", "batch-norm std floor", [](RunConfig& c) -> auto& { return c.classifier.bn_eps; }));
  s.push_back(make("classifier.bn_momentum", "batch-norm running-stat momentum", [](RunConfig& c) -> auto& { return c.classifier.bn_momentum; }));
  s.push_back(make("tsne.perplexity", "target perplexity", [](RunConfig& c) -> auto& { return c.tsne.perplexity; }));
  s.push_back(make("tsne.iterations", "gradient descent iterations", [](RunConfig& c) -> auto& { return c.tsne.iterations; }));
  s.push_back(make("tsne.learning_rate", "step size", [](RunConfig& c) -> auto& { return c.tsne.learning_rate; }));
  s.push_back(make("tsne.seed", "seed for the initial embedding", [](RunConfig& c) -> auto& { return c.tsne.seed; }));
  s.push_back(make("filter.points", "frequency samples in the response CSV", [](RunConfig& c) -> auto& { return c.filter_points; }));
  return s;
}

void flatten(const nlohmann::json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    const auto& v = it.value();
    if (v.is_object())
      flatten(v, key, out);
    else if (v.is_string())
      out.emplace_back(key, v.get<std::string>());
    else if (v.is_boolean() || v.is_number())
      out.emplace_back(key, v.dump());
    else
      throw ConfigError(key + ": unsupported value " + v.dump());
  }
}

}  // namespace

const std::vector<Setting>& settings() {
  static const std::vector<Setting> all = build();
  return all;
}

const Setting* find_setting(const std::string& key) {
  for (const auto& s : settings())
    if (s.key == key) return &s;
  return nullptr;
}

void apply_config_text(RunConfig& config, const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
  std::vector<std::pair<std::string, std::string>> entries;
  flatten(doc, "", entries);
  for (const auto& [key, value] : entries) {
    const Setting* s = find_setting(key);
    if (!s) throw ConfigError("unknown config key '" + key + "'");
    s->set(config, value);
  }
}

std::string describe(const RunConfig& config) {
  std::string out;
  for (const auto& s : settings()) out += s.key + " = " + s.get(config) + "\n";
  return out;
}

}  // namespace restgate::cli
