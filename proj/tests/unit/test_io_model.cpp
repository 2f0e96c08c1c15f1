#include <doctest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "restgate/errors.hpp"
#include "restgate/io.hpp"
#include "restgate/model_io.hpp"

using namespace restgate;

namespace {

ModelFile small_file(bool use_gate, std::uint64_t seed) {
  models::ModelConfig c;
  c.gate.channels = 4;
  c.gate.fs = 128.0;
  c.classifier.channels = 4;
  c.classifier.samples = 128;
  c.use_gate = use_gate;
  ModelFile f{models::IntegratedModel::init(c, seed), {}, {}, 3, 0};
  f.train_config.epochs = 7;
  // Move the running statistics away from their initial values.
  const ForwardContext ctx{Mode::Train, 1, 0, 0};
  models::integrated_forward(fixtures::random_tensor({3, 4, 64}, seed), fixtures::random_tensor({3, 4, 128}, seed + 1),
                             f.model, ctx);
  Tape::current().clear();
  return f;
}

std::vector<std::vector<double>> all_values(const models::IntegratedModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor.values());
  for (const auto& b : m.buffers()) out.push_back(b.tensor.values());
  return out;
}

FormatError::Kind kind_of(std::span<const std::uint8_t> bytes) {
  try {
    decode_model(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("decoded corrupt bytes");
  return FormatError::Kind::BadHeader;
}

}  // namespace

TEST_SUITE("model files") {
  TEST_CASE("round trip keeps every parameter, buffer and setting") {
    for (bool use_gate : {true, false}) {
      const ModelFile f = small_file(use_gate, 5);
      const auto bytes = encode_model(f);
      CHECK(std::equal(bytes.begin(), bytes.begin() + 8, "EEGMODL1"));
      const ModelFile g = decode_model(bytes);
      CHECK(g.model.use_gate == use_gate);
      CHECK(all_values(g.model) == all_values(f.model));
      CHECK(g.model.parameter_count() == f.model.parameter_count());
      CHECK(g.train_config.epochs == 7);
      CHECK(g.holdout_subject == 3);
      CHECK(g.config_hash == train_config_hash(f.train_config, f.preprocess));
      CHECK(encode_model(g) == bytes);
    }
  }

  TEST_CASE("config hash follows the configuration") {
    train::TrainConfig a, b;
    b.lr = 0.001;
    CHECK(train_config_hash(a, {}) == train_config_hash(a, {}));
    CHECK(train_config_hash(a, {}) != train_config_hash(b, {}));
    train::PreprocessConfig zp;
    zp.zero_phase = true;
    CHECK(train_config_hash(a, {}) != train_config_hash(a, zp));
  }

  TEST_CASE("save and load through a file") {
    const ModelFile f = small_file(true, 6);
    const auto path = (std::filesystem::temp_directory_path() / "restgate_test_model.bin").string();
    save_model(f, path);
    CHECK(read_file(path) == encode_model(f));
    CHECK(all_values(load_model(path).model) == all_values(f.model));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_model(path), IoError);
  }

  TEST_CASE("corruptions") {
    const auto bytes = encode_model(small_file(true, 7));
    auto magic = bytes;
    magic[0] = 'X';
    CHECK(kind_of(magic) == FormatError::Kind::BadMagic);
    CHECK(kind_of(std::span(bytes).first(bytes.size() - 8)) == FormatError::Kind::Truncated);
    CHECK(kind_of(std::span(bytes).first(6)) == FormatError::Kind::Truncated);
    CHECK(kind_of(std::span(bytes).first(10)) == FormatError::Kind::Truncated);
    auto extra = bytes;
    extra.push_back(0);
    CHECK(kind_of(extra) == FormatError::Kind::SizeMismatch);
    auto header = bytes;
    header[13] = '#';
    CHECK(kind_of(header) == FormatError::Kind::BadHeader);
  }
}
