#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "restgate/errors.hpp"
#include "restgate/optim.hpp"
#include "restgate/rng.hpp"
#include "restgate/train.hpp"

using namespace restgate;
using namespace restgate::train;
using doctest::Approx;

namespace {

// Class k carries a strong 10 Hz rhythm on channel k; everything else is weak noise.
PreparedSet toy_set(std::size_t per_class, std::vector<int> subjects, std::uint64_t seed) {
  PreparedSet s;
  s.fs = 128.0;
  s.n_channels = 4;
  s.rest_length = 64;
  s.mi_length = 128;
  Rng rng(seed);
  for (int subject : subjects)
    for (std::size_t i = 0; i < per_class; ++i)
      for (int k = 0; k < 4; ++k) {
        for (std::size_t c = 0; c < 4; ++c)
          for (std::size_t t = 0; t < s.rest_length; ++t) s.rest.push_back(0.3 * rng.normal());
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t c = 0; c < 4; ++c)
          for (std::size_t t = 0; t < s.mi_length; ++t) {
            const double rhythm = c == static_cast<std::size_t>(k)
                                      ? 3.0 * std::sin(2.0 * std::numbers::pi * 10.0 * static_cast<double>(t) / s.fs + phase)
                                      : 0.0;
            s.mi.push_back(rhythm + 0.3 * rng.normal());
          }
        s.labels.push_back(k);
        s.subjects.push_back(subject);
      }
  return s;
}

models::ModelConfig toy_model(const PreparedSet& set, bool use_gate) {
  models::ModelConfig c = model_config_for(set, {});
  c.use_gate = use_gate;
  return c;
}

TrainConfig toy_train(std::size_t epochs) {
  TrainConfig c;
  c.batch_size = 16;
  c.epochs = epochs;
  c.seed = 3;
  return c;
}

std::vector<std::vector<double>> snapshot(const models::IntegratedModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.push_back(p.tensor.values());
  return out;
}

}  // namespace

TEST_SUITE("optimizer") {
  TEST_CASE("single AdamW step from one") {
    std::vector<double> theta = {1.0};
    optim::Moments moments;
    optim::adamw_update(theta, std::vector<double>{1.0}, moments, 1, 0.002, {});
    CHECK(std::abs(theta[0] - 0.997850) < 1e-5);
    CHECK(theta[0] == Approx(1.0 - 0.002 / (1.0 + 1e-8) - 0.002 * 0.075).epsilon(1e-15));
  }

  TEST_CASE("zero gradient at step one without decay leaves theta unchanged") {
    std::vector<double> theta = {0.7, -2.0};
    optim::Moments moments;
    optim::AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    optim::adamw_update(theta, std::vector<double>{0.0, 0.0}, moments, 1, 0.002, cfg);
    CHECK(theta[0] == 0.7);
    CHECK(theta[1] == -2.0);
  }

  TEST_CASE("without decay it tracks a reference Adam for 100 steps") {
    Rng rng(5);
    std::vector<double> theta(7), ref_theta;
    for (auto& v : theta) v = rng.normal();
    ref_theta = theta;
    optim::Moments moments;
    optim::AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    oracle::ReferenceAdam ref(theta.size(), 0.01);
    for (std::uint64_t t = 1; t <= 100; ++t) {
      std::vector<double> g(theta.size());
      for (auto& v : g) v = rng.normal();
      optim::adamw_update(theta, g, moments, t, 0.01, cfg);
      ref.step(ref_theta, g);
    }
    for (std::size_t i = 0; i < theta.size(); ++i) CHECK(std::abs(theta[i] - ref_theta[i]) < 1e-12);
  }

  TEST_CASE("step consumes gradients and counts") {
    Tensor p = Tensor::from({1.0, 2.0});
    p.set_requires_grad();
    optim::AdamW opt({p}, {});
    backward(sum(mul(p, p)));
    CHECK(p.has_grad());
    opt.step(0.01);
    CHECK_FALSE(p.has_grad());
    CHECK(opt.steps() == 1);
    CHECK(p[0] < 1.0);
  }
}

TEST_SUITE("schedule") {
  TEST_CASE("endpoints and midpoint") {
    CHECK(optim::cosine_lr(0, 300, 0.002) == 0.002);
    CHECK(optim::cosine_lr(300, 300, 0.002) == 0.0);
    CHECK(optim::cosine_lr(150, 300, 0.002) == 0.001);
    CHECK(optim::cosine_lr(400, 300, 0.002, 1e-4) == 1e-4);
  }

  TEST_CASE("non-increasing over epochs") {
    double prev = optim::cosine_lr(0, 60, 0.002);
    for (int t = 1; t <= 60; ++t) {
      const double lr = optim::cosine_lr(t, 60, 0.002);
      CHECK(lr <= prev);
      prev = lr;
    }
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("avg and population std in percent") {
    const auto m = Metrics::from({1, 2, 3}, {0.6, 0.7, 0.8});
    CHECK(std::abs(m.avg - 70.0) < 1e-6);
    CHECK(std::abs(m.std - 8.1649658092772603) < 1e-6);
    const std::vector<double> pct = {60.0, 70.0, 80.0};
    CHECK(m.std == Approx(oracle::population_std(pct)).epsilon(1e-12));
  }

  TEST_CASE("invalid inputs") {
    CHECK_THROWS_AS(Metrics::from({}, {}), DomainError);
    CHECK_THROWS_AS(Metrics::from({1}, {0.5, 0.5}), DimensionError);
  }

  TEST_CASE("argmax ties go to the lowest index") {
    CHECK(argmax_lowest(std::vector<double>{0.0, 0.0, 0.0, 0.0}) == 0);
    CHECK(argmax_lowest(std::vector<double>{1.0, 3.0, 3.0, 2.0}) == 1);
  }
}

TEST_SUITE("fit and evaluate") {
  TEST_CASE("separable toy set is learned") {
    const auto set = toy_set(10, {1}, 1);
    auto model = models::IntegratedModel::init(toy_model(set, false), 1);
    auto cfg = toy_train(50);
    const auto result = fit(model, set, cfg);
    CHECK(result.loss_history.size() == 50);
    CHECK(result.loss_history.back() < result.loss_history.front());
    CHECK(evaluate(model, set) >= 0.99);

    // Held-out trials: class features separate.
    const auto test = toy_set(5, {2}, 2);
    const auto batch = test.batch(std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19});
    const Tensor f = models::extract_features(batch.rest, batch.mi, model);
    const std::size_t n = f.dim(0), d = f.dim(1);
    double intra = 0.0, inter = 0.0;
    std::size_t n_intra = 0, n_inter = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += (f[i * d + k] - f[j * d + k]) * (f[i * d + k] - f[j * d + k]);
        if (batch.labels[i] == batch.labels[j]) {
          intra += std::sqrt(s);
          ++n_intra;
        } else {
          inter += std::sqrt(s);
          ++n_inter;
        }
      }
    CHECK(inter / static_cast<double>(n_inter) > intra / static_cast<double>(n_intra));
  }

  TEST_CASE("zero epochs leave parameters untouched") {
    const auto set = toy_set(2, {1}, 3);
    auto model = models::IntegratedModel::init(toy_model(set, true), 4);
    const auto before = snapshot(model);
    const auto result = fit(model, set, toy_train(0));
    CHECK(result.loss_history.empty());
    CHECK(snapshot(model) == before);
  }

  TEST_CASE("same seed gives bit-identical parameters") {
    const auto set = toy_set(3, {1}, 5);
    auto a = models::IntegratedModel::init(toy_model(set, true), 6);
    auto b = models::IntegratedModel::init(toy_model(set, true), 6);
    const auto ra = fit(a, set, toy_train(3));
    const auto rb = fit(b, set, toy_train(3));
    CHECK(snapshot(a) == snapshot(b));
    CHECK(ra.loss_history == rb.loss_history);
    for (std::size_t i = 1; i < ra.lr_history.size(); ++i) CHECK(ra.lr_history[i] <= ra.lr_history[i - 1]);
    CHECK(ra.lr_history.front() == 0.002);
  }

  TEST_CASE("errors") {
    const auto set = toy_set(1, {1}, 7);
    auto model = models::IntegratedModel::init(toy_model(set, false), 8);
    CHECK_THROWS_AS(fit(model, set.subset(std::vector<std::size_t>{}), toy_train(1)), DomainError);
    auto bad = set;
    bad.labels[0] = 4;
    CHECK_THROWS_AS(fit(model, bad, toy_train(1)), DomainError);
    auto cfg = toy_train(1);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(fit(model, set, cfg), ConfigError);
  }

  TEST_CASE("constant predictor on random labels is near chance") {
    auto set = toy_set(250, {1}, 9);
    Rng rng(10);
    for (auto& l : set.labels) l = static_cast<int>(rng.below(4));
    auto model = models::IntegratedModel::init(toy_model(set, false), 11);
    std::fill(model.classifier.dense_weight.mutable_data().begin(), model.classifier.dense_weight.mutable_data().end(), 0.0);
    std::fill(model.classifier.dense_bias.mutable_data().begin(), model.classifier.dense_bias.mutable_data().end(), 0.0);
    for (int p : predict(model, set)) CHECK(p == 0);
    CHECK(std::abs(evaluate(model, set) - 0.25) <= 0.05);
  }
}

TEST_SUITE("loso") {
  TEST_CASE("two easy subjects are both solved") {
    const auto set = toy_set(8, {1, 2}, 12);
    LosoOptions options;
    options.run_with = false;
    const auto r = loso_evaluate(set, toy_model(set, false), toy_train(30), options);
    REQUIRE(r.without_gate);
    CHECK(r.without_gate->per_subject_accuracy.size() == 2);
    for (double a : r.without_gate->per_subject_accuracy) CHECK(a >= 0.95);
    CHECK_FALSE(r.with_gate);
    CHECK_FALSE(r.diff_avg());
  }

  TEST_CASE("held-out subject never reaches training and fold order does not matter") {
    const auto set = toy_set(2, {1, 2, 3}, 13);
    std::vector<int> seen_subjects;
    LosoOptions options;
    options.on_fold = [&](const FoldOutcome& f) {
      seen_subjects.push_back(f.subject);
      for (int s : f.test_set.subjects) CHECK(s == f.subject);
    };
    const auto a = loso_evaluate(set, toy_model(set, false), toy_train(2), options);
    CHECK(seen_subjects.size() == 6);

    // Same trials with subjects arranged in reverse.
    std::vector<std::size_t> reversed;
    for (int s : {3, 2, 1})
      for (std::size_t i : set.indices_of_subject(s, true)) reversed.push_back(i);
    LosoOptions parallel;
    parallel.jobs = 3;
    const auto b = loso_evaluate(set.subset(reversed), toy_model(set, false), toy_train(2), parallel);
    CHECK(a.without_gate->per_subject_accuracy == b.without_gate->per_subject_accuracy);
    CHECK(a.with_gate->per_subject_accuracy == b.with_gate->per_subject_accuracy);
    CHECK(*a.diff_avg() == a.with_gate->avg - a.without_gate->avg);
  }

  TEST_CASE("single subject is rejected") {
    const auto set = toy_set(1, {4}, 14);
    CHECK_THROWS_AS(loso_evaluate(set, toy_model(set, false), toy_train(1)), DomainError);
  }
}
