#include <benchmark/benchmark.h>

#include "restgate/gate.hpp"
#include "restgate/models.hpp"
#include "restgate/rng.hpp"
#include "restgate/signal.hpp"
#include "restgate/tsne.hpp"

using namespace restgate;

namespace {

Tensor noise(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.normal();
  return t;
}

void conv2d_temporal(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const Tensor x = noise({batch, 1, 22, 1000}, 1);
  const Tensor k = noise({8, 1, 1, 25}, 2);
  NoGradGuard no_grad;
  for (auto _ : state) {
    Tensor y = conv2d(x, k, Padding::Same);
    benchmark::DoNotOptimize(y.data().data());
  }
}

void gate_forward(benchmark::State& state) {
  auto params = gate::GateParams::init({}, 3);
  const Tensor rest = noise({8, 22, 500}, 4), mi = noise({8, 22, 1000}, 5);
  NoGradGuard no_grad;
  for (auto _ : state) {
    auto out = gate::gate_block_forward(rest, mi, params, ForwardContext{});
    benchmark::DoNotOptimize(out.gated_mi.data().data());
  }
}

void model_train_step(benchmark::State& state) {
  models::ModelConfig config;
  config.use_gate = state.range(0) != 0;
  auto model = models::IntegratedModel::init(config, 6);
  const Tensor rest = noise({8, 22, 500}, 7), mi = noise({8, 22, 1000}, 8);
  const std::vector<int> labels = {0, 1, 2, 3, 0, 1, 2, 3};
  for (auto _ : state) {
    const Tensor loss = softmax_cross_entropy(models::integrated_forward(rest, mi, model, {Mode::Train, 1, 0, 0}), labels);
    backward(loss);
    for (auto& p : model.parameters()) p.tensor.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * 8);
}

void bandpass_filter(benchmark::State& state) {
  const auto filter = signal::design_butterworth_bandpass();
  const Tensor x = noise({static_cast<std::size_t>(state.range(0))}, 9);
  for (auto _ : state) {
    auto y = signal::apply_filter(filter, x.data());
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void tsne_exact(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = noise({n, 16}, 10);
  tsne::TsneConfig config;
  config.iterations = 100;
  config.perplexity = 10.0;
  for (auto _ : state) {
    auto r = tsne::tsne_project(x.data(), n, 16, config);
    benchmark::DoNotOptimize(r.embedding.data());
  }
}

}  // namespace

BENCHMARK(conv2d_temporal)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(gate_forward)->Unit(benchmark::kMillisecond);
BENCHMARK(model_train_step)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(bandpass_filter)->Arg(1500)->Arg(1 << 16);
BENCHMARK(tsne_exact)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
