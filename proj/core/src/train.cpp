#include "restgate/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "restgate/errors.hpp"
#include "restgate/rng.hpp"
#include "restgate/signal.hpp"

namespace restgate::train {

Batch PreparedSet::batch(std::span<const std::size_t> indices) const {
  const std::size_t B = indices.size(), C = n_channels;
  if (B == 0) throw DomainError("batch: no trials selected");
  std::vector<double> r(B * C * rest_length), m(B * C * mi_length);
  Batch b;
  for (std::size_t k = 0; k < B; ++k) {
    const std::size_t i = indices[k];
    std::copy_n(&rest[i * C * rest_length], C * rest_length, &r[k * C * rest_length]);
    std::copy_n(&mi[i * C * mi_length], C * mi_length, &m[k * C * mi_length]);
    b.labels.push_back(labels[i]);
    b.subjects.push_back(subjects[i]);
  }
  b.rest = Tensor({B, C, rest_length}, std::move(r));
  b.mi = Tensor({B, C, mi_length}, std::move(m));
  return b;
}

PreparedSet PreparedSet::subset(std::span<const std::size_t> indices) const {
  PreparedSet out;
  out.fs = fs;
  out.n_channels = n_channels;
  out.rest_length = rest_length;
  out.mi_length = mi_length;
  const std::size_t rn = n_channels * rest_length, mn = n_channels * mi_length;
  for (auto i : indices) {
    out.rest.insert(out.rest.end(), rest.begin() + static_cast<std::ptrdiff_t>(i * rn),
                    rest.begin() + static_cast<std::ptrdiff_t>((i + 1) * rn));
    out.mi.insert(out.mi.end(), mi.begin() + static_cast<std::ptrdiff_t>(i * mn),
                  mi.begin() + static_cast<std::ptrdiff_t>((i + 1) * mn));
    out.labels.push_back(labels[i]);
    out.subjects.push_back(subjects[i]);
    if (!mi_probe.empty())
      out.mi_probe.insert(out.mi_probe.end(), mi_probe.begin() + static_cast<std::ptrdiff_t>(i * mi_length),
                          mi_probe.begin() + static_cast<std::ptrdiff_t>((i + 1) * mi_length));
  }
  return out;
}

std::vector<std::size_t> PreparedSet::indices_of_subject(int subject, bool include) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if ((subjects[i] == subject) == include) out.push_back(i);
  return out;
}

PreparedSet preprocess(const data::TrialSet& trials, const PreprocessConfig& config) {
  trials.validate();
  const auto filter = signal::design_butterworth_bandpass(config.filter_order, config.f_lo, config.f_hi, trials.fs);
  const auto seg = signal::segment_bounds(trials.n_samples, trials.fs);
  const std::size_t C = trials.n_channels, S = trials.n_samples, N = trials.n_trials();

  PreparedSet out;
  out.fs = trials.fs;
  out.n_channels = C;
  out.rest_length = seg.rest_end - seg.rest_begin;
  out.mi_length = seg.mi_end - seg.mi_begin;
  out.rest.resize(N * C * out.rest_length);
  out.mi.resize(N * C * out.mi_length);
  out.labels = trials.labels;
  out.subjects = trials.subject_ids;

  for (int subject : trials.subjects()) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < N; ++i)
      if (trials.subject_ids[i] == subject) members.push_back(i);
    std::vector<double> recording(members.size() * S);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < members.size(); ++k) {
        auto t = trials.trial(members[k]);
        std::copy_n(&t[c * S], S, &recording[k * S]);
      }
      auto filtered = config.zero_phase ? signal::apply_filter_zero_phase(filter, recording)
                                        : signal::apply_filter(filter, recording);
      auto standardized = signal::exp_moving_standardize(filtered, config.ems_alpha, config.ems_eps);
      for (std::size_t k = 0; k < members.size(); ++k) {
        const double* src = &standardized[k * S];
        const std::size_t i = members[k];
        std::copy(src + seg.rest_begin, src + seg.rest_end, &out.rest[(i * C + c) * out.rest_length]);
        std::copy(src + seg.mi_begin, src + seg.mi_end, &out.mi[(i * C + c) * out.mi_length]);
      }
    }
  }

  if (trials.has_probes()) {
    out.mi_probe.resize(N * out.mi_length);
    for (std::size_t i = 0; i < N; ++i) {
      auto mask = trials.probe_mask(i);
      std::copy(mask.begin() + static_cast<std::ptrdiff_t>(seg.mi_begin),
                mask.begin() + static_cast<std::ptrdiff_t>(seg.mi_end), &out.mi_probe[i * out.mi_length]);
    }
  }
  return out;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (weight_decay < 0.0 || eta_min < 0.0) throw ConfigError("train: weight_decay and eta_min must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train: betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
}

FitResult fit(models::IntegratedModel& model, const PreparedSet& train_set, const TrainConfig& config,
              const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.size() == 0) throw DomainError("fit: empty training set");
  for (int l : train_set.labels)
    if (l < 0 || l >= data::kNumClasses) throw DomainError("fit: label outside [0,4)");

  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  optim::AdamW optimizer(params, {config.beta1, config.beta2, config.adam_eps, config.weight_decay});

  FitResult result;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = optim::cosine_lr(static_cast<double>(epoch), static_cast<double>(config.epochs),
                                       config.lr, config.eta_min);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_keys({config.seed, 0x5AFF1E, epoch}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const auto batch = train_set.batch(std::span<const std::size_t>(order).subspan(start, stop - start));
      result.subjects_seen.insert(batch.subjects.begin(), batch.subjects.end());

      const ForwardContext ctx{Mode::Train, config.seed, epoch, n_batches};
      Tape::current().clear();
      const Tensor logits = models::integrated_forward(batch.rest, batch.mi, model, ctx);
      const Tensor loss = softmax_cross_entropy(logits, batch.labels);
      backward(loss);
      optimizer.step(lr);
      loss_sum += loss.item();
      ++n_batches;
    }
    const double mean_loss = loss_sum / static_cast<double>(n_batches);
    result.loss_history.push_back(mean_loss);
    result.lr_history.push_back(lr);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return result;
}

int argmax_lowest(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k)
    if (row[k] > row[best]) best = k;
  return static_cast<int>(best);
}

std::vector<int> predict(models::IntegratedModel& model, const PreparedSet& set) {
  NoGradGuard no_grad;
  std::vector<int> out;
  constexpr std::size_t kEvalBatch = 64;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += kEvalBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + kEvalBatch); ++i) idx.push_back(i);
    const auto batch = set.batch(idx);
    const Tensor logits = models::integrated_forward(batch.rest, batch.mi, model, ForwardContext{});
    const std::size_t K = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) out.push_back(argmax_lowest(logits.data().subspan(b * K, K)));
  }
  return out;
}

double evaluate(models::IntegratedModel& model, const PreparedSet& test_set) {
  if (test_set.size() == 0) throw DomainError("evaluate: empty test set");
  const auto pred = predict(model, test_set);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test_set.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

Metrics Metrics::from(std::vector<int> subjects, std::vector<double> accuracies) {
  if (accuracies.empty()) throw DomainError("metrics: no accuracies");
  if (subjects.size() != accuracies.size()) throw DimensionError("metrics: subjects and accuracies differ in length");
  Metrics m;
  m.subjects = std::move(subjects);
  m.per_subject_accuracy = std::move(accuracies);
  const double n = static_cast<double>(m.per_subject_accuracy.size());
  double mean = 0.0;
  for (double a : m.per_subject_accuracy) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : m.per_subject_accuracy) var += (a - mean) * (a - mean);
  var /= n;
  m.avg = 100.0 * mean;
  m.std = 100.0 * std::sqrt(var);
  return m;
}

std::optional<double> LosoResult::diff_avg() const {
  if (!with_gate || !without_gate) return std::nullopt;
  return with_gate->avg - without_gate->avg;
}

std::optional<double> LosoResult::diff_std() const {
  if (!with_gate || !without_gate) return std::nullopt;
  return with_gate->std - without_gate->std;
}

double ProbeGateStats::fraction_attenuated() const {
  if (probe_mean.empty()) return 0.0;
  std::size_t lower = 0;
  for (std::size_t i = 0; i < probe_mean.size(); ++i) lower += probe_mean[i] < genuine_mean[i];
  return static_cast<double>(lower) / static_cast<double>(probe_mean.size());
}

ProbeGateStats probe_gate_stats(models::IntegratedModel& model, const PreparedSet& set) {
  if (set.mi_probe.empty()) throw ContractError("probe stats: the set carries no probe masks");
  NoGradGuard no_grad;
  ProbeGateStats stats;
  constexpr std::size_t kEvalBatch = 64;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += kEvalBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + kEvalBatch); ++i) idx.push_back(i);
    const auto batch = set.batch(idx);
    const auto out = gate::gate_block_forward(batch.rest, batch.mi, model.gate, ForwardContext{});
    const auto gate = out.upsampled_gate.data();
    const std::size_t T = set.mi_length;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const std::uint8_t* mask = &set.mi_probe[idx[b] * T];
      double sp = 0.0, sg = 0.0;
      std::size_t np = 0, ng = 0;
      for (std::size_t t = 0; t < T; ++t) {
        if (mask[t]) {
          sp += gate[b * T + t];
          ++np;
        } else {
          sg += gate[b * T + t];
          ++ng;
        }
      }
      if (np == 0 || ng == 0) continue;
      stats.probe_mean.push_back(sp / static_cast<double>(np));
      stats.genuine_mean.push_back(sg / static_cast<double>(ng));
    }
  }
  return stats;
}

models::ModelConfig model_config_for(const PreparedSet& set, models::ModelConfig base) {
  base.gate.channels = set.n_channels;
  base.gate.fs = set.fs;
  base.classifier.channels = set.n_channels;
  base.classifier.samples = set.mi_length;
  return base;
}

LosoResult loso_evaluate(const PreparedSet& set, const models::ModelConfig& model_config,
                         const TrainConfig& config, const LosoOptions& options) {
  std::vector<int> subjects(set.subjects);
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (subjects.size() < 2) throw DomainError("loso: need at least two subjects");

  struct Fold {
    bool use_gate;
    std::size_t subject_index;
  };
  std::vector<Fold> folds;
  for (bool g : {false, true}) {
    if ((g && !options.run_with) || (!g && !options.run_without)) continue;
    for (std::size_t s = 0; s < subjects.size(); ++s) folds.push_back({g, s});
  }

  // Training trials in canonical order (by subject, then dataset order), so
  // the outcome of a fold does not depend on how subjects are arranged in the set.
  auto canonical = [&](int held_out) {
    std::vector<std::size_t> idx = set.indices_of_subject(held_out, false);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return set.subjects[a] < set.subjects[b]; });
    return idx;
  };

  std::vector<double> acc_with(subjects.size()), acc_without(subjects.size());
  std::mutex report_mutex;
  auto run_fold = [&](const Fold& fold) {
    const int held_out = subjects[fold.subject_index];
    const auto train_idx = canonical(held_out);
    const auto train_set = set.subset(train_idx);
    const auto test_set = set.subset(set.indices_of_subject(held_out, true));
    auto cfg = model_config_for(set, model_config);
    cfg.use_gate = fold.use_gate;
    auto model = models::IntegratedModel::init(cfg, config.seed);
    auto tc = config;
    tc.use_gate = fold.use_gate;
    const auto fitted = fit(model, train_set, tc);
    if (fitted.subjects_seen.count(held_out))
      throw ContractError("loso: held-out subject " + std::to_string(held_out) + " reached training");
    const double acc = evaluate(model, test_set);
    (fold.use_gate ? acc_with : acc_without)[fold.subject_index] = acc;
    if (options.on_fold) {
      std::lock_guard lock(report_mutex);
      options.on_fold(FoldOutcome{fold.use_gate, held_out, acc, model, test_set});
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, folds.size()));
  if (jobs == 1) {
    for (const auto& f : folds) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w)
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < folds.size(); i = next++) {
          try {
            run_fold(folds[i]);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    for (auto& t : workers) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  LosoResult result;
  if (options.run_without) result.without_gate = Metrics::from(subjects, acc_without);
  if (options.run_with) result.with_gate = Metrics::from(subjects, acc_with);
  return result;
}

}  // namespace restgate::train
