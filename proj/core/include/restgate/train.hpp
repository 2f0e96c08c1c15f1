#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "restgate/data.hpp"
#include "restgate/models.hpp"
#include "restgate/optim.hpp"

namespace restgate::train {

struct PreprocessConfig {
  int filter_order = 4;
  double f_lo = 0.5;
  double f_hi = 38.0;
  bool zero_phase = false;
  double ems_alpha = 1e-3;
  double ems_eps = 1e-4;
};

struct Batch {
  Tensor rest;  // [B, C, T_rest]
  Tensor mi;    // [B, C, T_mi]
  std::vector<int> labels;
  std::vector<int> subjects;
};

// Filtered, standardized and segmented trials, ready for batching.
struct PreparedSet {
  double fs = 0.0;
  std::size_t n_channels = 0;
  std::size_t rest_length = 0;
  std::size_t mi_length = 0;
  std::vector<double> rest;  // trial-major [N, C, rest_length]
  std::vector<double> mi;    // trial-major [N, C, mi_length]
  std::vector<int> labels;
  std::vector<int> subjects;
  std::vector<std::uint8_t> mi_probe;  // empty, or [N, mi_length] flags

  std::size_t size() const { return labels.size(); }
  Batch batch(std::span<const std::size_t> indices) const;
  PreparedSet subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> indices_of_subject(int subject, bool include) const;
};

// Per subject, the subject's trials are concatenated in dataset order and
// treated as one recording: bandpass filter, then exponential moving
// standardization, then the rest / MI windows are cut from every trial.
PreparedSet preprocess(const data::TrialSet& trials, const PreprocessConfig& config = {});

struct TrainConfig {
  std::size_t batch_size = 64;
  double lr = 0.002;
  double weight_decay = 0.075;
  std::size_t epochs = 300;
  double eta_min = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool use_gate = true;

  void validate() const;
};

struct FitResult {
  std::vector<double> loss_history;  // mean batch loss per epoch
  std::vector<double> lr_history;    // learning rate used in each epoch
  std::set<int> subjects_seen;       // provenance of every trial that reached a batch
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Seeded shuffled mini-batches, cross-entropy, AdamW, cosine annealing per epoch.
FitResult fit(models::IntegratedModel& model, const PreparedSet& train_set, const TrainConfig& config,
              const EpochCallback& on_epoch = {});

// Arg-max predictions in eval mode; ties go to the lowest class index.
std::vector<int> predict(models::IntegratedModel& model, const PreparedSet& set);
int argmax_lowest(std::span<const double> row);

double evaluate(models::IntegratedModel& model, const PreparedSet& test_set);

struct Metrics {
  std::vector<int> subjects;
  std::vector<double> per_subject_accuracy;  // fractions
  double avg = 0.0;                          // percent
  double std = 0.0;                          // percent, population standard deviation

  static Metrics from(std::vector<int> subjects, std::vector<double> accuracies);
};

// Handed to LosoOptions::on_fold after each fold, while its model is still alive.
struct FoldOutcome {
  bool use_gate;
  int subject;
  double accuracy;
  models::IntegratedModel& model;
  const PreparedSet& test_set;
};

struct LosoOptions {
  bool run_without = true;
  bool run_with = true;
  std::size_t jobs = 1;
  std::function<void(const FoldOutcome&)> on_fold;  // calls are serialized
};

struct LosoResult {
  std::optional<Metrics> without_gate;
  std::optional<Metrics> with_gate;

  // with - without, in percentage points.
  std::optional<double> diff_avg() const;
  std::optional<double> diff_std() const;
};

// Leave-one-subject-out: one fold per subject, trained on every other subject
// and tested on the held-out one. Both variants share seeds and initial
// classifier weights.
LosoResult loso_evaluate(const PreparedSet& set, const models::ModelConfig& model_config,
                         const TrainConfig& config, const LosoOptions& options = {});

// Per-trial mean of the upsampled gate over spliced probe samples and over the
// remaining (genuine) MI samples. Trials without probe samples are skipped.
struct ProbeGateStats {
  std::vector<double> probe_mean;
  std::vector<double> genuine_mean;

  std::size_t trials() const { return probe_mean.size(); }
  // Fraction of trials whose probe mean is strictly below the genuine mean.
  double fraction_attenuated() const;
};

ProbeGateStats probe_gate_stats(models::IntegratedModel& model, const PreparedSet& set);

// Model geometry for a prepared set (channels, fs, MI length) with the given hyperparameters.
models::ModelConfig model_config_for(const PreparedSet& set, models::ModelConfig base);

}  // namespace restgate::train
