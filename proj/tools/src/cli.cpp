#include "restgate/cli.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "restgate/data.hpp"
#include "restgate/errors.hpp"
#include "restgate/gate.hpp"
#include "restgate/io.hpp"
#include "restgate/model_io.hpp"
#include "restgate/plot.hpp"
#include "restgate/run_config.hpp"
#include "restgate/signal.hpp"
#include "restgate/train.hpp"
#include "restgate/tsne.hpp"

namespace restgate::cli {

namespace {

using nlohmann::json;

struct Paths {
  std::string data, model, out, svg, report, sections, history;
  std::optional<int> holdout;
  std::optional<int> subject;
  std::optional<std::uint64_t> seed;
  std::size_t trial = 0;
  std::size_t jobs = 1;
  bool with_gate = false;
  bool no_gate = false;
  bool verbose = false;
};

std::string swap_extension(const std::string& path, const std::string& ext) {
  const auto slash = path.find_last_of('/');
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return path + ext;
  return path.substr(0, dot) + ext;
}

models::ModelConfig base_model(const RunConfig& cfg, bool use_gate) {
  return models::ModelConfig{cfg.gate, cfg.classifier, use_gate};
}

// Trials of one subject, or every trial when no subject is given.
train::PreparedSet select_subject(const train::PreparedSet& set, std::optional<int> subject) {
  if (!subject) return set;
  const auto idx = set.indices_of_subject(*subject, true);
  if (idx.empty()) throw DomainError("no trials for subject " + std::to_string(*subject));
  return set.subset(idx);
}

int cmd_synth(const RunConfig& cfg, const Paths& p, std::ostream& out) {
  auto synth = cfg.synth;
  if (p.seed) synth.seed = *p.seed;
  auto trials = data::synth_generate(synth);
  if (cfg.probe_seconds > 0.0) trials = data::splice_rest_probe(trials, synth, cfg.probe_seconds, cfg.probe_seed);
  data::save(trials, p.out);
  out << "wrote " << trials.n_trials() << " trials (" << trials.n_channels << " channels x " << trials.n_samples
      << " samples) to " << p.out << "\n";
  return kOk;
}

int cmd_filter(const RunConfig& cfg, const Paths& p, std::ostream& out) {
  const auto filter = signal::design_butterworth_bandpass(cfg.preprocess.filter_order, cfg.preprocess.f_lo,
                                                          cfg.preprocess.f_hi, cfg.synth.fs);
  if (cfg.filter_points == 0) throw ConfigError("filter.points must be positive");
  plot::Table table{"Bandpass magnitude response", {"freq_hz", "gain_db"}, {}};
  const double nyquist = cfg.synth.fs / 2.0;
  for (std::size_t i = 0; i < cfg.filter_points; ++i) {
    const double f = (static_cast<double>(i) + 0.5) * nyquist / static_cast<double>(cfg.filter_points);
    table.rows.push_back({f, std::max(20.0 * std::log10(filter.gain(f)), -400.0)});
  }
  plot::Table sections{"sections", {"section", "b0", "b1", "b2", "a1", "a2"}, {}};
  for (std::size_t i = 0; i < filter.sections.size(); ++i) {
    const auto& s = filter.sections[i];
    sections.rows.push_back({static_cast<double>(i), s.b0, s.b1, s.b2, s.a1, s.a2});
  }
  if (table.rows.empty()) throw IoError("filter: no response points to write");
  std::vector<PendingFile> files{{p.out, plot::to_csv(table)},
                                 {p.svg.empty() ? swap_extension(p.out, ".svg") : p.svg,
                                  plot::to_svg(plot::PlotKind::FilterResponse, table)}};
  if (!p.sections.empty()) files.push_back({p.sections, plot::to_csv(sections)});
  atomic_write_all(files);
  if (p.sections.empty()) out << plot::to_csv(sections);
  return kOk;
}

int cmd_train(const RunConfig& cfg, const Paths& p, std::ostream& out, std::ostream& err) {
  const bool use_gate = !p.no_gate;
  const auto set = train::preprocess(data::load(p.data), cfg.preprocess);
  const auto train_set = p.holdout ? set.subset(set.indices_of_subject(*p.holdout, false)) : set;
  if (train_set.size() == 0) throw DomainError("no training trials left after holding out the subject");
  auto tc = cfg.train;
  tc.use_gate = use_gate;
  auto model = models::IntegratedModel::init(train::model_config_for(set, base_model(cfg, use_gate)), tc.seed);
  const auto fitted = train::fit(model, train_set, tc, [&](std::size_t epoch, double loss) {
    if (p.verbose) err << "epoch " << epoch + 1 << "/" << tc.epochs << " loss " << loss << "\n";
  });

  const auto bytes = encode_model(ModelFile{std::move(model), tc, cfg.preprocess, p.holdout, 0});
  std::vector<PendingFile> files{{p.out, std::string(bytes.begin(), bytes.end())}};
  if (!p.history.empty()) {
    plot::Table history{"Training schedule", {"epoch", "lr", "loss"}, {}};
    for (std::size_t e = 0; e < fitted.loss_history.size(); ++e)
      history.rows.push_back({static_cast<double>(e), fitted.lr_history[e], fitted.loss_history[e]});
    if (history.rows.empty()) throw IoError("train: zero epochs leave no history to plot");
    files.push_back({p.history + ".csv", plot::to_csv(history)});
    files.push_back({p.history + ".svg", plot::to_svg(plot::PlotKind::LrSchedule, history)});
  }
  atomic_write_all(files);
  out << "trained on " << train_set.size() << " trials (" << (use_gate ? "with" : "without") << " gate), model written to "
      << p.out << "\n";
  return kOk;
}

int cmd_eval(const Paths& p, std::ostream& out) {
  auto file = load_model(p.model);
  const auto set = train::preprocess(data::load(p.data), file.preprocess);
  const auto subject = p.subject ? p.subject : file.holdout_subject;
  const auto test = select_subject(set, subject);
  const double acc = train::evaluate(file.model, test);
  const json report{{"accuracy", acc},
                    {"subject", subject ? json(*subject) : json(nullptr)},
                    {"trials", test.size()},
                    {"use_gate", file.model.use_gate}};
  if (p.report.empty())
    out << report.dump(2) << "\n";
  else
    atomic_write(p.report, report.dump(2) + "\n");
  return kOk;
}

json metrics_json(const train::Metrics& m) { return {{"avg", m.avg}, {"std", m.std}}; }

int cmd_loso(const RunConfig& cfg, const Paths& p, std::ostream& out, std::ostream& err) {
  const auto set = train::preprocess(data::load(p.data), cfg.preprocess);
  train::LosoOptions options;
  options.run_with = p.with_gate || !p.no_gate;
  options.run_without = p.no_gate || !p.with_gate;
  options.jobs = p.jobs;
  if (p.verbose)
    options.on_fold = [&](const train::FoldOutcome& f) {
      err << (f.use_gate ? "w/ " : "w/o") << " subject " << f.subject << " accuracy " << f.accuracy << "\n";
    };
  const auto result = train::loso_evaluate(set, base_model(cfg, true), cfg.train, options);

  const auto& any = result.without_gate ? *result.without_gate : *result.with_gate;
  json rows = json::array();
  for (std::size_t i = 0; i < any.subjects.size(); ++i) {
    json row{{"subject", any.subjects[i]}};
    if (result.without_gate) row["without_gate"] = result.without_gate->per_subject_accuracy[i];
    if (result.with_gate) row["with_gate"] = result.with_gate->per_subject_accuracy[i];
    rows.push_back(row);
  }
  json summary = json::object();
  if (result.without_gate) summary["without_gate"] = metrics_json(*result.without_gate);
  if (result.with_gate) summary["with_gate"] = metrics_json(*result.with_gate);
  if (result.diff_avg()) summary["diff"] = {{"avg", *result.diff_avg()}, {"std", *result.diff_std()}};
  const json report{{"rows", rows},
                    {"summary", summary},
                    {"config_hash", hex64(train_config_hash(cfg.train, cfg.preprocess))},
                    {"units", {{"rows", "fraction"}, {"summary", "percent"}}}};
  atomic_write(p.report, report.dump(2) + "\n");

  char line[128];
  out << "variant     avg%     std%\n";
  auto print = [&](const char* name, double avg, double sd) {
    std::snprintf(line, sizeof line, "%-8s %7.2f  %7.2f\n", name, avg, sd);
    out << line;
  };
  if (result.without_gate) print("w/o", result.without_gate->avg, result.without_gate->std);
  if (result.with_gate) print("w/", result.with_gate->avg, result.with_gate->std);
  if (result.diff_avg()) print("Diff.", *result.diff_avg(), *result.diff_std());
  return kOk;
}

int cmd_gate(const Paths& p, std::ostream& out) {
  auto file = load_model(p.model);
  if (!file.model.use_gate) throw DomainError("model " + p.model + " was trained without the gate");
  const auto set = train::preprocess(data::load(p.data), file.preprocess);
  if (p.trial >= set.size())
    throw DomainError("trial " + std::to_string(p.trial) + " out of range (" + std::to_string(set.size()) + " trials)");
  const std::size_t idx[] = {p.trial};
  const auto batch = set.batch(idx);
  NoGradGuard no_grad;
  const auto g = gate::gate_block_forward(batch.rest, batch.mi, file.model.gate, ForwardContext{});
  plot::Table table{"Gate trace, trial " + std::to_string(p.trial), {"sample_index", "gate_value", "cosine"}, {}};
  const auto gv = g.gate.data();
  const auto cv = g.cosine.data();
  for (std::size_t t = 0; t < gv.size(); ++t) table.rows.push_back({static_cast<double>(t), gv[t], cv[t]});
  plot::emit_plot(plot::PlotKind::GateTrace, table, p.svg.empty() ? swap_extension(p.out, ".svg") : p.svg, p.out);
  out << "wrote " << table.rows.size() << " gate steps to " << p.out << "\n";
  return kOk;
}

int cmd_tsne(const RunConfig& cfg, const Paths& p, std::ostream& out) {
  auto file = load_model(p.model);
  const auto set = select_subject(train::preprocess(data::load(p.data), file.preprocess), p.subject);
  std::vector<double> features;
  std::size_t width = 0;
  constexpr std::size_t kBatch = 64;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += kBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + kBatch); ++i) idx.push_back(i);
    const auto batch = set.batch(idx);
    const auto f = models::extract_features(batch.rest, batch.mi, file.model);
    width = f.dim(1);
    features.insert(features.end(), f.data().begin(), f.data().end());
  }
  const auto result = tsne::tsne_project(features, set.size(), width, cfg.tsne);
  plot::Table table{"t-SNE of classifier features", {"x", "y", "label", "subject"}, {}};
  for (std::size_t i = 0; i < set.size(); ++i)
    table.rows.push_back({result.embedding[2 * i], result.embedding[2 * i + 1], static_cast<double>(set.labels[i]),
                          static_cast<double>(set.subjects[i])});
  plot::emit_plot(plot::PlotKind::Scatter, table, p.svg.empty() ? swap_extension(p.out, ".svg") : p.svg, p.out);
  out << "projected " << set.size() << " trials (" << width << " features) to " << p.out << "\n";
  return kOk;
}

int fail(std::ostream& err, const std::string& code, const std::string& message, int exit_code) {
  err << "error[" << code << "]: " << message << "\n";
  return exit_code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rest-similarity gate for motor-imagery EEG: synthetic data, training, LOSO evaluation and plots.",
               "restgate"};
  app.require_subcommand(1);
  app.fallthrough();
  app.get_formatter()->column_width(44);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (nested objects or dotted keys); flags override it");
  bool show_config = false;
  app.add_flag("--show-config", show_config, "print the effective configuration to stdout before running");

  const RunConfig defaults;
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_options;
  for (const auto& s : settings()) {
    flag_options[s.key] = app.add_option("--" + s.key, flag_values[s.key], s.help + " [default: " + s.get(defaults) + "]")
                              ->group("Config keys");
  }

  Paths p;
  auto* synth = app.add_subcommand("synth", "generate a synthetic trial set");
  synth->add_option("--out", p.out, "output trial file")->required();
  synth->add_option("--seed", p.seed, "overrides synth.seed");

  auto* filter = app.add_subcommand("filter", "design the bandpass filter and write its response (freq_hz, gain_db)");
  filter->add_option("--out", p.out, "response CSV")->required();
  filter->add_option("--svg", p.svg, "response plot (default: CSV path with .svg)");
  filter->add_option("--sections", p.sections, "write the second-order sections as CSV here instead of stdout");

  auto* trn = app.add_subcommand("train", "train one model");
  trn->add_option("--data", p.data, "trial file")->required();
  trn->add_option("--holdout-subject", p.holdout, "leave this subject out of training");
  auto* with_flag = trn->add_flag("--with-gate", p.with_gate, "integrate the gate (default)");
  trn->add_flag("--no-gate", p.no_gate, "classifier only")->excludes(with_flag);
  trn->add_option("--out", p.out, "model file")->required();
  trn->add_option("--history", p.history, "write <prefix>.csv and <prefix>.svg with lr and loss per epoch");
  trn->add_flag("--verbose", p.verbose, "report the loss of every epoch on stderr");

  auto* evl = app.add_subcommand("eval", "accuracy of a model on a trial file");
  evl->add_option("--data", p.data, "trial file")->required();
  evl->add_option("--model", p.model, "model file")->required();
  evl->add_option("--subject", p.subject, "evaluate this subject (default: the model's held-out subject, else all)");
  evl->add_option("--report", p.report, "write the JSON result here instead of stdout");

  auto* loso = app.add_subcommand("loso", "leave-one-subject-out evaluation with and without the gate");
  loso->add_option("--data", p.data, "trial file")->required();
  loso->add_option("--report", p.report, "JSON report")->required();
  auto* loso_with = loso->add_flag("--with-gate", p.with_gate, "only the gated variant");
  loso->add_flag("--no-gate", p.no_gate, "only the classifier-only variant")->excludes(loso_with);
  loso->add_option("--jobs", p.jobs, "folds trained in parallel")->check(CLI::PositiveNumber);
  loso->add_flag("--verbose", p.verbose, "report every fold on stderr");

  auto* gte = app.add_subcommand("gate", "gate trace of one trial (sample_index, gate_value, cosine)");
  gte->add_option("--data", p.data, "trial file")->required();
  gte->add_option("--model", p.model, "model file trained with the gate")->required();
  gte->add_option("--trial", p.trial, "trial index")->required();
  gte->add_option("--out", p.out, "trace CSV")->required();
  gte->add_option("--svg", p.svg, "trace plot (default: CSV path with .svg)");

  auto* tsn = app.add_subcommand("tsne", "2-D t-SNE of the classifier's penultimate features");
  tsn->add_option("--data", p.data, "trial file")->required();
  tsn->add_option("--model", p.model, "model file")->required();
  tsn->add_option("--subject", p.subject, "restrict to one subject");
  tsn->add_option("--out", p.out, "embedding CSV (x, y, label, subject)")->required();
  tsn->add_option("--svg", p.svg, "scatter plot (default: CSV path with .svg)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", e.what(), kUsage);
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      const auto bytes = read_file(config_path);
      apply_config_text(cfg, std::string(bytes.begin(), bytes.end()));
    }
    for (const auto& s : settings())
      if (flag_options[s.key]->count() > 0) s.set(cfg, flag_values[s.key]);
    cfg.synth.validate();
    cfg.train.validate();
    if (show_config) out << describe(cfg);

    if (synth->parsed()) return cmd_synth(cfg, p, out);
    if (filter->parsed()) return cmd_filter(cfg, p, out);
    if (trn->parsed()) return cmd_train(cfg, p, out, err);
    if (evl->parsed()) return cmd_eval(p, out);
    if (loso->parsed()) return cmd_loso(cfg, p, out, err);
    if (gte->parsed()) return cmd_gate(p, out);
    if (tsn->parsed()) return cmd_tsne(cfg, p, out);
    return fail(err, "usage", "no subcommand", kUsage);
  } catch (const ConfigError& e) {
    return fail(err, e.code(), e.what(), kUsage);
  } catch (const NumericError& e) {
    return fail(err, e.code(), e.what(), kNumericError);
  } catch (const Error& e) {
    return fail(err, e.code(), e.what(), kDataError);
  } catch (const std::exception& e) {
    return fail(err, "internal", e.what(), kDataError);
  }
}

}  // namespace restgate::cli
