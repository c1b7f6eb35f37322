// Copyright 2026  The ldse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "ldse/cli.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "ldse/errors.h"
#include "ldse/model.h"

namespace ldse::cli {

namespace fs = std::filesystem;

namespace {

std::size_t Count(const KeyValues &kv, const std::string &key, std::size_t fallback) {
  const std::int64_t v = kv.GetInt(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ParseError(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

ReportFormat ParseFormat(const std::string &s) {
  if (s == "text") return ReportFormat::kText;
  if (s == "csv") return ReportFormat::kCsv;
  throw ParseError("report.format: expected text or csv, got `" + s + "`");
}

void RequireFile(const std::string &path, const char *what) {
  if (path.empty()) throw ContractError(std::string("missing --") + what);
  if (!fs::is_regular_file(path)) throw ContractError(std::string(what) + ": no such file " + path);
}

void PrepareOutput(const std::string &path) {
  if (path.empty()) return;
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

KeyValues Combine(const KeyValues &a, const KeyValues &b) {
  KeyValues out = a;
  for (const auto &e : b.entries()) out.Set(e.key, e.value, e.origin);
  return out;
}

void WriteText(const std::string &path, const std::string &text) {
  PrepareOutput(path);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot write " + path);
  os << text;
  if (!os) throw ContractError("write failed: " + path);
}

std::vector<UtteranceMeta> FilterSplit(const std::vector<UtteranceMeta> &metadata, const std::string &split) {
  if (split == "all") return metadata;
  const Split want = split == "train" ? Split::kTrain : Split::kEval;
  std::vector<UtteranceMeta> out;
  for (const auto &m : metadata)
    if (m.split == want) out.push_back(m);
  return out;
}

std::pair<double, double> MeanStd(const std::vector<double> &v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string Fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

KeyValues RunConfig::ToKeyValues() const {
  KeyValues kv = synth.ToKeyValues();
  kv = Combine(kv, protocol.ToKeyValues());
  kv = Combine(kv, train.ToKeyValues());
  kv = Combine(kv, probe.ToKeyValues());
  kv.Set("eval.num_segments", std::to_string(eval.segments.num_segments));
  kv.Set("eval.seg_frames", std::to_string(eval.segments.seg_frames));
  kv.Set("eval.p_target", FormatDouble(eval.dcf.p_target));
  kv.Set("eval.c_miss", FormatDouble(eval.dcf.c_miss));
  kv.Set("eval.c_fa", FormatDouble(eval.dcf.c_fa));
  kv.Set("report.format", format == ReportFormat::kText ? "text" : "csv");
  kv.Set("data.split", split);
  return kv;
}

const std::vector<std::string> &KnownKeys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    const KeyValues defaults = RunConfig().ToKeyValues();
    for (const auto &e : defaults.entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void AddFlag(KeyValues &flags, const std::string &key, const std::string &value, const std::string &origin) {
  if (const auto *prev = flags.Find(key)) {
    if (prev->value != value)
      throw ParseError("conflicting values for `" + key + "`: " + prev->origin + " and " + origin);
    return;
  }
  flags.Set(key, value, origin);
}

RunConfig ResolveConfig(const KeyValues &file, const KeyValues &flags) {
  const auto &known = KnownKeys();
  for (const KeyValues *kv : {&file, &flags})
    for (const auto &e : kv->entries())
      if (std::find(known.begin(), known.end(), e.key) == known.end())
        throw ParseError("unknown config key `" + e.key + "`" + (e.origin.empty() ? "" : " (" + e.origin + ")"));
  const KeyValues merged = Combine(file, flags);
  RunConfig c;
  c.synth = SyntheticConfig::FromKeyValues(merged, c.synth);
  c.protocol = ProtocolConfig::FromKeyValues(merged, c.protocol);
  c.train = TrainConfig::FromKeyValues(merged, c.train);
  c.probe = ProbeConfig::FromKeyValues(merged, c.probe);
  c.eval.segments.num_segments = Count(merged, "eval.num_segments", c.eval.segments.num_segments);
  c.eval.segments.seg_frames = Count(merged, "eval.seg_frames", c.eval.segments.seg_frames);
  c.eval.dcf.p_target = merged.GetDouble("eval.p_target", c.eval.dcf.p_target);
  c.eval.dcf.c_miss = merged.GetDouble("eval.c_miss", c.eval.dcf.c_miss);
  c.eval.dcf.c_fa = merged.GetDouble("eval.c_fa", c.eval.dcf.c_fa);
  c.format = ParseFormat(merged.GetString("report.format", "text"));
  c.split = merged.GetString("data.split", c.split);
  if (c.split != "train" && c.split != "eval" && c.split != "all")
    throw ParseError("data.split: expected train, eval or all, got `" + c.split + "`");
  return c;
}

std::vector<ModeSummary> RunComparison(const RunConfig &config, const CompareInputs &inputs,
                                       const std::vector<Mode> &modes, std::size_t seeds,
                                       const std::function<void(const RunSummary &)> &progress) {
  if (!inputs.train_data || !inputs.trials || !inputs.probe_metadata)
    throw ContractError("compare: missing inputs");
  if (seeds < 1) throw ContractError("compare: need at least one seed");
  std::vector<ModeSummary> rows;
  for (Mode mode : modes) {
    ModeSummary row;
    row.mode = mode;
    std::vector<double> eer, dcf, slr;
    for (std::size_t k = 0; k < seeds; ++k) {
      TrainConfig tc = config.train;
      tc.mode = mode;
      tc.seed = config.train.seed + k;
      FitResult fit = Fit(tc, *inputs.train_data);
      ModelEmbedder embedder(fit.model);
      RunSummary run{mode, tc.seed, {}, fit.diverged, true};
      for (const auto &log : fit.log)
        for (double v : {log.mean.spk, log.mean.lang, log.mean.corr, log.mean.total})
          run.log_finite = run.log_finite && std::isfinite(v);
      run.report = EvaluateProtocol(embedder, *inputs.trials, inputs.train_data->features, config.eval).report;
      ProbeConfig pc = config.probe;
      pc.seed = config.probe.seed + k;
      run.report.slr_accuracy =
          SlrProbe(embedder, *inputs.probe_metadata, inputs.train_data->features, pc).accuracy;
      eer.push_back(run.report.eer);
      dcf.push_back(run.report.min_dcf);
      slr.push_back(*run.report.slr_accuracy);
      if (progress) progress(run);
      row.runs.push_back(std::move(run));
    }
    std::tie(row.eer_mean, row.eer_std) = MeanStd(eer);
    std::tie(row.dcf_mean, row.dcf_std) = MeanStd(dcf);
    std::tie(row.slr_mean, row.slr_std) = MeanStd(slr);
    rows.push_back(std::move(row));
  }
  return rows;
}

void WriteComparison(std::ostream &os, const std::vector<ModeSummary> &rows, ReportFormat format) {
  if (format == ReportFormat::kCsv) {
    os << "mode,eer_pct_mean,eer_pct_std,min_dcf_mean,min_dcf_std,slr_acc_pct_mean,slr_acc_pct_std,runs,diverged\n";
    for (const auto &r : rows) {
      std::size_t diverged = 0;
      for (const auto &run : r.runs) diverged += run.diverged;
      os << ModeName(r.mode) << ',' << FormatDouble(100 * r.eer_mean) << ',' << FormatDouble(100 * r.eer_std) << ','
         << FormatDouble(r.dcf_mean) << ',' << FormatDouble(r.dcf_std) << ',' << FormatDouble(100 * r.slr_mean) << ','
         << FormatDouble(100 * r.slr_std) << ',' << r.runs.size() << ',' << diverged << '\n';
    }
    return;
  }
  os << std::left << std::setw(10) << "mode" << std::setw(18) << "EER (%)" << std::setw(20) << "minDCF"
     << std::setw(18) << "SLR Acc. (%)" << "runs\n";
  for (const auto &r : rows) {
    std::size_t diverged = 0;
    for (const auto &run : r.runs) diverged += run.diverged;
    os << std::left << std::setw(10) << ModeName(r.mode)
       << std::setw(18) << (Fixed(100 * r.eer_mean, 2) + " +- " + Fixed(100 * r.eer_std, 2))
       << std::setw(20) << (Fixed(r.dcf_mean, 3) + " +- " + Fixed(r.dcf_std, 3))
       << std::setw(18) << (Fixed(100 * r.slr_mean, 1) + " +- " + Fixed(100 * r.slr_std, 1)) << r.runs.size();
    if (diverged) os << " (" << diverged << " diverged)";
    os << '\n';
  }
}

namespace {

// One command-line option that maps onto a config key. Every occurrence
// is kept so repeated flags with different values can be reported.
struct Binding {
  std::string flag;
  std::string key;
  std::vector<std::string> values;
};

struct CommandState {
  std::string config_path;
  std::vector<std::string> sets;
  std::deque<Binding> bindings;
  std::map<std::string, std::string> paths;
  std::size_t seeds = 3;
  std::string modes = "baseline,grl,cos,mapc,ours";
  bool check_caps = false;
};

void Bind(CLI::App *sub, CommandState &st, const std::string &flag, const std::string &key, const std::string &help) {
  Binding &b = st.bindings.emplace_back(Binding{flag, key, {}});
  sub->add_option(flag, b.values, help)->allow_extra_args(false);
}

void PathOption(CLI::App *sub, CommandState &st, const std::string &name, const std::string &help) {
  sub->add_option("--" + name, st.paths[name], help);
}

KeyValues CollectFlags(const CommandState &st) {
  KeyValues flags;
  for (const auto &b : st.bindings)
    for (const auto &v : b.values) AddFlag(flags, b.key, v, b.flag);
  for (const auto &s : st.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError("--set expects key=value, got `" + s + "`");
    AddFlag(flags, s.substr(0, eq), s.substr(eq + 1), "--set " + s.substr(0, eq));
  }
  return flags;
}

KeyValues LoadConfigFile(const std::string &path) {
  if (path.empty()) return {};
  std::ifstream is(path);
  if (!is) throw ContractError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return KeyValues::Parse(ss.str(), path);
}

Dataset LoadDataset(const std::string &metadata, const std::string &features) {
  RequireFile(metadata, "metadata");
  RequireFile(features, "features");
  Dataset d;
  d.metadata = LoadMetadata(metadata);
  std::sort(d.metadata.begin(), d.metadata.end(),
            [](const UtteranceMeta &a, const UtteranceMeta &b) { return a.utterance_id < b.utterance_id; });
  d.features = LoadFeatures(features);
  for (const auto &m : d.metadata)
    if (!d.features.count(m.utterance_id)) throw ContractError("features: no record for utterance " + m.utterance_id);
  return d;
}

std::vector<Mode> ParseModes(const std::string &list) {
  std::vector<Mode> modes;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) modes.push_back(ParseMode(item));
  if (modes.empty()) throw ParseError("--modes: empty list");
  return modes;
}

int Execute(const std::string &command, CommandState &st, std::ostream &out, std::ostream &err) {
  const RunConfig config = ResolveConfig(LoadConfigFile(st.config_path), CollectFlags(st));
  const KeyValues effective = config.ToKeyValues();
  auto path = [&](const std::string &name) { return st.paths[name]; };

  if (command == "synth") {
    const std::string dir = path("out");
    if (dir.empty()) throw ContractError("missing --out");
    config.synth.Validate();
    Dataset d = GenerateSynthetic(config.synth);
    fs::create_directories(dir);
    SaveMetadata((fs::path(dir) / "metadata.csv").string(), d.metadata);
    std::vector<UtteranceMeta> truth = d.metadata;
    for (std::size_t i = 0; i < truth.size(); ++i) truth[i].language_id = d.true_languages[i];
    SaveMetadata((fs::path(dir) / "truth.csv").string(), truth);
    SaveFeatures((fs::path(dir) / "features.bin").string(), d.features);
    WriteText((fs::path(dir) / "config.txt").string(), effective.ToText());
    out << "wrote " << d.metadata.size() << " utterances to " << dir << "\n";
    return 0;
  }

  if (command == "build-trials") {
    RequireFile(path("metadata"), "metadata");
    if (path("out").empty()) throw ContractError("missing --out");
    const auto metadata = FilterSplit(LoadMetadata(path("metadata")), config.split);
    const auto trials = BuildBilingualProtocol(metadata, config.protocol);
    PrepareOutput(path("out"));
    SaveTrials(path("out"), trials, effective);
    const ProtocolStats stats = ComputeProtocolStats(trials, metadata);
    out << "wrote " << trials.size() << " trials (" << stats.targets << " target, " << stats.nontargets
        << " nontarget) to " << path("out") << "\n";
    return 0;
  }

  if (command == "validate-trials") {
    RequireFile(path("trials"), "trials");
    RequireFile(path("metadata"), "metadata");
    const auto trials = LoadTrials(path("trials"));
    const auto metadata = LoadMetadata(path("metadata"));
    const ValidationReport report =
        ValidateProtocol(trials, metadata, st.check_caps ? std::optional(config.protocol) : std::nullopt);
    for (const auto &v : report.violations) {
      if (v.trial_index == SIZE_MAX) out << "list: " << v.message << "\n";
      else out << "trial " << v.trial_index << ": " << v.message << "\n";
    }
    out << report.violations.size() << " violations in " << trials.size() << " trials\n";
    return report.ok() ? 0 : 1;
  }

  if (command == "train") {
    if (path("out").empty()) throw ContractError("missing --out");
    const Dataset data = LoadDataset(path("metadata"), path("features"));
    const std::string log_path = path("log").empty() ? path("out") + ".log.jsonl" : path("log");
    PrepareOutput(path("out"));
    PrepareOutput(log_path);
    std::ofstream log(log_path);
    if (!log) throw ContractError("cannot write " + log_path);
    FitResult fit = Fit(config.train, data, [&](const EpochLog &e) {
      log << e.ToJsonLine() << "\n";
      log.flush();
    });
    WriteCheckpoint(path("out"), Checkpoint{fit.model, effective, "epochs=" + std::to_string(fit.log.size())});
    out << "trained " << ModeName(config.train.mode) << " for " << fit.log.size() << " epochs";
    if (!fit.log.empty()) out << ", final lTotal " << FormatDouble(fit.log.back().mean.total);
    if (fit.diverged) out << " (diverged)";
    out << "\n";
    return 0;
  }

  if (command == "evaluate") {
    RequireFile(path("checkpoint"), "checkpoint");
    RequireFile(path("trials"), "trials");
    RequireFile(path("features"), "features");
    const Checkpoint ckpt = ReadCheckpoint(path("checkpoint"));
    const auto trials = LoadTrials(path("trials"));
    const FeatureStore features = LoadFeatures(path("features"));
    const ModelEmbedder embedder(ckpt.model);
    const ProtocolScores res = EvaluateProtocol(embedder, trials, features, config.eval);
    // Results, then this run's effective config ("# ") and the checkpoint's
    // training config ("#@ ") as comments.
    const std::string report =
        res.report.ToKeyValues().ToText() + effective.ToText("# ") + ckpt.provenance.ToText("#@ ");
    if (!path("scores").empty()) {
      PrepareOutput(path("scores"));
      SaveScores(path("scores"), trials, res.scores);
    }
    if (!path("report").empty()) WriteText(path("report"), report);
    out << res.report.ToKeyValues().ToText();
    return 0;
  }

  if (command == "probe") {
    RequireFile(path("checkpoint"), "checkpoint");
    const Checkpoint ckpt = ReadCheckpoint(path("checkpoint"));
    const Dataset data = LoadDataset(path("metadata"), path("features"));
    const ModelEmbedder embedder(ckpt.model);
    const ProbeResult r = SlrProbe(embedder, FilterSplit(data.metadata, config.split), data.features, config.probe);
    out << "probe.accuracy = " << FormatDouble(r.accuracy) << "\n"
        << "probe.majority_rate = " << FormatDouble(r.majority_rate) << "\n"
        << "probe.train_size = " << r.train_size << "\n"
        << "probe.test_size = " << r.test_size << "\n";
    return 0;
  }

  if (command == "compare") {
    const auto modes = ParseModes(st.modes);
    const Dataset data = LoadDataset(path("metadata"), path("features"));
    RequireFile(path("trials"), "trials");
    const auto trials = LoadTrials(path("trials"));
    std::vector<UtteranceMeta> probe_meta = data.metadata;
    if (!path("probe-metadata").empty()) {
      RequireFile(path("probe-metadata"), "probe-metadata");
      probe_meta = LoadMetadata(path("probe-metadata"));
    }
    probe_meta = FilterSplit(probe_meta, config.split);
    const auto rows = RunComparison(config, {&data, &trials, &probe_meta}, modes, st.seeds, [&](const RunSummary &r) {
      err << ModeName(r.mode) << " seed " << r.seed << ": eer " << FormatDouble(r.report.eer) << " minDCF "
          << FormatDouble(r.report.min_dcf) << " slr " << FormatDouble(*r.report.slr_accuracy)
          << (r.diverged ? " (diverged)" : "") << "\n";
    });
    std::ostringstream table;
    if (config.format == ReportFormat::kText) table << effective.ToText("# ") << "# compare.seeds = " << st.seeds << "\n";
    WriteComparison(table, rows, config.format);
    if (!path("out").empty()) WriteText(path("out"), table.str());
    out << table.str();
    return 0;
  }
  throw ParseError("unknown command `" + command + "`");
}

}  // namespace

int Run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"Language-disentangled speaker embedding lab", "ldse"};
  app.require_subcommand(1);
  std::map<std::string, CommandState> states;

  auto command = [&](const std::string &name, const std::string &help) {
    CLI::App *sub = app.add_subcommand(name, help);
    CommandState &st = states[name];
    sub->add_option("--config", st.config_path, "key = value config file");
    sub->add_option("--set", st.sets, "override one config key (key=value)")->allow_extra_args(false);
    return std::pair<CLI::App *, CommandState *>(sub, &st);
  };

  {
    auto [sub, st] = command("synth", "generate a synthetic bilingual corpus");
    PathOption(sub, *st, "out", "output directory");
    Bind(sub, *st, "--seed", "synth.seed", "random seed");
    Bind(sub, *st, "--speakers", "synth.num_speakers", "number of speakers");
    Bind(sub, *st, "--languages", "synth.num_languages", "number of languages");
    Bind(sub, *st, "--alpha", "synth.confound_strength", "language confound strength");
    Bind(sub, *st, "--pseudo-error", "synth.pseudo_label_error_rate", "wrong pseudo-label rate");
  }
  {
    auto [sub, st] = command("build-trials", "build a bilingual verification list");
    PathOption(sub, *st, "metadata", "metadata csv");
    PathOption(sub, *st, "out", "trial list to write");
    Bind(sub, *st, "--split", "data.split", "train, eval or all (default eval)");
    Bind(sub, *st, "--seed", "trials.seed", "random seed");
    Bind(sub, *st, "--pairs-budget", "trials.pairs_budget", "max trials per label or none");
  }
  {
    auto [sub, st] = command("validate-trials", "check a trial list against metadata");
    PathOption(sub, *st, "trials", "trial list");
    PathOption(sub, *st, "metadata", "metadata csv");
    sub->add_flag("--check-caps", st->check_caps, "also check per-language and per-speaker caps");
  }
  {
    auto [sub, st] = command("train", "train one model");
    PathOption(sub, *st, "metadata", "metadata csv");
    PathOption(sub, *st, "features", "feature file");
    PathOption(sub, *st, "out", "checkpoint to write");
    PathOption(sub, *st, "log", "training log (default <out>.log.jsonl)");
    Bind(sub, *st, "--mode", "train.mode", "baseline, grl, cos, mapc or ours");
    Bind(sub, *st, "--lambda", "train.lambda", "language loss weight");
    Bind(sub, *st, "--epochs", "train.epochs", "training epochs");
    Bind(sub, *st, "--lr0", "train.lr0", "initial learning rate");
    Bind(sub, *st, "--seed", "train.seed", "random seed");
  }
  {
    auto [sub, st] = command("evaluate", "score a trial list");
    PathOption(sub, *st, "checkpoint", "model checkpoint");
    PathOption(sub, *st, "trials", "trial list");
    PathOption(sub, *st, "features", "feature file");
    PathOption(sub, *st, "scores", "per-trial score dump to write");
    PathOption(sub, *st, "report", "report to write");
    Bind(sub, *st, "--segments", "eval.num_segments", "segments per utterance");
    Bind(sub, *st, "--p-target", "eval.p_target", "minDCF target prior");
  }
  {
    auto [sub, st] = command("probe", "language probe on frozen speaker embeddings");
    PathOption(sub, *st, "checkpoint", "model checkpoint");
    PathOption(sub, *st, "metadata", "metadata csv with language labels");
    PathOption(sub, *st, "features", "feature file");
    Bind(sub, *st, "--split", "data.split", "train, eval or all (default eval)");
    Bind(sub, *st, "--seed", "probe.seed", "random seed");
  }
  {
    auto [sub, st] = command("compare", "train and evaluate every mode over several seeds");
    PathOption(sub, *st, "metadata", "training metadata csv");
    PathOption(sub, *st, "features", "feature file");
    PathOption(sub, *st, "trials", "trial list");
    PathOption(sub, *st, "probe-metadata", "metadata with probe language labels (default --metadata)");
    PathOption(sub, *st, "out", "report to write");
    Bind(sub, *st, "--split", "data.split", "probe split: train, eval or all (default eval)");
    sub->add_option("--seeds", st->seeds, "runs per mode (default 3)");
    sub->add_option("--modes", st->modes, "comma-separated modes");
    Bind(sub, *st, "--epochs", "train.epochs", "training epochs");
    Bind(sub, *st, "--format", "report.format", "text or csv");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  std::string name;
  for (const CLI::App *sub : app.get_subcommands()) name = sub->get_name();
  try {
    return Execute(name, states.at(name), out, err);
  } catch (const ParseError &e) {
    err << "ldse " << name << ": " << e.what() << "\n";
    return 2;
  } catch (const ContractError &e) {
    err << "ldse " << name << ": " << e.what() << "\n";
    return 1;
  } catch (const ShapeError &e) {
    err << "ldse " << name << ": " << e.what() << "\n";
    return 1;
  } catch (const NumericError &e) {
    err << "ldse " << name << ": " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error &e) {
    err << "ldse " << name << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ldse::cli
