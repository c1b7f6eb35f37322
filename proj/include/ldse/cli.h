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

#ifndef LDSE_CLI_H_
#define LDSE_CLI_H_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ldse/dataset.h"
#include "ldse/eval.h"
#include "ldse/keyvalue.h"
#include "ldse/losses.h"
#include "ldse/trainer.h"
#include "ldse/trials.h"

namespace ldse::cli {

enum class ReportFormat { kText, kCsv };

// Every tunable of every command, resolved from defaults, a config file
// and flags.
struct RunConfig {
  SyntheticConfig synth;
  ProtocolConfig protocol;
  TrainConfig train;
  ProbeConfig probe;
  EvalConfig eval;
  ReportFormat format = ReportFormat::kText;
  std::string split = "eval";  // metadata split read by build-trials, probe, compare: train, eval or all

  // All keys with their effective values, in a fixed order.
  KeyValues ToKeyValues() const;
};

// Keys a config file or --set may name.
const std::vector<std::string> &KnownKeys();

// Adds a flag-supplied key. Giving one key two different values from two
// flags is a ParseError naming both.
void AddFlag(KeyValues &flags, const std::string &key, const std::string &value, const std::string &origin);

// Flags override file values. Unknown keys and malformed values raise
// ParseError naming the key.
RunConfig ResolveConfig(const KeyValues &file, const KeyValues &flags);

struct RunSummary {
  Mode mode;
  std::uint64_t seed;
  EvalReport report;
  bool diverged = false;
  bool log_finite = true;  // every logged loss was finite
};

struct ModeSummary {
  Mode mode;
  std::vector<RunSummary> runs;
  double eer_mean = 0, eer_std = 0;
  double dcf_mean = 0, dcf_std = 0;
  double slr_mean = 0, slr_std = 0;
};

struct CompareInputs {
  const Dataset *train_data = nullptr;  // training metadata (pseudo-labels) + features
  const std::vector<Trial> *trials = nullptr;
  // Probe utterances with the language labels the probe should predict.
  const std::vector<UtteranceMeta> *probe_metadata = nullptr;
};

// Trains every mode in `modes` once per seed (train.seed + k, probe.seed +
// k for k < seeds) and evaluates each run on the trials and the probe.
// `progress` receives one line per finished run.
std::vector<ModeSummary> RunComparison(const RunConfig &config, const CompareInputs &inputs,
                                       const std::vector<Mode> &modes, std::size_t seeds,
                                       const std::function<void(const RunSummary &)> &progress = {});

// Table with one row per mode: EER (%), minDCF and SLR accuracy (%), each
// as mean and standard deviation over seeds.
void WriteComparison(std::ostream &os, const std::vector<ModeSummary> &rows, ReportFormat format);

// Entry point of the `ldse` executable. Returns 0 on success, 1 on a
// contract or numeric error, 2 on a parse or usage error.
int Run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

}  // namespace ldse::cli

#endif  // LDSE_CLI_H_
