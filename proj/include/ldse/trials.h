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

#ifndef LDSE_TRIALS_H_
#define LDSE_TRIALS_H_

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "ldse/dataset.h"
#include "ldse/errors.h"
#include "ldse/keyvalue.h"

namespace ldse {

struct Trial {
  std::string enroll_id;
  std::string test_id;
  bool target = false;

  friend bool operator==(const Trial &, const Trial &) = default;
  friend auto operator<=>(const Trial &a, const Trial &b) {
    return std::tie(a.enroll_id, a.test_id) <=> std::tie(b.enroll_id, b.test_id);
  }
};

// Raised when the metadata admits no cross-lingual target pair.
class ProtocolEmptyError : public ContractError {
 public:
  explicit ProtocolEmptyError(const std::string &what) : ContractError(what) {}
};

struct ProtocolConfig {
  std::size_t max_speakers_per_language = 1000;
  std::size_t max_samples_per_speaker = 15;
  std::optional<std::size_t> pairs_budget;  // cap on trials per label
  std::uint64_t seed = 0;

  void Validate() const;
  KeyValues ToKeyValues() const;
  static ProtocolConfig FromKeyValues(const KeyValues &kv) { return FromKeyValues(kv, ProtocolConfig()); }
  static ProtocolConfig FromKeyValues(const KeyValues &kv, ProtocolConfig base);
};

// Random streams used by the builder. Each step draws from
// Rng(DeriveSeed(config.seed, tag + k)) where k is the language or speaker
// position in sorted order where applicable.
namespace protocol_streams {
inline constexpr std::uint64_t kLanguageSpeakers = 0x7100000;
inline constexpr std::uint64_t kSpeakerSamples = 0x7200000;
inline constexpr std::uint64_t kPositiveDownsample = 0x7300000;
inline constexpr std::uint64_t kNegativeSample = 0x7400000;
inline constexpr std::uint64_t kPositiveOrder = 0x7500000;
inline constexpr std::uint64_t kNegativeOrder = 0x7600000;
}  // namespace protocol_streams

// Builds a balanced bilingual verification list:
//  - targets pair two utterances of one speaker in different languages;
//  - nontargets pair utterances of two speakers in the same language;
//  - UNKNOWN-language utterances are skipped;
//  - per language at most max_speakers_per_language speakers and per
//    speaker at most max_samples_per_speaker utterances are kept (sort,
//    seeded shuffle, truncate);
//  - the larger side is downsampled so both labels have the same count.
//    Nontargets are drawn uniformly without replacement from all
//    same-language different-speaker pairs.
// Output: targets then nontargets, each sorted then shuffled with a seed.
// Within a trial the enroll id is the lexicographically smaller one.
std::vector<Trial> BuildBilingualProtocol(const std::vector<UtteranceMeta> &metadata,
                                          const ProtocolConfig &config);

struct Violation {
  std::size_t trial_index;  // SIZE_MAX for list-level violations
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

// Checks every protocol invariant. Cap checks run only when `config` is given.
ValidationReport ValidateProtocol(const std::vector<Trial> &trials,
                                  const std::vector<UtteranceMeta> &metadata,
                                  const std::optional<ProtocolConfig> &config = std::nullopt);

struct ProtocolStats {
  std::size_t targets = 0;
  std::size_t nontargets = 0;
  // Utterance slots per language (each trial contributes two).
  std::map<std::string, std::size_t> utterances_by_language;
  // Target trials per unordered language pair "a|b".
  std::map<std::string, std::size_t> target_language_pairs;
  std::map<std::string, std::set<std::string>> speakers_by_language;

  ProtocolStats &operator+=(const ProtocolStats &o);
  friend bool operator==(const ProtocolStats &, const ProtocolStats &) = default;
};

ProtocolStats ComputeProtocolStats(const std::vector<Trial> &trials,
                                   const std::vector<UtteranceMeta> &metadata);

// `label enrollId testId` per line, label 1 (target) or 0. Lines starting
// with '#' are comments; the writer puts the provenance block there.
std::vector<Trial> ReadTrials(std::istream &is, const std::string &source);
std::vector<Trial> LoadTrials(const std::string &path);
void WriteTrials(std::ostream &os, const std::vector<Trial> &trials, const KeyValues &provenance = {});
void SaveTrials(const std::string &path, const std::vector<Trial> &trials, const KeyValues &provenance = {});

}  // namespace ldse

#endif  // LDSE_TRIALS_H_
