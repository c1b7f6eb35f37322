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

#ifndef LDSE_DATASET_H_
#define LDSE_DATASET_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ldse/keyvalue.h"
#include "ldse/tensor.h"

namespace ldse {

inline const std::string kUnknownLanguage = "UNKNOWN";

enum class Split { kTrain, kEval };
const char *SplitName(Split split);

struct UtteranceMeta {
  std::string utterance_id;
  std::string speaker_id;
  std::string language_id;  // kUnknownLanguage when unrecognised
  Split split = Split::kTrain;

  // UNKNOWN-language utterances are kept in the list but never used for
  // training batches or trials.
  bool excluded() const { return language_id == kUnknownLanguage; }

  friend bool operator==(const UtteranceMeta &, const UtteranceMeta &) = default;
};

// Utterance id -> T x F frame matrix. Read-only once loaded.
using FeatureStore = std::map<std::string, Tensor>;

struct SyntheticConfig {
  std::size_t num_speakers = 100;
  std::size_t num_languages = 4;
  std::size_t languages_per_speaker = 2;
  std::size_t utts_per_speaker_per_language = 6;
  std::size_t frames = 20;    // T
  std::size_t feat_dim = 32;  // F_in
  double confound_strength = 2.0;  // alpha
  double noise_std = 0.5;
  double pseudo_label_error_rate = 0.05;
  // Fraction of speakers held out as the eval split (disjoint identities).
  double eval_speaker_fraction = 0.3;
  std::uint64_t seed = 0;

  void Validate() const;
  KeyValues ToKeyValues() const;
  static SyntheticConfig FromKeyValues(const KeyValues &kv) { return FromKeyValues(kv, SyntheticConfig()); }
  static SyntheticConfig FromKeyValues(const KeyValues &kv, SyntheticConfig base);
};

struct Dataset {
  // Sorted by utterance id. language_id holds the (pseudo-)label used for
  // training.
  std::vector<UtteranceMeta> metadata;
  FeatureStore features;
  // Ground-truth language per metadata entry; empty for ingested data.
  std::vector<std::string> true_languages;

  const UtteranceMeta &Meta(const std::string &utterance_id) const;
};

// frame = s_speaker + alpha * l_language + noise_std * N(0, I), with unit
// random identity vectors s and l. A fraction of language labels is then
// replaced with a wrong language to mimic pseudo-labels.
Dataset GenerateSynthetic(const SyntheticConfig &config);

// CSV `utteranceId,speakerId,languageId,split` with a header row.
std::vector<UtteranceMeta> ReadMetadata(std::istream &is, const std::string &source);
std::vector<UtteranceMeta> LoadMetadata(const std::string &path);
void WriteMetadata(std::ostream &os, const std::vector<UtteranceMeta> &metadata);
void SaveMetadata(const std::string &path, const std::vector<UtteranceMeta> &metadata);

// Binary records: u32 id length, id bytes, u32 T, u32 F, T*F float64,
// all little-endian, in id order.
FeatureStore ReadFeatures(std::istream &is, const std::string &source);
FeatureStore LoadFeatures(const std::string &path);
void WriteFeatures(std::ostream &os, const FeatureStore &features);
void SaveFeatures(const std::string &path, const FeatureStore &features);

// Class-id view of the training split: sorted speaker and language ids
// and, per speaker, its usable utterances grouped by language.
struct TrainingIndex {
  std::vector<std::string> speakers;
  std::vector<std::string> languages;
  // speaker -> language id -> utterance ids (sorted)
  std::vector<std::map<std::string, std::vector<std::string>>> by_speaker;

  std::size_t SpeakerClass(const std::string &speaker_id) const;
  std::size_t LanguageClass(const std::string &language_id) const;
  std::size_t NumUtterances() const;
};

// Languages are taken from every non-excluded utterance so that eval-only
// languages still get a class id.
TrainingIndex BuildTrainingIndex(const Dataset &data);

struct Batch {
  std::size_t speakers = 0;       // N
  std::size_t per_speaker = 0;    // M
  std::size_t frames_per_utt = 0; // T
  Tensor frames;                  // (N*M*T) x F, speaker-major
  std::vector<std::size_t> speaker_labels;   // N*M
  std::vector<std::size_t> language_labels;  // N*M
  std::vector<std::string> utterance_ids;    // N*M
};

// N distinct speakers, M utterances each. Speakers are read from a seeded
// stream of permutations so every speaker is drawn equally often over
// time; utterances rotate through the speaker's languages so a batch
// carries cross-lingual variation. Deterministic in (seed, step).
Batch SampleBatch(const Dataset &data, const TrainingIndex &index, std::size_t speakers,
                  std::size_t per_speaker, std::size_t frames_per_utt, std::uint64_t seed,
                  std::uint64_t step);

}  // namespace ldse

#endif  // LDSE_DATASET_H_
