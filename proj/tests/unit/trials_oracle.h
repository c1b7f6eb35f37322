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

#ifndef LDSE_TESTS_TRIALS_ORACLE_H_
#define LDSE_TESTS_TRIALS_ORACLE_H_

// Exhaustive-enumeration reference for the bilingual protocol builder and
// a random metadata generator, shared by unit and acceptance tests.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ldse/random.h"
#include "ldse/trials.h"

namespace ldse::testing {

// Speakers with 1-3 languages and 1-20 utterances per language; about 3%
// of utterances carry the UNKNOWN language.
inline std::vector<UtteranceMeta> RandomMetadata(std::uint64_t seed, std::size_t speakers,
                                                 std::size_t languages) {
  Rng rng(seed);
  std::vector<UtteranceMeta> out;
  for (std::size_t s = 0; s < speakers; ++s) {
    const std::string spk = "s" + std::to_string(100 + s);
    std::vector<std::size_t> langs(languages);
    for (std::size_t l = 0; l < languages; ++l) langs[l] = l;
    rng.Shuffle(langs);
    langs.resize(1 + rng.UniformInt(std::min<std::size_t>(3, languages)));
    std::size_t u = 0;
    for (std::size_t l : langs) {
      const std::size_t n = 1 + rng.UniformInt(20);
      for (std::size_t k = 0; k < n; ++k, ++u) {
        const std::string lang = rng.Uniform() < 0.03 ? kUnknownLanguage : "L" + std::to_string(l);
        out.push_back({spk + "_" + std::to_string(1000 + u), spk, lang, Split::kEval});
      }
    }
  }
  return out;
}

inline Trial OrderedTrial(const std::string &a, const std::string &b, bool target) {
  return a < b ? Trial{a, b, target} : Trial{b, a, target};
}

inline std::vector<std::string> SortShuffleTruncate(std::vector<std::string> v, std::size_t cap,
                                                    std::uint64_t seed) {
  std::sort(v.begin(), v.end());
  Rng rng(seed);
  rng.Shuffle(v);
  if (v.size() > cap) v.resize(cap);
  std::sort(v.begin(), v.end());
  return v;
}

// Builds the protocol by listing every candidate pair explicitly.
inline std::vector<Trial> BruteForceProtocol(const std::vector<UtteranceMeta> &metadata,
                                             const ProtocolConfig &config) {
  namespace ps = protocol_streams;
  std::map<std::string, const UtteranceMeta *> by_id;
  std::set<std::string> speakers;
  std::map<std::string, std::set<std::string>> speakers_of_language;
  for (const auto &m : metadata) {
    if (m.language_id == kUnknownLanguage) continue;
    by_id[m.utterance_id] = &m;
    speakers.insert(m.speaker_id);
    speakers_of_language[m.language_id].insert(m.speaker_id);
  }
  std::set<std::pair<std::string, std::string>> kept;  // (language, speaker)
  std::uint64_t k = 0;
  for (const auto &[lang, spk] : speakers_of_language)
    for (const auto &s : SortShuffleTruncate({spk.begin(), spk.end()}, config.max_speakers_per_language,
                                             DeriveSeed(config.seed, ps::kLanguageSpeakers + k++)))
      kept.emplace(lang, s);

  std::vector<const UtteranceMeta *> selected;
  k = 0;
  for (const auto &spk : speakers) {
    std::vector<std::string> ids;
    for (const auto &[id, m] : by_id)
      if (m->speaker_id == spk && kept.count({m->language_id, spk})) ids.push_back(id);
    const std::uint64_t seed = DeriveSeed(config.seed, ps::kSpeakerSamples + k++);
    if (ids.empty()) continue;
    for (const auto &id : SortShuffleTruncate(ids, config.max_samples_per_speaker, seed))
      selected.push_back(by_id.at(id));
  }
  std::sort(selected.begin(), selected.end(),
            [](const UtteranceMeta *a, const UtteranceMeta *b) { return a->utterance_id < b->utterance_id; });

  std::vector<Trial> positives;
  for (std::size_t i = 0; i < selected.size(); ++i)
    for (std::size_t j = i + 1; j < selected.size(); ++j)
      if (selected[i]->speaker_id == selected[j]->speaker_id && selected[i]->language_id != selected[j]->language_id)
        positives.push_back(OrderedTrial(selected[i]->utterance_id, selected[j]->utterance_id, true));
  std::sort(positives.begin(), positives.end());

  // Every same-language pair in (language, i, j) order, same-speaker ones
  // included so the draw indices line up with a flat pair space.
  struct Pair {
    const UtteranceMeta *a, *b;
  };
  std::vector<Pair> space;
  std::map<std::string, std::vector<const UtteranceMeta *>> by_language;
  for (const auto *m : selected) by_language[m->language_id].push_back(m);
  std::size_t valid = 0;
  for (const auto &[lang, utts] : by_language)
    for (std::size_t i = 0; i < utts.size(); ++i)
      for (std::size_t j = i + 1; j < utts.size(); ++j) {
        space.push_back({utts[i], utts[j]});
        valid += utts[i]->speaker_id != utts[j]->speaker_id;
      }
  if (positives.empty() || valid == 0) throw ProtocolEmptyError("oracle: empty protocol");

  std::size_t count = std::min(positives.size(), valid);
  if (config.pairs_budget) count = std::min(count, *config.pairs_budget);
  if (positives.size() > count) {
    Rng rng(DeriveSeed(config.seed, ps::kPositiveDownsample));
    rng.Shuffle(positives);
    positives.resize(count);
    std::sort(positives.begin(), positives.end());
  }
  std::vector<Trial> negatives;
  std::vector<bool> taken(space.size(), false);
  Rng rng(DeriveSeed(config.seed, ps::kNegativeSample));
  while (negatives.size() < count) {
    const std::size_t idx = rng.UniformInt(space.size());
    if (taken[idx]) continue;
    if (space[idx].a->speaker_id == space[idx].b->speaker_id) continue;
    taken[idx] = true;
    negatives.push_back(OrderedTrial(space[idx].a->utterance_id, space[idx].b->utterance_id, false));
  }
  std::sort(negatives.begin(), negatives.end());
  Rng pos_rng(DeriveSeed(config.seed, ps::kPositiveOrder));
  pos_rng.Shuffle(positives);
  Rng neg_rng(DeriveSeed(config.seed, ps::kNegativeOrder));
  neg_rng.Shuffle(negatives);
  positives.insert(positives.end(), negatives.begin(), negatives.end());
  return positives;
}

}  // namespace ldse::testing

#endif  // LDSE_TESTS_TRIALS_ORACLE_H_
