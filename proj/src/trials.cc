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

#include "ldse/trials.h"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ldse/random.h"

namespace ldse {
namespace {

namespace ps = protocol_streams;

using MetaMap = std::unordered_map<std::string, const UtteranceMeta *>;

MetaMap IndexMetadata(const std::vector<UtteranceMeta> &metadata) {
  MetaMap map;
  for (const auto &m : metadata) map.emplace(m.utterance_id, &m);
  return map;
}

template <typename T>
void SeededTruncate(std::vector<T> &items, std::size_t cap, std::uint64_t seed) {
  std::sort(items.begin(), items.end());
  Rng rng(seed);
  rng.Shuffle(items);
  if (items.size() > cap) items.resize(cap);
  std::sort(items.begin(), items.end());
}

Trial MakeTrial(const std::string &a, const std::string &b, bool target) {
  return a < b ? Trial{a, b, target} : Trial{b, a, target};
}

// Pairs (i, j), i < j, of n items in lexicographic order: row i starts at
// i * (2n - i - 1) / 2.
std::pair<std::size_t, std::size_t> DecodePair(std::uint64_t k, std::size_t n) {
  auto row_start = [n](std::uint64_t i) { return i * (2 * n - i - 1) / 2; };
  std::uint64_t lo = 0, hi = n - 1;  // find largest i with row_start(i) <= k
  while (lo + 1 < hi) {
    const std::uint64_t mid = (lo + hi) / 2;
    if (row_start(mid) <= k) lo = mid; else hi = mid;
  }
  const std::uint64_t i = lo;
  const std::uint64_t j = i + 1 + (k - row_start(i));
  return {static_cast<std::size_t>(i), static_cast<std::size_t>(j)};
}

}  // namespace

void ProtocolConfig::Validate() const {
  if (max_speakers_per_language < 1) throw ContractError("protocol: max_speakers_per_language must be >= 1");
  if (max_samples_per_speaker < 1) throw ContractError("protocol: max_samples_per_speaker must be >= 1");
  if (pairs_budget && *pairs_budget < 1) throw ContractError("protocol: pairs_budget must be >= 1");
}

KeyValues ProtocolConfig::ToKeyValues() const {
  KeyValues kv;
  kv.Set("trials.max_speakers_per_language", std::to_string(max_speakers_per_language));
  kv.Set("trials.max_samples_per_speaker", std::to_string(max_samples_per_speaker));
  kv.Set("trials.pairs_budget", pairs_budget ? std::to_string(*pairs_budget) : "none");
  kv.Set("trials.seed", std::to_string(seed));
  return kv;
}

ProtocolConfig ProtocolConfig::FromKeyValues(const KeyValues &kv, ProtocolConfig c) {
  auto count = [&kv](const char *key, std::size_t fallback) {
    const std::int64_t v = kv.GetInt(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ParseError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.max_speakers_per_language = count("trials.max_speakers_per_language", c.max_speakers_per_language);
  c.max_samples_per_speaker = count("trials.max_samples_per_speaker", c.max_samples_per_speaker);
  if (auto b = kv.Get("trials.pairs_budget")) {
    if (*b == "none") c.pairs_budget.reset();
    else c.pairs_budget = count("trials.pairs_budget", 0);
  }
  c.seed = static_cast<std::uint64_t>(kv.GetInt("trials.seed", static_cast<std::int64_t>(c.seed)));
  return c;
}

std::vector<Trial> BuildBilingualProtocol(const std::vector<UtteranceMeta> &metadata,
                                          const ProtocolConfig &config) {
  config.Validate();
  std::vector<const UtteranceMeta *> usable;
  std::set<std::string> languages, speakers;
  for (const auto &m : metadata) {
    if (m.excluded()) continue;
    usable.push_back(&m);
    languages.insert(m.language_id);
    speakers.insert(m.speaker_id);
  }
  if (languages.size() < 2 || speakers.size() < 2)
    throw ContractError("BuildBilingualProtocol: need at least 2 languages and 2 speakers, have " +
                        std::to_string(languages.size()) + " and " + std::to_string(speakers.size()));

  // Per-language speaker cap.
  std::set<std::pair<std::string, std::string>> kept_speaker_language;  // (speaker, language)
  {
    std::map<std::string, std::set<std::string>> by_language;
    for (const auto *m : usable) by_language[m->language_id].insert(m->speaker_id);
    std::uint64_t k = 0;
    for (auto &[lang, spk_set] : by_language) {
      std::vector<std::string> spk(spk_set.begin(), spk_set.end());
      SeededTruncate(spk, config.max_speakers_per_language, DeriveSeed(config.seed, ps::kLanguageSpeakers + k++));
      for (const auto &s : spk) kept_speaker_language.emplace(s, lang);
    }
  }

  // Per-speaker sample cap over the utterances that survived the language cap.
  std::map<std::string, std::vector<const UtteranceMeta *>> selected_by_speaker;
  {
    std::map<std::string, std::vector<std::string>> candidates;
    MetaMap index;
    for (const auto *m : usable) {
      index.emplace(m->utterance_id, m);
      if (kept_speaker_language.count({m->speaker_id, m->language_id}))
        candidates[m->speaker_id].push_back(m->utterance_id);
    }
    std::uint64_t k = 0;
    for (const auto &spk : speakers) {
      auto it = candidates.find(spk);
      const std::uint64_t stream = DeriveSeed(config.seed, ps::kSpeakerSamples + k++);
      if (it == candidates.end()) continue;
      SeededTruncate(it->second, config.max_samples_per_speaker, stream);
      for (const auto &id : it->second) selected_by_speaker[spk].push_back(index.at(id));
    }
  }

  std::vector<Trial> positives;
  for (const auto &[spk, utts] : selected_by_speaker)
    for (std::size_t i = 0; i < utts.size(); ++i)
      for (std::size_t j = i + 1; j < utts.size(); ++j)
        if (utts[i]->language_id != utts[j]->language_id)
          positives.push_back(MakeTrial(utts[i]->utterance_id, utts[j]->utterance_id, true));
  if (positives.empty())
    throw ProtocolEmptyError("BuildBilingualProtocol: no speaker has utterances in two languages");
  std::sort(positives.begin(), positives.end());

  // Negative index space: for each language (sorted), all pairs i < j of
  // its selected utterances (sorted by id).
  struct LanguageBlock {
    std::vector<const UtteranceMeta *> utts;
    std::uint64_t offset = 0;
    std::uint64_t pairs = 0;
  };
  std::map<std::string, LanguageBlock> blocks;
  for (const auto &[spk, utts] : selected_by_speaker)
    for (const auto *m : utts) blocks[m->language_id].utts.push_back(m);
  std::uint64_t space = 0, valid = 0;
  std::vector<LanguageBlock *> block_list;
  for (auto &[lang, b] : blocks) {
    std::sort(b.utts.begin(), b.utts.end(),
              [](const UtteranceMeta *x, const UtteranceMeta *y) { return x->utterance_id < y->utterance_id; });
    const std::uint64_t n = b.utts.size();
    b.offset = space;
    b.pairs = n * (n - 1) / 2;
    space += b.pairs;
    std::map<std::string, std::uint64_t> per_speaker;
    for (const auto *m : b.utts) ++per_speaker[m->speaker_id];
    std::uint64_t same = 0;
    for (const auto &[s, c] : per_speaker) same += c * (c - 1) / 2;
    valid += b.pairs - same;
    block_list.push_back(&b);
  }
  if (valid == 0)
    throw ProtocolEmptyError("BuildBilingualProtocol: no language has utterances from two speakers");

  std::size_t count = std::min<std::uint64_t>(positives.size(), valid);
  if (config.pairs_budget) count = std::min(count, *config.pairs_budget);

  if (positives.size() > count) {
    Rng rng(DeriveSeed(config.seed, ps::kPositiveDownsample));
    rng.Shuffle(positives);
    positives.resize(count);
    std::sort(positives.begin(), positives.end());
  }

  std::vector<Trial> negatives;
  {
    Rng rng(DeriveSeed(config.seed, ps::kNegativeSample));
    std::unordered_set<std::uint64_t> taken;
    while (negatives.size() < count) {
      const std::uint64_t k = rng.UniformInt(space);
      if (taken.count(k)) continue;
      // Block containing k.
      auto it = std::upper_bound(block_list.begin(), block_list.end(), k,
                                 [](std::uint64_t v, const LanguageBlock *b) { return v < b->offset; });
      // Empty blocks share their successor's offset, so the last block
      // starting at or before k is the one holding it.
      const LanguageBlock *b = *(it - 1);
      const auto [i, j] = DecodePair(k - b->offset, b->utts.size());
      const UtteranceMeta *x = b->utts[i], *y = b->utts[j];
      if (x->speaker_id == y->speaker_id) continue;
      taken.insert(k);
      negatives.push_back(MakeTrial(x->utterance_id, y->utterance_id, false));
    }
    std::sort(negatives.begin(), negatives.end());
  }

  Rng pos_rng(DeriveSeed(config.seed, ps::kPositiveOrder));
  pos_rng.Shuffle(positives);
  Rng neg_rng(DeriveSeed(config.seed, ps::kNegativeOrder));
  neg_rng.Shuffle(negatives);
  positives.insert(positives.end(), negatives.begin(), negatives.end());
  return positives;
}

ValidationReport ValidateProtocol(const std::vector<Trial> &trials,
                                  const std::vector<UtteranceMeta> &metadata,
                                  const std::optional<ProtocolConfig> &config) {
  ValidationReport report;
  const MetaMap index = IndexMetadata(metadata);
  auto flag = [&report](std::size_t i, std::string msg) { report.violations.push_back({i, std::move(msg)}); };

  std::size_t targets = 0, nontargets = 0;
  std::set<std::pair<std::string, std::string>> seen;
  std::map<std::string, std::set<std::string>> speakers_by_language;
  std::map<std::string, std::set<std::string>> utterances_by_speaker;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const Trial &t = trials[i];
    (t.target ? targets : nontargets)++;
    auto a = index.find(t.enroll_id), b = index.find(t.test_id);
    if (a == index.end() || b == index.end()) {
      flag(i, "unknown utterance id " + (a == index.end() ? t.enroll_id : t.test_id));
      continue;
    }
    const UtteranceMeta &x = *a->second, &y = *b->second;
    if (t.enroll_id == t.test_id) flag(i, "enroll and test are the same utterance " + t.enroll_id);
    if (x.excluded() || y.excluded()) flag(i, "trial uses an UNKNOWN-language utterance");
    if (t.target) {
      if (x.speaker_id != y.speaker_id) flag(i, "target trial pairs different speakers");
      if (x.language_id == y.language_id) flag(i, "target trial is not cross-lingual (" + x.language_id + ")");
    } else {
      if (x.speaker_id == y.speaker_id) flag(i, "nontarget trial pairs the same speaker " + x.speaker_id);
      if (x.language_id != y.language_id)
        flag(i, "nontarget trial is not monolingual (" + x.language_id + " vs " + y.language_id + ")");
    }
    const auto key = t.enroll_id < t.test_id ? std::make_pair(t.enroll_id, t.test_id)
                                             : std::make_pair(t.test_id, t.enroll_id);
    if (!seen.insert(key).second) flag(i, "duplicate trial " + key.first + " " + key.second);
    for (const UtteranceMeta *m : {&x, &y}) {
      speakers_by_language[m->language_id].insert(m->speaker_id);
      utterances_by_speaker[m->speaker_id].insert(m->utterance_id);
    }
  }
  constexpr std::size_t kList = static_cast<std::size_t>(-1);
  if (targets != nontargets)
    flag(kList, "unbalanced: " + std::to_string(targets) + " targets vs " + std::to_string(nontargets) + " nontargets");
  if (config) {
    for (const auto &[lang, spk] : speakers_by_language)
      if (spk.size() > config->max_speakers_per_language)
        flag(kList, "language " + lang + " uses " + std::to_string(spk.size()) + " speakers, cap " +
                        std::to_string(config->max_speakers_per_language));
    for (const auto &[spk, utts] : utterances_by_speaker)
      if (utts.size() > config->max_samples_per_speaker)
        flag(kList, "speaker " + spk + " uses " + std::to_string(utts.size()) + " utterances, cap " +
                        std::to_string(config->max_samples_per_speaker));
  }
  return report;
}

ProtocolStats &ProtocolStats::operator+=(const ProtocolStats &o) {
  targets += o.targets;
  nontargets += o.nontargets;
  for (const auto &[k, v] : o.utterances_by_language) utterances_by_language[k] += v;
  for (const auto &[k, v] : o.target_language_pairs) target_language_pairs[k] += v;
  for (const auto &[k, v] : o.speakers_by_language) speakers_by_language[k].insert(v.begin(), v.end());
  return *this;
}

ProtocolStats ComputeProtocolStats(const std::vector<Trial> &trials,
                                   const std::vector<UtteranceMeta> &metadata) {
  const MetaMap index = IndexMetadata(metadata);
  ProtocolStats stats;
  for (const Trial &t : trials) {
    auto a = index.find(t.enroll_id), b = index.find(t.test_id);
    if (a == index.end() || b == index.end())
      throw ContractError("protocol stats: unknown utterance id " + (a == index.end() ? t.enroll_id : t.test_id));
    const UtteranceMeta &x = *a->second, &y = *b->second;
    (t.target ? stats.targets : stats.nontargets)++;
    for (const UtteranceMeta *m : {&x, &y}) {
      ++stats.utterances_by_language[m->language_id];
      stats.speakers_by_language[m->language_id].insert(m->speaker_id);
    }
    if (t.target) {
      const auto &[lo, hi] = std::minmax(x.language_id, y.language_id);
      ++stats.target_language_pairs[lo + "|" + hi];
    }
  }
  return stats;
}

std::vector<Trial> ReadTrials(std::istream &is, const std::string &source) {
  std::vector<Trial> trials;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string label, enroll, test, extra;
    const std::string where = source + ":" + std::to_string(lineno);
    if (!(fields >> label >> enroll >> test) || (fields >> extra))
      throw ParseError(where + ": expected `label enrollId testId`");
    if (label != "0" && label != "1") throw ParseError(where + ": label must be 0 or 1, got `" + label + "`");
    trials.push_back({enroll, test, label == "1"});
  }
  return trials;
}

std::vector<Trial> LoadTrials(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw ContractError("cannot open trial list " + path);
  return ReadTrials(is, path);
}

void WriteTrials(std::ostream &os, const std::vector<Trial> &trials, const KeyValues &provenance) {
  os << provenance.ToText("# ");
  for (const Trial &t : trials) os << (t.target ? '1' : '0') << ' ' << t.enroll_id << ' ' << t.test_id << '\n';
}

void SaveTrials(const std::string &path, const std::vector<Trial> &trials, const KeyValues &provenance) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot write trial list " + path);
  WriteTrials(os, trials, provenance);
}

}  // namespace ldse
