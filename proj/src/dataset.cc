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

#include "ldse/dataset.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ldse/binio.h"
#include "ldse/errors.h"
#include "ldse/random.h"

namespace ldse {
namespace {

enum : std::uint64_t {
  kSpeakerVectors = 0x5101,
  kLanguageVectors,
  kLanguageAssignment,
  kEvalSplit,
  kFrameNoise,
  kPseudoLabels,
  kBatchPermutation,
  kBatchUtterances,
};

std::vector<double> UnitVector(Rng &rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double &x : v) {
      x = rng.Normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double &x : v) x /= norm;
  return v;
}

std::string PaddedId(const char *prefix, std::size_t n, int width) {
  std::string digits = std::to_string(n);
  if (digits.size() < static_cast<std::size_t>(width)) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

int Width(std::size_t count) {
  int w = 1;
  for (std::size_t c = count; c >= 10; c /= 10) ++w;
  return std::max(w, 3);
}

std::vector<std::string> SplitCsv(const std::string &line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

const char *SplitName(Split split) { return split == Split::kTrain ? "train" : "eval"; }

void SyntheticConfig::Validate() const {
  if (num_speakers < 1) throw ContractError("synthetic: num_speakers must be >= 1");
  if (num_languages < 1) throw ContractError("synthetic: num_languages must be >= 1");
  if (languages_per_speaker < 1 || languages_per_speaker > num_languages)
    throw ContractError("synthetic: languages_per_speaker must be in [1, num_languages]");
  if (utts_per_speaker_per_language < 1)
    throw ContractError("synthetic: utts_per_speaker_per_language must be >= 1");
  if (frames < 1 || feat_dim < 1) throw ContractError("synthetic: frames and feat_dim must be >= 1");
  if (!(confound_strength >= 0.0)) throw ContractError("synthetic: confound_strength must be >= 0");
  if (!(noise_std >= 0.0)) throw ContractError("synthetic: noise_std must be >= 0");
  if (!(pseudo_label_error_rate >= 0.0 && pseudo_label_error_rate < 1.0))
    throw ContractError("synthetic: pseudo_label_error_rate must be in [0, 1)");
  if (pseudo_label_error_rate > 0.0 && num_languages < 2)
    throw ContractError("synthetic: pseudo-label errors need at least 2 languages");
  if (!(eval_speaker_fraction >= 0.0 && eval_speaker_fraction < 1.0))
    throw ContractError("synthetic: eval_speaker_fraction must be in [0, 1)");
}

KeyValues SyntheticConfig::ToKeyValues() const {
  KeyValues kv;
  kv.Set("synth.num_speakers", std::to_string(num_speakers));
  kv.Set("synth.num_languages", std::to_string(num_languages));
  kv.Set("synth.languages_per_speaker", std::to_string(languages_per_speaker));
  kv.Set("synth.utts_per_speaker_per_language", std::to_string(utts_per_speaker_per_language));
  kv.Set("synth.frames", std::to_string(frames));
  kv.Set("synth.feat_dim", std::to_string(feat_dim));
  kv.Set("synth.confound_strength", FormatDouble(confound_strength));
  kv.Set("synth.noise_std", FormatDouble(noise_std));
  kv.Set("synth.pseudo_label_error_rate", FormatDouble(pseudo_label_error_rate));
  kv.Set("synth.eval_speaker_fraction", FormatDouble(eval_speaker_fraction));
  kv.Set("synth.seed", std::to_string(seed));
  return kv;
}

SyntheticConfig SyntheticConfig::FromKeyValues(const KeyValues &kv, SyntheticConfig c) {
  auto count = [&kv](const char *key, std::size_t fallback) {
    const std::int64_t v = kv.GetInt(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ParseError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.num_speakers = count("synth.num_speakers", c.num_speakers);
  c.num_languages = count("synth.num_languages", c.num_languages);
  c.languages_per_speaker = count("synth.languages_per_speaker", c.languages_per_speaker);
  c.utts_per_speaker_per_language =
      count("synth.utts_per_speaker_per_language", c.utts_per_speaker_per_language);
  c.frames = count("synth.frames", c.frames);
  c.feat_dim = count("synth.feat_dim", c.feat_dim);
  c.confound_strength = kv.GetDouble("synth.confound_strength", c.confound_strength);
  c.noise_std = kv.GetDouble("synth.noise_std", c.noise_std);
  c.pseudo_label_error_rate = kv.GetDouble("synth.pseudo_label_error_rate", c.pseudo_label_error_rate);
  c.eval_speaker_fraction = kv.GetDouble("synth.eval_speaker_fraction", c.eval_speaker_fraction);
  c.seed = static_cast<std::uint64_t>(kv.GetInt("synth.seed", static_cast<std::int64_t>(c.seed)));
  return c;
}

const UtteranceMeta &Dataset::Meta(const std::string &utterance_id) const {
  auto it = std::lower_bound(metadata.begin(), metadata.end(), utterance_id,
                             [](const UtteranceMeta &m, const std::string &id) { return m.utterance_id < id; });
  if (it == metadata.end() || it->utterance_id != utterance_id)
    throw ContractError("unknown utterance id " + utterance_id);
  return *it;
}

Dataset GenerateSynthetic(const SyntheticConfig &config) {
  config.Validate();
  const auto &c = config;
  const int sw = Width(c.num_speakers);
  const int lw = static_cast<int>(std::to_string(c.num_languages - 1).size());

  Rng spk_rng(DeriveSeed(c.seed, kSpeakerVectors));
  std::vector<std::vector<double>> speaker_vecs;
  for (std::size_t s = 0; s < c.num_speakers; ++s) speaker_vecs.push_back(UnitVector(spk_rng, c.feat_dim));

  Rng lang_rng(DeriveSeed(c.seed, kLanguageVectors));
  std::vector<std::vector<double>> language_vecs;
  for (std::size_t l = 0; l < c.num_languages; ++l) language_vecs.push_back(UnitVector(lang_rng, c.feat_dim));

  // Languages spoken by each speaker: first languages_per_speaker of a
  // seeded permutation.
  Rng assign_rng(DeriveSeed(c.seed, kLanguageAssignment));
  std::vector<std::vector<std::size_t>> spoken(c.num_speakers);
  for (auto &langs : spoken) {
    std::vector<std::size_t> perm(c.num_languages);
    for (std::size_t l = 0; l < perm.size(); ++l) perm[l] = l;
    assign_rng.Shuffle(perm);
    langs.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(c.languages_per_speaker));
    std::sort(langs.begin(), langs.end());
  }

  std::vector<bool> is_eval(c.num_speakers, false);
  {
    Rng split_rng(DeriveSeed(c.seed, kEvalSplit));
    std::vector<std::size_t> order(c.num_speakers);
    for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
    split_rng.Shuffle(order);
    const auto n_eval = static_cast<std::size_t>(
        std::llround(c.eval_speaker_fraction * static_cast<double>(c.num_speakers)));
    for (std::size_t i = 0; i < n_eval && i < order.size(); ++i) is_eval[order[i]] = true;
  }

  auto language_name = [&](std::size_t l) { return PaddedId("lang", l, lw); };

  Dataset data;
  Rng noise_rng(DeriveSeed(c.seed, kFrameNoise));
  Rng label_rng(DeriveSeed(c.seed, kPseudoLabels));
  const int uw = Width(c.languages_per_speaker * c.utts_per_speaker_per_language);
  for (std::size_t s = 0; s < c.num_speakers; ++s) {
    const std::string speaker = PaddedId("spk", s, sw);
    std::size_t u = 0;
    for (std::size_t l : spoken[s]) {
      for (std::size_t k = 0; k < c.utts_per_speaker_per_language; ++k, ++u) {
        const std::string id = speaker + "-" + PaddedId("u", u, uw);
        Tensor frames(c.frames, c.feat_dim);
        for (std::size_t t = 0; t < c.frames; ++t)
          for (std::size_t f = 0; f < c.feat_dim; ++f)
            frames(t, f) = speaker_vecs[s][f] + c.confound_strength * language_vecs[l][f] +
                           c.noise_std * noise_rng.Normal();
        std::size_t label = l;
        if (label_rng.Uniform() < c.pseudo_label_error_rate) {
          // Uniform over the other languages.
          const std::size_t shift = 1 + static_cast<std::size_t>(label_rng.UniformInt(c.num_languages - 1));
          label = (l + shift) % c.num_languages;
        }
        data.metadata.push_back({id, speaker, language_name(label), is_eval[s] ? Split::kEval : Split::kTrain});
        data.true_languages.push_back(language_name(l));
        data.features.emplace(id, std::move(frames));
      }
    }
  }
  // Ids are generated in sorted order already; keep the invariant explicit.
  if (!std::is_sorted(data.metadata.begin(), data.metadata.end(),
                      [](const UtteranceMeta &a, const UtteranceMeta &b) { return a.utterance_id < b.utterance_id; }))
    throw ContractError("GenerateSynthetic: utterance ids not sorted");
  return data;
}

std::vector<UtteranceMeta> ReadMetadata(std::istream &is, const std::string &source) {
  std::vector<UtteranceMeta> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = source + ":" + std::to_string(lineno);
    if (!header_seen) {
      if (line != "utteranceId,speakerId,languageId,split")
        throw ParseError(where + ": expected header `utteranceId,speakerId,languageId,split`");
      header_seen = true;
      continue;
    }
    if (line.empty()) throw ParseError(where + ": empty line");
    const auto fields = SplitCsv(line);
    if (fields.size() != 4)
      throw ParseError(where + ": expected 4 comma-separated fields, got " + std::to_string(fields.size()));
    for (const auto &f : fields)
      if (f.empty()) throw ParseError(where + ": empty field");
    Split split;
    if (fields[3] == "train") {
      split = Split::kTrain;
    } else if (fields[3] == "eval") {
      split = Split::kEval;
    } else {
      throw ParseError(where + ": split must be `train` or `eval`, got `" + fields[3] + "`");
    }
    if (!seen.insert(fields[0]).second)
      throw ContractError("duplicate utteranceId `" + fields[0] + "` at " + where);
    out.push_back({fields[0], fields[1], fields[2], split});
  }
  std::sort(out.begin(), out.end(),
            [](const UtteranceMeta &a, const UtteranceMeta &b) { return a.utterance_id < b.utterance_id; });
  return out;
}

std::vector<UtteranceMeta> LoadMetadata(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw ContractError("cannot open metadata file " + path);
  return ReadMetadata(is, path);
}

void WriteMetadata(std::ostream &os, const std::vector<UtteranceMeta> &metadata) {
  os << "utteranceId,speakerId,languageId,split\n";
  for (const auto &m : metadata)
    os << m.utterance_id << ',' << m.speaker_id << ',' << m.language_id << ',' << SplitName(m.split) << '\n';
}

void SaveMetadata(const std::string &path, const std::vector<UtteranceMeta> &metadata) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot write metadata file " + path);
  WriteMetadata(os, metadata);
}

FeatureStore ReadFeatures(std::istream &is, const std::string &source) {
  FeatureStore store;
  std::size_t record = 0;
  while (is.peek() != std::char_traits<char>::eof()) {
    ++record;
    const std::string where = source + " record " + std::to_string(record);
    std::string id;
    std::uint32_t rows = 0, cols = 0;
    try {
      id = binio::ReadString(is, "utterance id", 4096);
      rows = binio::ReadU32(is, "frame count");
      cols = binio::ReadU32(is, "feature dim");
    } catch (const ParseError &e) {
      throw ParseError(where + ": " + e.what());
    }
    if (id.empty()) throw ParseError(where + ": empty utterance id");
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28))
      throw ParseError(where + ": implausible shape");
    Tensor t(rows, cols);
    for (double &v : t.values()) {
      try {
        v = binio::ReadF64(is, "feature value");
      } catch (const ParseError &e) {
        throw ParseError(where + ": " + e.what());
      }
    }
    if (!store.emplace(id, std::move(t)).second)
      throw ContractError("duplicate utterance id `" + id + "` in " + source);
  }
  return store;
}

FeatureStore LoadFeatures(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open features file " + path);
  return ReadFeatures(is, path);
}

void WriteFeatures(std::ostream &os, const FeatureStore &features) {
  for (const auto &[id, t] : features) {
    binio::WriteString(os, id);
    binio::WriteU32(os, static_cast<std::uint32_t>(t.rows()));
    binio::WriteU32(os, static_cast<std::uint32_t>(t.cols()));
    for (double v : t.values()) binio::WriteF64(os, v);
  }
}

void SaveFeatures(const std::string &path, const FeatureStore &features) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot write features file " + path);
  WriteFeatures(os, features);
}

std::size_t TrainingIndex::SpeakerClass(const std::string &speaker_id) const {
  auto it = std::lower_bound(speakers.begin(), speakers.end(), speaker_id);
  if (it == speakers.end() || *it != speaker_id) throw ContractError("speaker not in training split: " + speaker_id);
  return static_cast<std::size_t>(it - speakers.begin());
}

std::size_t TrainingIndex::LanguageClass(const std::string &language_id) const {
  auto it = std::lower_bound(languages.begin(), languages.end(), language_id);
  if (it == languages.end() || *it != language_id) throw ContractError("unknown language: " + language_id);
  return static_cast<std::size_t>(it - languages.begin());
}

std::size_t TrainingIndex::NumUtterances() const {
  std::size_t n = 0;
  for (const auto &groups : by_speaker)
    for (const auto &[lang, ids] : groups) n += ids.size();
  return n;
}

TrainingIndex BuildTrainingIndex(const Dataset &data) {
  TrainingIndex index;
  std::set<std::string> speakers, languages;
  for (const auto &m : data.metadata) {
    if (m.excluded()) continue;
    languages.insert(m.language_id);
    if (m.split == Split::kTrain) speakers.insert(m.speaker_id);
  }
  index.speakers.assign(speakers.begin(), speakers.end());
  index.languages.assign(languages.begin(), languages.end());
  index.by_speaker.resize(index.speakers.size());
  for (const auto &m : data.metadata) {
    if (m.excluded() || m.split != Split::kTrain) continue;
    if (!data.features.count(m.utterance_id))
      throw ContractError("no features for utterance " + m.utterance_id);
    index.by_speaker[index.SpeakerClass(m.speaker_id)][m.language_id].push_back(m.utterance_id);
  }
  return index;
}

Batch SampleBatch(const Dataset &data, const TrainingIndex &index, std::size_t speakers,
                  std::size_t per_speaker, std::size_t frames_per_utt, std::uint64_t seed,
                  std::uint64_t step) {
  const std::size_t total = index.speakers.size();
  if (speakers < 1 || per_speaker < 1 || frames_per_utt < 1)
    throw ContractError("SampleBatch: N, M and T must be >= 1");
  std::vector<std::size_t> pool;
  for (std::size_t s = 0; s < total; ++s) {
    std::size_t n = 0;
    for (const auto &[lang, ids] : index.by_speaker[s]) n += ids.size();
    if (n >= per_speaker) pool.push_back(s);
  }
  if (pool.size() < speakers)
    throw ContractError("SampleBatch: need " + std::to_string(speakers) + " training speakers with >= " +
                        std::to_string(per_speaker) + " utterances each; have " + std::to_string(pool.size()));

  // Position step*N in an endless stream of seeded permutations of the
  // eligible speakers; skip repeats when a batch straddles two of them.
  const std::size_t n_pool = pool.size();
  auto permutation = [&](std::uint64_t cycle) {
    std::vector<std::size_t> perm = pool;
    Rng rng(DeriveSeed(seed, kBatchPermutation ^ (cycle << 16)));
    rng.Shuffle(perm);
    return perm;
  };
  std::vector<std::size_t> chosen;
  std::vector<bool> used(total, false);
  std::uint64_t pos = step * speakers;
  std::uint64_t cycle = pos / n_pool;
  std::vector<std::size_t> perm = permutation(cycle);
  while (chosen.size() < speakers) {
    if (pos / n_pool != cycle) {
      cycle = pos / n_pool;
      perm = permutation(cycle);
    }
    const std::size_t s = perm[pos % n_pool];
    if (!used[s]) {
      used[s] = true;
      chosen.push_back(s);
    }
    ++pos;
  }

  Rng rng(DeriveSeed(seed, kBatchUtterances ^ (step << 16)));
  Batch batch;
  batch.speakers = speakers;
  batch.per_speaker = per_speaker;
  batch.frames_per_utt = frames_per_utt;
  for (std::size_t s : chosen) {
    // Round-robin over the speaker's languages in seeded order, each
    // language's utterances shuffled.
    std::vector<std::vector<std::string>> pools;
    for (const auto &[lang, ids] : index.by_speaker[s]) pools.push_back(ids);
    rng.Shuffle(pools);
    for (auto &p : pools) rng.Shuffle(p);
    std::size_t taken = 0;
    for (std::size_t round = 0; taken < per_speaker; ++round)
      for (auto &p : pools)
        if (round < p.size() && taken < per_speaker) {
          batch.utterance_ids.push_back(p[round]);
          ++taken;
        }
    for (std::size_t i = 0; i < per_speaker; ++i) batch.speaker_labels.push_back(s);
  }

  const std::size_t feat_dim = data.features.at(batch.utterance_ids.front()).cols();
  batch.frames = Tensor(batch.utterance_ids.size() * frames_per_utt, feat_dim);
  for (std::size_t u = 0; u < batch.utterance_ids.size(); ++u) {
    const std::string &id = batch.utterance_ids[u];
    const Tensor &src = data.features.at(id);
    if (src.rows() < frames_per_utt || src.cols() != feat_dim)
      throw ContractError("SampleBatch: utterance " + id + " has shape " + src.ShapeString() +
                          ", need at least " + std::to_string(frames_per_utt) + "x" + std::to_string(feat_dim));
    const std::size_t offset =
        src.rows() == frames_per_utt ? 0 : static_cast<std::size_t>(rng.UniformInt(src.rows() - frames_per_utt + 1));
    for (std::size_t t = 0; t < frames_per_utt; ++t)
      std::copy(src.row(offset + t).begin(), src.row(offset + t).end(), batch.frames.row(u * frames_per_utt + t).begin());
    batch.language_labels.push_back(index.LanguageClass(data.Meta(id).language_id));
  }
  return batch;
}

}  // namespace ldse
