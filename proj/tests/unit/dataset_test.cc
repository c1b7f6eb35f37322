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

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "ldse/errors.h"
#include "ldse/dataset.h"
#include "test_util.h"

using namespace ldse;
using ldse::testing::Meta;
using ldse::testing::SmallSynth;

namespace {

std::vector<double> MeanFrame(const Tensor &frames) {
  std::vector<double> m(frames.cols(), 0.0);
  for (std::size_t t = 0; t < frames.rows(); ++t)
    for (std::size_t f = 0; f < frames.cols(); ++f) m[f] += frames(t, f) / static_cast<double>(frames.rows());
  return m;
}

// Solves (A^T A + ridge I) W = A^T Y by Gaussian elimination with partial
// pivoting; A gets a bias column.
std::vector<std::vector<double>> LeastSquares(const std::vector<std::vector<double>> &x,
                                              const std::vector<std::size_t> &y, std::size_t classes) {
  const std::size_t d = x[0].size() + 1;
  std::vector<std::vector<double>> a(d, std::vector<double>(d + classes, 0.0));
  for (std::size_t n = 0; n < x.size(); ++n) {
    std::vector<double> row = x[n];
    row.push_back(1.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) a[i][j] += row[i] * row[j];
      a[i][d + y[n]] += row[i];
    }
  }
  for (std::size_t i = 0; i < d; ++i) a[i][i] += 1e-9;
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < d; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    std::swap(a[c], a[p]);
    for (std::size_t r = 0; r < d; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t j = c; j < d + classes; ++j) a[r][j] -= f * a[c][j];
    }
  }
  std::vector<std::vector<double>> w(d, std::vector<double>(classes));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < classes; ++k) w[i][k] = a[i][d + k] / a[i][i];
  return w;
}

// Linear probe on per-utterance mean frames against the true languages;
// fitted on even-indexed utterances, scored on odd ones.
double ProbeAccuracy(const Dataset &data, std::size_t classes) {
  std::vector<std::vector<double>> xtr, xte;
  std::vector<std::size_t> ytr, yte;
  for (std::size_t i = 0; i < data.metadata.size(); ++i) {
    const std::string &lang = data.true_languages[i];
    const std::size_t y = static_cast<std::size_t>(std::stoul(lang.substr(4)));
    auto m = MeanFrame(data.features.at(data.metadata[i].utterance_id));
    (i % 2 == 0 ? xtr : xte).push_back(std::move(m));
    (i % 2 == 0 ? ytr : yte).push_back(y);
  }
  const auto w = LeastSquares(xtr, ytr, classes);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < xte.size(); ++n) {
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t k = 0; k < classes; ++k) {
      double v = w.back()[k];
      for (std::size_t f = 0; f < xte[n].size(); ++f) v += xte[n][f] * w[f][k];
      if (v > best_v) best_v = v, best = k;
    }
    correct += best == yte[n];
  }
  return static_cast<double>(correct) / static_cast<double>(xte.size());
}

SyntheticConfig ProbeSynth(double alpha, std::uint64_t seed) {
  SyntheticConfig c;
  c.num_speakers = 60;
  c.num_languages = 3;
  c.languages_per_speaker = 2;
  c.utts_per_speaker_per_language = 4;
  c.frames = 10;
  c.feat_dim = 16;
  c.confound_strength = alpha;
  c.noise_std = 3.0;
  c.pseudo_label_error_rate = 0.0;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("synthetic config validation") {
  SyntheticConfig c = SmallSynth(0);
  CHECK_NOTHROW(c.Validate());
  c.languages_per_speaker = 4;
  CHECK_THROWS_AS(GenerateSynthetic(c), ContractError);
  c = SmallSynth(0);
  c.pseudo_label_error_rate = 1.0;
  CHECK_THROWS_AS(c.Validate(), ContractError);
  c = SmallSynth(0);
  c.confound_strength = -0.1;
  CHECK_THROWS_AS(c.Validate(), ContractError);
  c = SmallSynth(3);
  CHECK(SyntheticConfig::FromKeyValues(c.ToKeyValues()).ToKeyValues().ToText() == c.ToKeyValues().ToText());
}

TEST_CASE("synthetic corpus shape and determinism") {
  const SyntheticConfig c = SmallSynth(5);
  const Dataset a = GenerateSynthetic(c), b = GenerateSynthetic(c);
  CHECK(a.metadata.size() == 12 * 2 * 3);
  CHECK(a.metadata == b.metadata);
  CHECK(a.true_languages == b.true_languages);
  for (const auto &[id, t] : a.features) {
    CHECK(t.rows() == 8);
    CHECK(t.cols() == 6);
    CHECK(t == b.features.at(id));
    for (double v : t.values()) CHECK(std::isfinite(v));
  }
  std::map<std::string, std::set<std::string>> langs;
  std::map<std::string, std::set<Split>> splits;
  for (std::size_t i = 0; i < a.metadata.size(); ++i) {
    langs[a.metadata[i].speaker_id].insert(a.true_languages[i]);
    splits[a.metadata[i].speaker_id].insert(a.metadata[i].split);
  }
  std::size_t eval_speakers = 0;
  for (const auto &[spk, l] : langs) {
    CHECK(l.size() == 2);
    CHECK(splits[spk].size() == 1);
    eval_speakers += *splits[spk].begin() == Split::kEval;
  }
  CHECK(eval_speakers == 3);
  CHECK_FALSE(GenerateSynthetic(SmallSynth(6)).features.begin()->second == a.features.begin()->second);
}

TEST_CASE("speaker identity vectors are distinct") {
  SyntheticConfig c = SmallSynth(1);
  c.noise_std = 0.0;
  c.confound_strength = 0.0;
  const Dataset d = GenerateSynthetic(c);
  std::map<std::string, std::vector<double>> vec;
  for (const auto &m : d.metadata) vec[m.speaker_id] = MeanFrame(d.features.at(m.utterance_id));
  for (auto i = vec.begin(); i != vec.end(); ++i) {
    double norm = 0.0;
    for (double v : i->second) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
    for (auto j = std::next(i); j != vec.end(); ++j) CHECK(i->second != j->second);
  }
}

TEST_CASE("no confound leaves language means equal within noise") {
  SyntheticConfig c = SmallSynth(2);
  c.confound_strength = 0.0;
  c.utts_per_speaker_per_language = 10;
  const Dataset d = GenerateSynthetic(c);
  std::map<std::string, std::map<std::string, std::vector<double>>> sums;
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  for (std::size_t i = 0; i < d.metadata.size(); ++i) {
    auto m = MeanFrame(d.features.at(d.metadata[i].utterance_id));
    auto &s = sums[d.metadata[i].speaker_id][d.true_languages[i]];
    s.resize(m.size(), 0.0);
    for (std::size_t f = 0; f < m.size(); ++f) s[f] += m[f];
    ++counts[d.metadata[i].speaker_id][d.true_languages[i]];
  }
  const double tol = 3.0 * c.noise_std / std::sqrt(static_cast<double>(c.frames * c.utts_per_speaker_per_language));
  for (const auto &[spk, by_lang] : sums) {
    const auto &first = by_lang.begin()->second, &second = std::next(by_lang.begin())->second;
    const double n1 = counts[spk].begin()->second, n2 = std::next(counts[spk].begin())->second;
    for (std::size_t f = 0; f < first.size(); ++f) CHECK(std::abs(first[f] / n1 - second[f] / n2) < 2.0 * tol);
  }
}

TEST_CASE("pseudo label noise") {
  SyntheticConfig c = SmallSynth(4);
  c.pseudo_label_error_rate = 0.0;
  Dataset d = GenerateSynthetic(c);
  for (std::size_t i = 0; i < d.metadata.size(); ++i) CHECK(d.metadata[i].language_id == d.true_languages[i]);

  c.num_speakers = 100;
  c.pseudo_label_error_rate = 0.2;
  d = GenerateSynthetic(c);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < d.metadata.size(); ++i) wrong += d.metadata[i].language_id != d.true_languages[i];
  const double rate = static_cast<double>(wrong) / static_cast<double>(d.metadata.size());
  CHECK(rate > 0.15);
  CHECK(rate < 0.25);
}

TEST_CASE("strong confound is linearly recoverable") {
  SyntheticConfig c = ProbeSynth(2.0, 0);
  c.noise_std = 0.1;
  CHECK(ProbeAccuracy(GenerateSynthetic(c), 3) > 0.95);
}

TEST_CASE("probe accuracy grows with confound strength") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    double prev = -1.0;
    for (double alpha : {0.0, 0.5, 1.0, 2.0}) {
      const double acc = ProbeAccuracy(GenerateSynthetic(ProbeSynth(alpha, seed)), 3);
      CAPTURE(seed);
      CAPTURE(alpha);
      CHECK(acc > prev);
      prev = acc;
    }
  }
}

TEST_CASE("metadata io") {
  std::istringstream empty("");
  CHECK(ReadMetadata(empty, "empty").empty());

  const std::vector<UtteranceMeta> meta{Meta("a1", "A", "en", Split::kTrain), Meta("a2", "A", "UNKNOWN"),
                                        Meta("b1", "B", "de")};
  std::ostringstream os;
  WriteMetadata(os, meta);
  std::istringstream is(os.str());
  const auto back = ReadMetadata(is, "mem");
  CHECK(back == meta);
  CHECK(back[1].excluded());

  std::istringstream dup("utteranceId,speakerId,languageId,split\nx,A,en,train\nx,B,de,eval\n");
  try {
    ReadMetadata(dup, "dup.csv");
    FAIL("expected a duplicate error");
  } catch (const ContractError &e) {
    CHECK(std::string(e.what()).find("`x`") != std::string::npos);
  }

  std::istringstream bad("utteranceId,speakerId,languageId,split\nx,A,en,train\ny,B,de\n");
  try {
    ReadMetadata(bad, "bad.csv");
    FAIL("expected a parse error");
  } catch (const ParseError &e) {
    CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
  }
  std::istringstream no_header("x,A,en,train\n");
  CHECK_THROWS_AS(ReadMetadata(no_header, "h"), ParseError);
  std::istringstream bad_split("utteranceId,speakerId,languageId,split\nx,A,en,dev\n");
  CHECK_THROWS_AS(ReadMetadata(bad_split, "s"), ParseError);
  CHECK_THROWS_AS(LoadMetadata("/nonexistent/meta.csv"), ContractError);
}

TEST_CASE("feature io") {
  std::istringstream empty("");
  CHECK(ReadFeatures(empty, "empty").empty());

  const Dataset d = GenerateSynthetic(SmallSynth(8));
  std::ostringstream os;
  WriteFeatures(os, d.features);
  const std::string bytes = os.str();
  std::istringstream is(bytes);
  CHECK(ReadFeatures(is, "mem") == d.features);

  // First record: u32 length, id, u32 rows, u32 cols, float64 values.
  const std::string &first = d.features.begin()->first;
  CHECK(static_cast<unsigned char>(bytes[0]) == first.size());
  CHECK(bytes.substr(4, first.size()) == first);
  CHECK(static_cast<unsigned char>(bytes[4 + first.size()]) == 8);

  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(ReadFeatures(truncated, "t"), ParseError);

  std::ostringstream twice;
  FeatureStore one{{"x", Tensor(1, 1)}};
  WriteFeatures(twice, one);
  WriteFeatures(twice, one);
  std::istringstream dup(twice.str());
  CHECK_THROWS_AS(ReadFeatures(dup, "d"), ContractError);
}

TEST_CASE("training index") {
  Dataset d = GenerateSynthetic(SmallSynth(9));
  d.metadata[0].language_id = kUnknownLanguage;
  const TrainingIndex idx = BuildTrainingIndex(d);
  CHECK(idx.speakers.size() == 9);
  CHECK(idx.languages.size() == 3);
  CHECK(std::is_sorted(idx.speakers.begin(), idx.speakers.end()));
  std::size_t usable = 0;
  for (const auto &m : d.metadata) usable += m.split == Split::kTrain && !m.excluded();
  CHECK(idx.NumUtterances() == usable);
  CHECK_THROWS_AS(idx.SpeakerClass("nobody"), ContractError);
  CHECK_THROWS_AS(idx.LanguageClass(kUnknownLanguage), ContractError);
}

TEST_CASE("batch sampling") {
  const Dataset d = GenerateSynthetic(SmallSynth(10));
  const TrainingIndex idx = BuildTrainingIndex(d);
  const std::size_t S = idx.speakers.size();

  SUBCASE("all speakers once") {
    const Batch b = SampleBatch(d, idx, S, 2, 8, 1, 0);
    std::set<std::size_t> seen(b.speaker_labels.begin(), b.speaker_labels.end());
    CHECK(seen.size() == S);
    CHECK(b.frames.rows() == S * 2 * 8);
    CHECK(b.frames.cols() == 6);
  }
  SUBCASE("determinism") {
    const Batch a = SampleBatch(d, idx, 4, 2, 5, 3, 17), b = SampleBatch(d, idx, 4, 2, 5, 3, 17);
    CHECK(a.utterance_ids == b.utterance_ids);
    CHECK(a.frames == b.frames);
    CHECK(a.language_labels == b.language_labels);
    CHECK(SampleBatch(d, idx, 4, 2, 5, 3, 18).utterance_ids != a.utterance_ids);
  }
  SUBCASE("structure") {
    for (std::uint64_t step = 0; step < 20; ++step) {
      const Batch b = SampleBatch(d, idx, 4, 2, 8, 5, step);
      std::set<std::size_t> speakers;
      for (std::size_t g = 0; g < 4; ++g) {
        speakers.insert(b.speaker_labels[2 * g]);
        CHECK(b.speaker_labels[2 * g] == b.speaker_labels[2 * g + 1]);
        // Bilingual speakers contribute one utterance per language.
        CHECK(b.language_labels[2 * g] != b.language_labels[2 * g + 1]);
        for (std::size_t u = 0; u < 2; ++u) {
          const auto &m = d.Meta(b.utterance_ids[2 * g + u]);
          CHECK(idx.SpeakerClass(m.speaker_id) == b.speaker_labels[2 * g]);
          CHECK(m.split == Split::kTrain);
        }
      }
      CHECK(speakers.size() == 4);
    }
  }
  SUBCASE("uniform speaker frequency") {
    std::vector<std::size_t> count(S, 0);
    for (std::uint64_t step = 0; step < 1000; ++step)
      for (std::size_t s : SampleBatch(d, idx, 4, 1, 8, 7, step).speaker_labels) ++count[s];
    const double expected = 1000.0 * 4 / static_cast<double>(S);
    for (std::size_t s = 0; s < S; ++s) CHECK(std::abs(count[s] - expected) <= 0.05 * expected);
  }
  SUBCASE("insufficient data") {
    CHECK_THROWS_AS(SampleBatch(d, idx, S + 1, 1, 8, 0, 0), ContractError);
    CHECK_THROWS_AS(SampleBatch(d, idx, 2, 7, 8, 0, 0), ContractError);
    CHECK_THROWS_AS(SampleBatch(d, idx, 2, 2, 9, 0, 0), ContractError);
  }
}
