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

#ifndef LDSE_EVAL_H_
#define LDSE_EVAL_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ldse/dataset.h"
#include "ldse/keyvalue.h"
#include "ldse/model.h"
#include "ldse/tensor.h"
#include "ldse/trials.h"

namespace ldse {

struct ScoreSet {
  std::vector<double> scores;
  std::vector<bool> targets;

  void Add(double score, bool target) {
    scores.push_back(score);
    targets.push_back(target);
  }
  std::size_t size() const { return scores.size(); }
};

struct DcfParams {
  double p_target = 0.05;
  double c_miss = 1.0;
  double c_fa = 1.0;

  void Validate() const;
};

// One candidate threshold with the error rates it yields:
// FRR = frac(targets < t), FAR = frac(nontargets >= t).
struct OperatingPoint {
  double threshold;
  double frr;
  double far;
  std::size_t misses;       // targets below threshold
  std::size_t false_alarms; // nontargets at or above threshold
};

// Candidate thresholds in increasing order: the lowest score (accept all),
// midpoints between consecutive distinct scores, and the next double
// above the highest score (reject all). Counts are taken by rank, not by
// re-comparing against the midpoint.
std::vector<OperatingPoint> SweepThresholds(const ScoreSet &set);

struct EerResult {
  double eer;
  double threshold;
};

// First candidate where FRR >= FAR; if FRR == FAR there the EER is that
// rate, otherwise the FRR-FAR difference is interpolated linearly between
// it and the previous candidate. Both labels must be present.
EerResult ComputeEer(const ScoreSet &set);

struct DcfResult {
  double min_dcf;
  double threshold;
};

// min over candidates of (c_miss*p*FRR + c_fa*(1-p)*FAR) /
// min(c_miss*p, c_fa*(1-p)); the lowest threshold wins ties.
DcfResult ComputeMinDcf(const ScoreSet &set, const DcfParams &params = {});

// Maps (B*T) x F frames of B equal-length utterances to B x D embeddings.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Tensor Embed(const Tensor &frames, std::size_t frames_per_utt) const = 0;
};

class ModelEmbedder : public Embedder {
 public:
  explicit ModelEmbedder(const ModelBundle &model) : model_(model) {}
  Tensor Embed(const Tensor &frames, std::size_t frames_per_utt) const override;

 private:
  const ModelBundle &model_;
};

struct SegmentConfig {
  std::size_t num_segments = 10;
  std::size_t seg_frames = 0;  // 0 = half the utterance length
};

// Evenly spaced starts: start_k = floor(k * (T - seg) / (num - 1)).
std::vector<std::size_t> SegmentStarts(std::size_t frames, std::size_t num_segments, std::size_t seg_frames);

// num_segments x D unit-norm segment embeddings of one utterance.
Tensor SegmentEmbeddings(const Embedder &embedder, const Tensor &frames, const SegmentConfig &config);

// Mean cosine over all num_segments^2 (segment of a, segment of b) pairs.
double SegmentScore(const Embedder &embedder, const Tensor &a, const Tensor &b, const SegmentConfig &config);

struct EvalConfig {
  SegmentConfig segments;
  DcfParams dcf;
  std::size_t embed_chunk = 128;  // utterances per embedding call
  bool parallel = true;           // OpenMP trial scoring
};

struct EvalReport {
  double eer = 0.0;
  double eer_threshold = 0.0;
  double min_dcf = 0.0;
  double min_dcf_threshold = 0.0;
  DcfParams dcf;
  std::optional<double> slr_accuracy;
  std::size_t trials_evaluated = 0;
  std::size_t targets = 0;
  std::size_t nontargets = 0;

  KeyValues ToKeyValues() const;
  static EvalReport FromKeyValues(const KeyValues &kv);
};

struct ProtocolScores {
  EvalReport report;
  std::vector<double> scores;  // one per trial, in trial order
};

// Segment-averaged cosine for every trial, then EER and minDCF. Every
// trial id must have features.
ProtocolScores EvaluateProtocol(const Embedder &embedder, const std::vector<Trial> &trials,
                                const FeatureStore &features, const EvalConfig &config = {});

EvalReport ReportFromScores(const std::vector<Trial> &trials, const std::vector<double> &scores,
                            const DcfParams &dcf);

// `enrollId testId label score` lines; scores round-trip exactly.
void WriteScores(std::ostream &os, const std::vector<Trial> &trials, const std::vector<double> &scores);
void SaveScores(const std::string &path, const std::vector<Trial> &trials, const std::vector<double> &scores);
// Reads a dump back into trials and scores.
void ReadScores(std::istream &is, const std::string &source, std::vector<Trial> &trials,
                std::vector<double> &scores);

struct ProbeConfig {
  std::size_t epochs = 20;
  double lr = 0.001;
  std::size_t batch_size = 32;
  double train_fraction = 0.8;
  std::size_t hidden_dim = 64;
  std::uint64_t seed = 0;

  void Validate() const;
  KeyValues ToKeyValues() const;
  static ProbeConfig FromKeyValues(const KeyValues &kv) { return FromKeyValues(kv, ProbeConfig()); }
  static ProbeConfig FromKeyValues(const KeyValues &kv, ProbeConfig base);
};

struct ProbeResult {
  double accuracy = 0.0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  double majority_rate = 0.0;  // most frequent class share in the test part
};

// Fresh FC(tanh) -> FC(tanh) -> FC classifier on fixed inputs (rows of x).
// Rows are shuffled with the seed and split train/test.
ProbeResult TrainProbe(const Tensor &x, const std::vector<std::size_t> &labels, std::size_t num_classes,
                       const ProbeConfig &config);

// Language probe on frozen full-utterance embeddings. UNKNOWN-language
// utterances are skipped; at least two languages are required.
ProbeResult SlrProbe(const Embedder &embedder, const std::vector<UtteranceMeta> &metadata,
                     const FeatureStore &features, const ProbeConfig &config);

}  // namespace ldse

#endif  // LDSE_EVAL_H_
