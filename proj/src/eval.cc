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

#include "ldse/eval.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ldse/autodiff.h"
#include "ldse/errors.h"
#include "ldse/kernels.h"
#include "ldse/random.h"
#include "ldse/trainer.h"

namespace ldse {

namespace {

constexpr std::uint64_t kProbeInit = 0x9b0;
constexpr std::uint64_t kProbeSplit = 0x9b1;
constexpr std::uint64_t kProbeOrder = 0x9b2;
// Norm guard for scoring cosines; small enough that a vector scores 1
// against itself to rounding.
constexpr double kScoreEps = 1e-200;

void CheckScoreSet(const ScoreSet &set) {
  if (set.scores.size() != set.targets.size())
    throw ContractError("score set: " + std::to_string(set.scores.size()) + " scores but " +
                        std::to_string(set.targets.size()) + " labels");
  std::size_t nt = 0;
  for (bool t : set.targets) nt += t;
  if (nt == 0 || nt == set.size()) throw ContractError("score set: need both target and nontarget trials");
  for (double s : set.scores)
    if (!std::isfinite(s)) throw NumericError("score set: non-finite score");
}

Tensor Xavier(std::size_t in, std::size_t out, Rng &rng) {
  Tensor w(in, out);
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.Uniform(-a, a);
  return w;
}

}  // namespace

void DcfParams::Validate() const {
  if (!(p_target > 0.0 && p_target < 1.0)) throw ContractError("dcf: p_target must be in (0, 1)");
  if (!(c_miss > 0.0) || !(c_fa > 0.0)) throw ContractError("dcf: costs must be > 0");
}

std::vector<OperatingPoint> SweepThresholds(const ScoreSet &set) {
  CheckScoreSet(set);
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return set.scores[a] < set.scores[b]; });
  std::size_t n_tgt = 0;
  for (bool t : set.targets) n_tgt += t;
  const std::size_t n_non = set.size() - n_tgt;

  std::vector<OperatingPoint> points;
  std::size_t tgt_below = 0, non_below = 0;
  auto emit = [&](double threshold) {
    points.push_back({threshold, static_cast<double>(tgt_below) / static_cast<double>(n_tgt),
                      static_cast<double>(n_non - non_below) / static_cast<double>(n_non), tgt_below,
                      n_non - non_below});
  };
  emit(set.scores[order.front()]);
  for (std::size_t i = 0; i < order.size();) {
    const double v = set.scores[order[i]];
    for (; i < order.size() && set.scores[order[i]] == v; ++i) (set.targets[order[i]] ? tgt_below : non_below)++;
    if (i < order.size())
      emit(v + (set.scores[order[i]] - v) / 2.0);
    else
      emit(std::nextafter(v, std::numeric_limits<double>::infinity()));
  }
  return points;
}

EerResult ComputeEer(const ScoreSet &set) {
  const std::vector<OperatingPoint> pts = SweepThresholds(set);
  std::size_t n_tgt = 0;
  for (bool t : set.targets) n_tgt += t;
  const std::size_t n_non = set.size() - n_tgt;
  // FRR >= FAR  <=>  misses * n_non >= false_alarms * n_tgt, compared exactly.
  std::size_t k = 0;
  while (k < pts.size() && pts[k].misses * n_non < pts[k].false_alarms * n_tgt) ++k;
  // The reject-all point always satisfies FRR = 1 >= FAR = 0, and the
  // accept-all point never does, so 1 <= k < size.
  const OperatingPoint &hi = pts[k];
  if (hi.misses * n_non == hi.false_alarms * n_tgt) return {hi.frr, hi.threshold};
  const OperatingPoint &lo = pts[k - 1];
  const double d_lo = lo.frr - lo.far;  // < 0
  const double d_hi = hi.frr - hi.far;  // > 0
  const double a = -d_lo / (d_hi - d_lo);
  return {lo.frr + a * (hi.frr - lo.frr), lo.threshold + a * (hi.threshold - lo.threshold)};
}

DcfResult ComputeMinDcf(const ScoreSet &set, const DcfParams &params) {
  params.Validate();
  const std::vector<OperatingPoint> pts = SweepThresholds(set);
  const double w_miss = params.c_miss * params.p_target;
  const double w_fa = params.c_fa * (1.0 - params.p_target);
  const double norm = std::min(w_miss, w_fa);
  DcfResult best{std::numeric_limits<double>::infinity(), 0.0};
  for (const auto &p : pts) {
    const double dcf = (w_miss * p.frr + w_fa * p.far) / norm;
    if (dcf < best.min_dcf) best = {dcf, p.threshold};
  }
  return best;
}

Tensor ModelEmbedder::Embed(const Tensor &frames, std::size_t frames_per_utt) const {
  return ldse::Embed(model_, frames, frames_per_utt);
}

std::vector<std::size_t> SegmentStarts(std::size_t frames, std::size_t num_segments, std::size_t seg_frames) {
  if (num_segments < 1 || seg_frames < 1) throw ContractError("segments: count and length must be >= 1");
  if (frames < seg_frames)
    throw ContractError("segments: utterance has " + std::to_string(frames) + " frames, segment needs " +
                        std::to_string(seg_frames));
  std::vector<std::size_t> starts(num_segments, 0);
  if (num_segments > 1)
    for (std::size_t k = 0; k < num_segments; ++k) starts[k] = k * (frames - seg_frames) / (num_segments - 1);
  return starts;
}

namespace {

std::size_t ResolveSegFrames(const SegmentConfig &config, std::size_t frames) {
  return config.seg_frames ? config.seg_frames : std::max<std::size_t>(1, frames / 2);
}

// Rows of `frames` cut into the utterance's segments, appended to `out`
// starting at row `at`.
void CopySegments(const Tensor &frames, std::size_t num_segments, std::size_t seg, Tensor &out, std::size_t at) {
  for (std::size_t s : SegmentStarts(frames.rows(), num_segments, seg))
    for (std::size_t t = 0; t < seg; ++t, ++at) std::copy(frames.row(s + t).begin(), frames.row(s + t).end(), out.row(at).begin());
}

}  // namespace

Tensor SegmentEmbeddings(const Embedder &embedder, const Tensor &frames, const SegmentConfig &config) {
  const std::size_t seg = ResolveSegFrames(config, frames.rows());
  Tensor stacked(config.num_segments * seg, frames.cols());
  CopySegments(frames, config.num_segments, seg, stacked, 0);
  return kernels::NormalizeRows(embedder.Embed(stacked, seg), kScoreEps);
}

double SegmentScore(const Embedder &embedder, const Tensor &a, const Tensor &b, const SegmentConfig &config) {
  return kernels::MeanPairDot(SegmentEmbeddings(embedder, a, config), SegmentEmbeddings(embedder, b, config));
}

KeyValues EvalReport::ToKeyValues() const {
  KeyValues kv;
  kv.Set("report.eer", FormatDouble(eer));
  kv.Set("report.eer_threshold", FormatDouble(eer_threshold));
  kv.Set("report.min_dcf", FormatDouble(min_dcf));
  kv.Set("report.min_dcf_threshold", FormatDouble(min_dcf_threshold));
  kv.Set("report.p_target", FormatDouble(dcf.p_target));
  kv.Set("report.c_miss", FormatDouble(dcf.c_miss));
  kv.Set("report.c_fa", FormatDouble(dcf.c_fa));
  kv.Set("report.slr_accuracy", slr_accuracy ? FormatDouble(*slr_accuracy) : "none");
  kv.Set("report.trials_evaluated", std::to_string(trials_evaluated));
  kv.Set("report.targets", std::to_string(targets));
  kv.Set("report.nontargets", std::to_string(nontargets));
  return kv;
}

EvalReport EvalReport::FromKeyValues(const KeyValues &kv) {
  EvalReport r;
  r.eer = kv.GetDouble("report.eer", 0.0);
  r.eer_threshold = kv.GetDouble("report.eer_threshold", 0.0);
  r.min_dcf = kv.GetDouble("report.min_dcf", 0.0);
  r.min_dcf_threshold = kv.GetDouble("report.min_dcf_threshold", 0.0);
  r.dcf.p_target = kv.GetDouble("report.p_target", r.dcf.p_target);
  r.dcf.c_miss = kv.GetDouble("report.c_miss", r.dcf.c_miss);
  r.dcf.c_fa = kv.GetDouble("report.c_fa", r.dcf.c_fa);
  const std::string slr = kv.GetString("report.slr_accuracy", "none");
  if (slr != "none") r.slr_accuracy = ParseDouble(slr, "report.slr_accuracy");
  r.trials_evaluated = static_cast<std::size_t>(kv.GetInt("report.trials_evaluated", 0));
  r.targets = static_cast<std::size_t>(kv.GetInt("report.targets", 0));
  r.nontargets = static_cast<std::size_t>(kv.GetInt("report.nontargets", 0));
  return r;
}

EvalReport ReportFromScores(const std::vector<Trial> &trials, const std::vector<double> &scores,
                            const DcfParams &dcf) {
  if (trials.size() != scores.size()) throw ContractError("report: trial and score counts differ");
  ScoreSet set;
  for (std::size_t i = 0; i < trials.size(); ++i) set.Add(scores[i], trials[i].target);
  EvalReport r;
  const EerResult eer = ComputeEer(set);
  const DcfResult mdcf = ComputeMinDcf(set, dcf);
  r.eer = eer.eer;
  r.eer_threshold = eer.threshold;
  r.min_dcf = mdcf.min_dcf;
  r.min_dcf_threshold = mdcf.threshold;
  r.dcf = dcf;
  r.trials_evaluated = trials.size();
  for (const Trial &t : trials) (t.target ? r.targets : r.nontargets)++;
  return r;
}

ProtocolScores EvaluateProtocol(const Embedder &embedder, const std::vector<Trial> &trials,
                                const FeatureStore &features, const EvalConfig &config) {
  if (trials.empty()) throw ContractError("evaluate: empty trial list");
  std::map<std::string, std::size_t> slot;
  for (const Trial &t : trials) {
    for (const std::string *id : {&t.enroll_id, &t.test_id}) {
      if (!features.count(*id)) throw ContractError("evaluate: no features for utterance " + *id);
      slot.emplace(*id, 0);
    }
  }
  std::vector<const std::string *> ids;
  for (auto &[id, index] : slot) {
    index = ids.size();
    ids.push_back(&id);
  }

  // Segment embeddings per utterance, embedding runs of utterances that
  // share a segment length together.
  const std::size_t num_seg = config.segments.num_segments;
  std::vector<Tensor> sets(ids.size());
  const std::size_t chunk = std::max<std::size_t>(1, config.embed_chunk);
  for (std::size_t begin = 0; begin < ids.size();) {
    const std::size_t seg = ResolveSegFrames(config.segments, features.at(*ids[begin]).rows());
    std::size_t end = begin + 1;
    while (end < ids.size() && end - begin < chunk &&
           ResolveSegFrames(config.segments, features.at(*ids[end]).rows()) == seg)
      ++end;
    const std::size_t feat_dim = features.at(*ids[begin]).cols();
    Tensor stacked((end - begin) * num_seg * seg, feat_dim);
    for (std::size_t u = begin; u < end; ++u) {
      const Tensor &f = features.at(*ids[u]);
      if (f.cols() != feat_dim) throw ContractError("evaluate: utterance " + *ids[u] + " has a different feature dim");
      CopySegments(f, num_seg, seg, stacked, (u - begin) * num_seg * seg);
    }
    const Tensor emb = kernels::NormalizeRows(embedder.Embed(stacked, seg), kScoreEps);
    for (std::size_t u = begin; u < end; ++u) sets[u] = emb.RowBlock((u - begin) * num_seg, num_seg);
    begin = end;
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(trials.size());
  for (const Trial &t : trials) pairs.emplace_back(slot.at(t.enroll_id), slot.at(t.test_id));
  ProtocolScores out;
  out.scores = config.parallel ? kernels::BatchMeanPairDot(sets, pairs) : kernels::serial::BatchMeanPairDot(sets, pairs);
  out.report = ReportFromScores(trials, out.scores, config.dcf);
  return out;
}

void WriteScores(std::ostream &os, const std::vector<Trial> &trials, const std::vector<double> &scores) {
  if (trials.size() != scores.size()) throw ContractError("score dump: trial and score counts differ");
  for (std::size_t i = 0; i < trials.size(); ++i)
    os << trials[i].enroll_id << ' ' << trials[i].test_id << ' ' << (trials[i].target ? 1 : 0) << ' '
       << FormatDouble(scores[i]) << '\n';
}

void SaveScores(const std::string &path, const std::vector<Trial> &trials, const std::vector<double> &scores) {
  std::ofstream os(path);
  if (!os) throw ContractError("cannot write " + path);
  WriteScores(os, trials, scores);
  if (!os) throw ContractError("write failed: " + path);
}

void ReadScores(std::istream &is, const std::string &source, std::vector<Trial> &trials,
                std::vector<double> &scores) {
  trials.clear();
  scores.clear();
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string enroll, test, label, score, extra;
    if (!(ls >> enroll >> test >> label >> score) || (ls >> extra) || (label != "0" && label != "1"))
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected `enrollId testId label score`");
    trials.push_back({enroll, test, label == "1"});
    scores.push_back(ParseDouble(score, source + ":" + std::to_string(lineno)));
  }
}

void ProbeConfig::Validate() const {
  if (epochs < 1 || batch_size < 1 || hidden_dim < 1) throw ContractError("probe: epochs, batch and width must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ContractError("probe: train_fraction must be in (0, 1)");
  if (!(lr >= 0.0)) throw ContractError("probe: lr must be >= 0");
}

KeyValues ProbeConfig::ToKeyValues() const {
  KeyValues kv;
  kv.Set("probe.epochs", std::to_string(epochs));
  kv.Set("probe.lr", FormatDouble(lr));
  kv.Set("probe.batch_size", std::to_string(batch_size));
  kv.Set("probe.train_fraction", FormatDouble(train_fraction));
  kv.Set("probe.hidden_dim", std::to_string(hidden_dim));
  kv.Set("probe.seed", std::to_string(seed));
  return kv;
}

ProbeConfig ProbeConfig::FromKeyValues(const KeyValues &kv, ProbeConfig c) {
  auto count = [&kv](const char *key, std::size_t fallback) {
    const std::int64_t v = kv.GetInt(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ParseError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.epochs = count("probe.epochs", c.epochs);
  c.lr = kv.GetDouble("probe.lr", c.lr);
  c.batch_size = count("probe.batch_size", c.batch_size);
  c.train_fraction = kv.GetDouble("probe.train_fraction", c.train_fraction);
  c.hidden_dim = count("probe.hidden_dim", c.hidden_dim);
  c.seed = static_cast<std::uint64_t>(kv.GetInt("probe.seed", static_cast<std::int64_t>(c.seed)));
  return c;
}

ProbeResult TrainProbe(const Tensor &x, const std::vector<std::size_t> &labels, std::size_t num_classes,
                       const ProbeConfig &config) {
  config.Validate();
  if (labels.size() != x.rows()) throw ContractError("probe: label count differs from input rows");
  if (num_classes < 2) throw ContractError("probe: need at least two classes");
  for (std::size_t l : labels)
    if (l >= num_classes) throw ContractError("probe: label out of range");
  const std::size_t n = x.rows();
  if (n < 2) throw ContractError("probe: need at least two examples");
  const std::size_t n_train =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(config.train_fraction * static_cast<double>(n))), 1,
                              n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(DeriveSeed(config.seed, kProbeSplit));
  split_rng.Shuffle(order);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  const std::size_t d = x.cols();
  Rng init(DeriveSeed(config.seed, kProbeInit));
  std::vector<Parameter> params;
  params.push_back({"w0", ParamGroup::kLanguage, Xavier(d, config.hidden_dim, init)});
  params.push_back({"b0", ParamGroup::kLanguage, Tensor(1, config.hidden_dim)});
  params.push_back({"w1", ParamGroup::kLanguage, Xavier(config.hidden_dim, d, init)});
  params.push_back({"b1", ParamGroup::kLanguage, Tensor(1, d)});
  params.push_back({"w2", ParamGroup::kLanguage, Xavier(d, num_classes, init)});
  params.push_back({"b2", ParamGroup::kLanguage, Tensor(1, num_classes)});

  auto forward = [&](ad::Tape &tape, const Tensor &in, bool track, std::vector<ad::Var> &vars) {
    vars.clear();
    for (const auto &p : params) vars.push_back(track ? tape.Leaf(p.value, p.name) : tape.Constant(p.value));
    ad::Var h = ad::Tanh(ad::Add(ad::MatMul(tape.Constant(in), vars[0]), vars[1]));
    h = ad::Tanh(ad::Add(ad::MatMul(h, vars[2]), vars[3]));
    return ad::Add(ad::MatMul(h, vars[4]), vars[5]);
  };
  auto gather = [&](const std::vector<std::size_t> &rows) {
    Tensor out(rows.size(), d);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
    return out;
  };

  AdamState state;
  Rng order_rng(DeriveSeed(config.seed, kProbeOrder));
  std::vector<ad::Var> vars;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.Shuffle(train);
    for (std::size_t b = 0; b < train.size(); b += config.batch_size) {
      std::vector<std::size_t> rows(train.begin() + static_cast<std::ptrdiff_t>(b),
                                    train.begin() + static_cast<std::ptrdiff_t>(std::min(train.size(), b + config.batch_size)));
      std::vector<std::size_t> y;
      for (std::size_t r : rows) y.push_back(labels[r]);
      ad::Tape tape;
      ad::Var loss = CrossEntropy(forward(tape, gather(rows), true, vars), y);
      tape.Backward(loss);
      GradientMap grads;
      for (std::size_t i = 0; i < params.size(); ++i) grads.emplace(params[i].name, tape.grad(vars[i]));
      AdamUpdate(params, grads, state, config.lr);
    }
  }

  ProbeResult r;
  r.train_size = train.size();
  r.test_size = test.size();
  ad::Tape tape;
  const Tensor logits = forward(tape, gather(test), false, vars).value();
  std::vector<std::size_t> counts(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto row = logits.row(i);
    const std::size_t pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += pred == labels[test[i]];
    ++counts[labels[test[i]]];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  r.majority_rate =
      static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(test.size());
  return r;
}

ProbeResult SlrProbe(const Embedder &embedder, const std::vector<UtteranceMeta> &metadata,
                     const FeatureStore &features, const ProbeConfig &config) {
  std::vector<const UtteranceMeta *> usable;
  std::map<std::string, std::size_t> languages;
  for (const auto &m : metadata) {
    if (m.excluded()) continue;
    if (!features.count(m.utterance_id)) throw ContractError("probe: no features for utterance " + m.utterance_id);
    usable.push_back(&m);
    languages.emplace(m.language_id, 0);
  }
  if (languages.size() < 2) throw ContractError("probe: need at least two languages, have " + std::to_string(languages.size()));
  std::size_t k = 0;
  for (auto &[lang, id] : languages) id = k++;

  Tensor x;
  std::vector<std::size_t> labels;
  // Embed runs of equal-length utterances in one call.
  for (std::size_t begin = 0; begin < usable.size();) {
    const Tensor &first = features.at(usable[begin]->utterance_id);
    std::size_t end = begin + 1;
    while (end < usable.size() && end - begin < 128 && features.at(usable[end]->utterance_id).rows() == first.rows())
      ++end;
    Tensor stacked((end - begin) * first.rows(), first.cols());
    for (std::size_t u = begin; u < end; ++u) {
      const Tensor &f = features.at(usable[u]->utterance_id);
      if (f.rows() != first.rows() || f.cols() != first.cols()) throw ContractError("probe: inconsistent utterance shapes");
      std::copy(f.values().begin(), f.values().end(),
                stacked.values().begin() + static_cast<std::ptrdiff_t>((u - begin) * f.size()));
    }
    const Tensor emb = embedder.Embed(stacked, first.rows());
    if (x.empty()) x = Tensor(usable.size(), emb.cols());
    for (std::size_t u = begin; u < end; ++u) {
      std::copy(emb.row(u - begin).begin(), emb.row(u - begin).end(), x.row(u).begin());
      labels.push_back(languages.at(usable[u]->language_id));
    }
    begin = end;
  }
  return TrainProbe(x, labels, languages.size(), config);
}

}  // namespace ldse
