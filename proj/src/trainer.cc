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

#include "ldse/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "json.hpp"
#include "ldse/errors.h"
#include "ldse/random.h"

namespace ldse {

namespace {

constexpr std::uint64_t kBatchStream = 0x5a3;

void CheckBatch(const Batch &b, const ModelConfig &c, bool need_speakers) {
  const std::size_t n = b.speakers * b.per_speaker;
  if (n == 0) throw ContractError("batch: empty");
  if (b.frames_per_utt == 0 || b.frames.rows() != n * b.frames_per_utt || b.frames.cols() != c.feat_dim)
    throw ContractError("batch: frames are " + b.frames.ShapeString() + ", expected " +
                        std::to_string(n * b.frames_per_utt) + "x" + std::to_string(c.feat_dim));
  if (b.language_labels.size() != n)
    throw ContractError("batch: missing language labels (" + std::to_string(b.language_labels.size()) + " of " +
                        std::to_string(n) + ")");
  for (std::size_t l : b.language_labels)
    if (l >= c.num_languages) throw ContractError("batch: language label " + std::to_string(l) + " out of range");
  if (!need_speakers) return;
  if (b.speaker_labels.size() != n)
    throw ContractError("batch: " + std::to_string(b.speaker_labels.size()) + " speaker labels for " +
                        std::to_string(n) + " utterances");
  for (std::size_t s = 0; s < b.speakers; ++s)
    for (std::size_t i = 1; i < b.per_speaker; ++i)
      if (b.speaker_labels[s * b.per_speaker + i] != b.speaker_labels[s * b.per_speaker])
        throw ContractError("batch: group " + std::to_string(s) + " mixes speakers");
  for (std::size_t l : b.speaker_labels)
    if (l >= c.num_speakers) throw ContractError("batch: speaker label " + std::to_string(l) + " out of range");
}

GradientMap Collect(const ad::Tape &tape, const BoundModel &m, const ModelBundle &model, ParamGroup group) {
  GradientMap out;
  for (const auto &p : model.params())
    if (p.group == group) out.emplace(p.name, tape.grad(m[p.name]));
  return out;
}

struct EmbeddingGraph {
  LossVars vars;
  ad::Var total;
};

EmbeddingGraph BuildEmbeddingGraph(const BoundModel &m, const Batch &batch, const TrainConfig &config) {
  ad::Tape &tape = m.tape();
  ad::Var frames = tape.Constant(batch.frames);
  ad::Var es = EmbedUtterances(m, frames, batch.frames_per_utt);
  EmbeddingGraph g;
  if (config.speaker_loss == SpeakerLoss::kSoftmax)
    g.vars.spk = CrossEntropy(SpeakerLogits(m, es), batch.speaker_labels);
  else
    g.vars.spk = AngularPrototypical(es, batch.speakers, batch.per_speaker, m["proto.w"], m["proto.b"]);
  LanguageOutput lo = LanguageForward(m, es, ModeUsesGrl(config.mode));
  g.vars.lang = CrossEntropy(lo.logits, batch.language_labels);
  g.vars.cos = CosineMin(es, lo.features);
  if (es.rows() >= 2) g.vars.corr = Mapc(es, lo.features);
  g.total = TotalLoss(g.vars, config.lambda, config.mode, config.corr_weight);
  return g;
}

LossTerms TermsOf(const EmbeddingGraph &g, Mode mode) {
  LossTerms t;
  t.mode = mode;
  t.spk = g.vars.spk.value()[0];
  t.lang = g.vars.lang.value()[0];
  t.cos = g.vars.cos.value()[0];
  t.corr = g.vars.corr.valid() ? g.vars.corr.value()[0] : 0.0;
  t.total = g.total.value()[0];
  return t;
}

void CheckFinite(const LossTerms &t, const char *phase) {
  if (!std::isfinite(t.total)) throw NumericError(std::string(phase) + ": non-finite loss");
}

}  // namespace

const char *SpeakerLossName(SpeakerLoss loss) {
  return loss == SpeakerLoss::kSoftmax ? "softmax" : "angproto";
}

SpeakerLoss ParseSpeakerLoss(const std::string &name) {
  if (name == "softmax") return SpeakerLoss::kSoftmax;
  if (name == "angproto") return SpeakerLoss::kAngularPrototypical;
  throw ParseError("unknown speaker loss `" + name + "` (expected softmax or angproto)");
}

void TrainConfig::Validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ContractError("train: lambda must be >= 0");
  if (!(decay_per_epoch >= 0.0 && decay_per_epoch < 1.0))
    throw ContractError("train: decay_per_epoch must be in [0, 1)");
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ContractError("train: lr0 must be >= 0");
  if (speakers_per_batch < 1 || utts_per_speaker < 1)
    throw ContractError("train: speakers_per_batch and utts_per_speaker must be >= 1");
  if ((mode == Mode::kMapc || mode == Mode::kOurs) && speakers_per_batch * utts_per_speaker < 2)
    throw ContractError("train: MAPC needs N*M >= 2");
  if (speaker_loss == SpeakerLoss::kAngularPrototypical && utts_per_speaker < 2)
    throw ContractError("train: angproto needs utts_per_speaker >= 2");
  if (!(clip_norm >= 0.0)) throw ContractError("train: clip_norm must be >= 0");
  if (!(corr_weight >= 0.0)) throw ContractError("train: corr_weight must be >= 0");
}

double TrainConfig::LearningRate(std::size_t epoch) const {
  return lr0 * std::pow(1.0 - decay_per_epoch, static_cast<double>(epoch));
}

KeyValues TrainConfig::ToKeyValues() const {
  KeyValues kv;
  kv.Set("train.mode", ModeName(mode));
  kv.Set("train.lambda", FormatDouble(lambda));
  kv.Set("train.lr0", FormatDouble(lr0));
  kv.Set("train.decay_per_epoch", FormatDouble(decay_per_epoch));
  kv.Set("train.epochs", std::to_string(epochs));
  kv.Set("train.speakers_per_batch", std::to_string(speakers_per_batch));
  kv.Set("train.utts_per_speaker", std::to_string(utts_per_speaker));
  kv.Set("train.frames_per_utt", std::to_string(frames_per_utt));
  kv.Set("train.batches_per_epoch", std::to_string(batches_per_epoch));
  kv.Set("train.disc_steps_per_batch", std::to_string(disc_steps_per_batch));
  kv.Set("train.train_discriminator_in_baseline", train_discriminator_in_baseline ? "true" : "false");
  kv.Set("train.clip_norm", FormatDouble(clip_norm));
  kv.Set("train.corr_weight", FormatDouble(corr_weight));
  kv.Set("train.speaker_loss", SpeakerLossName(speaker_loss));
  kv.Set("train.seed", std::to_string(seed));
  kv.Set("model.hidden_dim", std::to_string(model.hidden_dim));
  kv.Set("model.embed_dim", std::to_string(model.embed_dim));
  kv.Set("model.encoder_layers", std::to_string(model.encoder_layers));
  kv.Set("model.attention_dim", std::to_string(model.attention_dim));
  kv.Set("model.lang_hidden_dim", std::to_string(model.lang_hidden_dim));
  return kv;
}

TrainConfig TrainConfig::FromKeyValues(const KeyValues &kv, TrainConfig c) {
  auto count = [&kv](const char *key, std::size_t fallback) {
    const std::int64_t v = kv.GetInt(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ParseError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  auto flag = [&kv](const char *key, bool fallback) {
    const std::string v = kv.GetString(key, fallback ? "true" : "false");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParseError(std::string(key) + ": expected true or false, got `" + v + "`");
  };
  if (auto m = kv.Get("train.mode")) c.mode = ParseMode(*m);
  c.lambda = kv.GetDouble("train.lambda", c.lambda);
  c.lr0 = kv.GetDouble("train.lr0", c.lr0);
  c.decay_per_epoch = kv.GetDouble("train.decay_per_epoch", c.decay_per_epoch);
  c.epochs = count("train.epochs", c.epochs);
  c.speakers_per_batch = count("train.speakers_per_batch", c.speakers_per_batch);
  c.utts_per_speaker = count("train.utts_per_speaker", c.utts_per_speaker);
  c.frames_per_utt = count("train.frames_per_utt", c.frames_per_utt);
  c.batches_per_epoch = count("train.batches_per_epoch", c.batches_per_epoch);
  c.disc_steps_per_batch = count("train.disc_steps_per_batch", c.disc_steps_per_batch);
  c.train_discriminator_in_baseline =
      flag("train.train_discriminator_in_baseline", c.train_discriminator_in_baseline);
  c.clip_norm = kv.GetDouble("train.clip_norm", c.clip_norm);
  c.corr_weight = kv.GetDouble("train.corr_weight", c.corr_weight);
  if (auto s = kv.Get("train.speaker_loss")) c.speaker_loss = ParseSpeakerLoss(*s);
  c.seed = static_cast<std::uint64_t>(kv.GetInt("train.seed", static_cast<std::int64_t>(c.seed)));
  c.model = ModelConfig::FromKeyValues(kv, c.model);
  return c;
}

void AdamUpdate(std::vector<Parameter> &params, const GradientMap &grads, AdamState &state, double lr) {
  for (const auto &p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw ShapeError("AdamUpdate: gradient for " + p.name + " is " + it->second.ShapeString() + ", parameter is " +
                       p.value.ShapeString());
    if (!it->second.AllFinite()) throw NumericError("AdamUpdate: non-finite gradient for parameter " + p.name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto &p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    const Tensor &g = it->second;
    Tensor &m = state.m.try_emplace(p.name, p.value.rows(), p.value.cols()).first->second;
    Tensor &v = state.v.try_emplace(p.name, p.value.rows(), p.value.cols()).first->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double ClipGlobalNorm(GradientMap &grads, double max_norm) {
  double sq = 0.0;
  for (const auto &[name, g] : grads)
    for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto &[name, g] : grads)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
  }
  return norm;
}

StepResult DiscriminatorGradients(const ModelBundle &model, const Batch &batch) {
  CheckBatch(batch, model.config(), false);
  ad::Tape tape;
  BoundModel m(tape, model, false, true);
  ad::Var es = EmbedUtterances(m, tape.Constant(batch.frames), batch.frames_per_utt);
  ad::Var lang = CrossEntropy(LanguageForward(m, es, false).logits, batch.language_labels);
  tape.Backward(lang);
  StepResult r;
  r.terms.lang = r.terms.total = lang.value()[0];
  r.grads = Collect(tape, m, model, ParamGroup::kLanguage);
  return r;
}

StepResult EmbeddingGradients(const ModelBundle &model, const Batch &batch, const TrainConfig &config) {
  CheckBatch(batch, model.config(), true);
  if (config.speaker_loss == SpeakerLoss::kAngularPrototypical && batch.per_speaker < 2)
    throw ContractError("batch: angproto needs at least 2 utterances per speaker");
  ad::Tape tape;
  BoundModel m(tape, model, true, false);
  EmbeddingGraph g = BuildEmbeddingGraph(m, batch, config);
  tape.Backward(g.total);
  StepResult r;
  r.terms = TermsOf(g, config.mode);
  r.grads = Collect(tape, m, model, ParamGroup::kSpeaker);
  return r;
}

GradientMap LanguageLossSpeakerGradients(const ModelBundle &model, const Batch &batch, bool grl_active) {
  CheckBatch(batch, model.config(), false);
  ad::Tape tape;
  BoundModel m(tape, model, true, false);
  ad::Var es = EmbedUtterances(m, tape.Constant(batch.frames), batch.frames_per_utt);
  ad::Var lang = CrossEntropy(LanguageForward(m, es, grl_active).logits, batch.language_labels);
  tape.Backward(lang);
  return Collect(tape, m, model, ParamGroup::kSpeaker);
}

LossTerms DiscriminatorStep(ModelBundle &model, const Batch &batch, AdamState &state, double lr,
                            double clip_norm) {
  StepResult r = DiscriminatorGradients(model, batch);
  CheckFinite(r.terms, "discriminator step");
  if (clip_norm > 0.0) ClipGlobalNorm(r.grads, clip_norm);
  AdamUpdate(model.params(), r.grads, state, lr);
  return r.terms;
}

LossTerms EmbeddingStep(ModelBundle &model, const Batch &batch, const TrainConfig &config, AdamState &state,
                        double lr) {
  StepResult r = EmbeddingGradients(model, batch, config);
  CheckFinite(r.terms, "embedding step");
  if (config.mode != Mode::kBaseline && config.clip_norm > 0.0) ClipGlobalNorm(r.grads, config.clip_norm);
  AdamUpdate(model.params(), r.grads, state, lr);
  Tensor &w = model.at("proto.w");
  w[0] = std::max(w[0], kMinProtoScale);
  return r.terms;
}

std::string EpochLog::ToJsonLine() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["mode"] = ModeName(mode);
  j["lr"] = lr;
  j["lSpk"] = mean.spk;
  j["lLang"] = mean.lang;
  j["lCorr"] = mean.corr;
  j["lCos"] = mean.cos;
  j["lTotal"] = mean.total;
  j["lLangDisc"] = disc_lang;
  j["wallTime"] = wall_seconds;
  j["diverged"] = diverged;
  // nlohmann writes non-finite numbers as null.
  return j.dump();
}

ModelConfig ResolveModelConfig(const TrainConfig &config, const Dataset &data, const TrainingIndex &index) {
  if (index.speakers.empty() || index.NumUtterances() == 0)
    throw ContractError("fit: dataset has no usable training utterances");
  ModelConfig mc = config.model;
  const std::string &first = index.by_speaker.front().begin()->second.front();
  mc.feat_dim = data.features.at(first).cols();
  mc.num_speakers = index.speakers.size();
  mc.num_languages = index.languages.size();
  mc.seed = config.seed;
  return mc;
}

FitResult Fit(const TrainConfig &config, const Dataset &data, const std::function<void(const EpochLog &)> &on_epoch) {
  config.Validate();
  if (data.metadata.empty()) throw ContractError("fit: empty dataset");
  FitResult result;
  result.index = BuildTrainingIndex(data);
  const TrainingIndex &index = result.index;
  result.model = ModelBundle(ResolveModelConfig(config, data, index));

  std::size_t frames = config.frames_per_utt;
  if (frames == 0) {
    frames = SIZE_MAX;
    for (const auto &by_lang : index.by_speaker)
      for (const auto &[lang, ids] : by_lang)
        for (const auto &id : ids) frames = std::min(frames, data.features.at(id).rows());
  }
  const std::size_t per_batch = config.speakers_per_batch * config.utts_per_speaker;
  const std::size_t batches =
      config.batches_per_epoch ? config.batches_per_epoch : std::max<std::size_t>(1, index.NumUtterances() / per_batch);
  const bool train_disc = config.mode != Mode::kBaseline || config.train_discriminator_in_baseline;
  const std::uint64_t batch_seed = DeriveSeed(config.seed, kBatchStream);
  const double disc_clip = config.mode == Mode::kBaseline ? 0.0 : config.clip_norm;

  AdamState disc_state, emb_state;
  for (std::size_t epoch = 0; epoch < config.epochs && !result.diverged; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.mode = config.mode;
    log.mean.mode = config.mode;
    log.lr = config.LearningRate(epoch);
    std::size_t done = 0;
    try {
      for (std::size_t b = 0; b < batches; ++b) {
        Batch batch = SampleBatch(data, index, config.speakers_per_batch, config.utts_per_speaker, frames, batch_seed,
                                  epoch * batches + b);
        if (train_disc)
          for (std::size_t k = 0; k < config.disc_steps_per_batch; ++k)
            log.disc_lang += DiscriminatorStep(result.model, batch, disc_state, log.lr, disc_clip).lang;
        LossTerms t = EmbeddingStep(result.model, batch, config, emb_state, log.lr);
        log.mean.spk += t.spk;
        log.mean.lang += t.lang;
        log.mean.corr += t.corr;
        log.mean.cos += t.cos;
        log.mean.total += t.total;
        ++done;
      }
    } catch (const NumericError &) {
      log.diverged = result.diverged = true;
    }
    if (done > 0) {
      const double n = static_cast<double>(done);
      log.mean.spk /= n;
      log.mean.lang /= n;
      log.mean.corr /= n;
      log.mean.cos /= n;
      log.mean.total /= n;
      if (train_disc) log.disc_lang /= n * static_cast<double>(config.disc_steps_per_batch);
    }
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace ldse
