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

#ifndef LDSE_TRAINER_H_
#define LDSE_TRAINER_H_

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ldse/dataset.h"
#include "ldse/keyvalue.h"
#include "ldse/losses.h"
#include "ldse/model.h"

namespace ldse {

enum class SpeakerLoss { kSoftmax, kAngularPrototypical };
const char *SpeakerLossName(SpeakerLoss loss);
SpeakerLoss ParseSpeakerLoss(const std::string &name);

struct TrainConfig {
  Mode mode = Mode::kOurs;
  double lambda = 0.5;
  double lr0 = 0.001;
  double decay_per_epoch = 0.03;
  std::size_t epochs = 30;
  std::size_t speakers_per_batch = 20;  // N
  std::size_t utts_per_speaker = 2;     // M
  std::size_t frames_per_utt = 0;       // T; 0 = shortest training utterance
  std::size_t batches_per_epoch = 0;    // 0 = training utterances / (N*M)
  std::size_t disc_steps_per_batch = 1;
  bool train_discriminator_in_baseline = true;
  double clip_norm = 5.0;  // global-norm clip; never applied in baseline mode
  double corr_weight = 1.0;
  SpeakerLoss speaker_loss = SpeakerLoss::kSoftmax;
  std::uint64_t seed = 0;
  // Width/depth of the networks; data-dependent sizes are filled in by Fit.
  ModelConfig model;

  void Validate() const;
  // Learning rate for a zero-based epoch: lr0 * (1 - decay)^epoch.
  double LearningRate(std::size_t epoch) const;
  KeyValues ToKeyValues() const;
  static TrainConfig FromKeyValues(const KeyValues &kv) { return FromKeyValues(kv, TrainConfig()); }
  static TrainConfig FromKeyValues(const KeyValues &kv, TrainConfig base);
};

using GradientMap = std::map<std::string, Tensor>;

// Bias-corrected Adam with one moment pair per parameter name.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

// Updates every parameter that has an entry in `grads`. All gradients are
// checked before anything is modified; a non-finite one raises
// NumericError naming the parameter.
void AdamUpdate(std::vector<Parameter> &params, const GradientMap &grads, AdamState &state, double lr);

// Scales all gradients so their joint L2 norm is at most max_norm; returns
// the norm before clipping.
double ClipGlobalNorm(GradientMap &grads, double max_norm);

struct StepResult {
  LossTerms terms;
  GradientMap grads;
};

// L_lang with the speaker network frozen and the GRL off; gradients for
// the language classifier only.
StepResult DiscriminatorGradients(const ModelBundle &model, const Batch &batch);

// The mode's total loss with the language classifier frozen; gradients for
// the speaker group only. The GRL is active for grl and ours.
StepResult EmbeddingGradients(const ModelBundle &model, const Batch &batch, const TrainConfig &config);

// Gradient of L_lang alone w.r.t. the speaker group, with the GRL on or
// off. Used to inspect the adversarial signal.
GradientMap LanguageLossSpeakerGradients(const ModelBundle &model, const Batch &batch, bool grl_active);

LossTerms DiscriminatorStep(ModelBundle &model, const Batch &batch, AdamState &state, double lr,
                            double clip_norm = 0.0);
LossTerms EmbeddingStep(ModelBundle &model, const Batch &batch, const TrainConfig &config,
                        AdamState &state, double lr);

struct EpochLog {
  std::size_t epoch = 0;
  Mode mode = Mode::kBaseline;
  double lr = 0.0;
  LossTerms mean;  // averaged over the epoch's embedding steps
  double disc_lang = 0.0;  // mean L_lang seen by the discriminator step
  double wall_seconds = 0.0;
  bool diverged = false;

  // One JSON object per line.
  std::string ToJsonLine() const;
};

struct FitResult {
  ModelBundle model;
  std::vector<EpochLog> log;
  TrainingIndex index;
  bool diverged = false;
};

// Alternating optimisation: per batch, disc_steps_per_batch discriminator
// updates then one embedding update on the same batch. Separate Adam
// states per phase. Stops early (diverged = true) if a step produces a
// non-finite loss or gradient.
FitResult Fit(const TrainConfig &config, const Dataset &data,
              const std::function<void(const EpochLog &)> &on_epoch = {});

// Model sizes implied by a dataset and config.
ModelConfig ResolveModelConfig(const TrainConfig &config, const Dataset &data, const TrainingIndex &index);

}  // namespace ldse

#endif  // LDSE_TRAINER_H_
