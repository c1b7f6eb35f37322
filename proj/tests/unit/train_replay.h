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

#ifndef LDSE_TESTS_TRAIN_REPLAY_H_
#define LDSE_TESTS_TRAIN_REPLAY_H_

// Re-runs the alternating training loop step by step, hashing the frozen
// parameter group around every update. The replay must end on the same
// model as Fit for the hashes to speak for Fit.

#include <algorithm>
#include <cstdint>

#include "ldse/random.h"
#include "ldse/trainer.h"

namespace ldse::testing {

struct FreezeReplay {
  ModelBundle model;
  std::size_t steps_checked = 0;
  std::size_t disc_violations = 0;  // speaker group changed by a discriminator step
  std::size_t emb_violations = 0;   // language group changed by an embedding step
};

inline FreezeReplay ReplayWithFreezeChecks(const TrainConfig &config, const Dataset &data) {
  const TrainingIndex index = BuildTrainingIndex(data);
  FreezeReplay r;
  r.model = ModelBundle(ResolveModelConfig(config, data, index));
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
  const bool baseline = config.mode == Mode::kBaseline;
  const bool train_disc = !baseline || config.train_discriminator_in_baseline;
  const std::uint64_t batch_seed = DeriveSeed(config.seed, 0x5a3);
  AdamState disc, emb;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.LearningRate(epoch);
    for (std::size_t b = 0; b < batches; ++b) {
      const Batch batch = SampleBatch(data, index, config.speakers_per_batch, config.utts_per_speaker, frames,
                                      batch_seed, epoch * batches + b);
      if (train_disc)
        for (std::size_t k = 0; k < config.disc_steps_per_batch; ++k) {
          const auto before = r.model.GroupHash(ParamGroup::kSpeaker);
          DiscriminatorStep(r.model, batch, disc, lr, baseline ? 0.0 : config.clip_norm);
          r.disc_violations += r.model.GroupHash(ParamGroup::kSpeaker) != before;
          ++r.steps_checked;
        }
      const auto before = r.model.GroupHash(ParamGroup::kLanguage);
      EmbeddingStep(r.model, batch, config, emb, lr);
      r.emb_violations += r.model.GroupHash(ParamGroup::kLanguage) != before;
      ++r.steps_checked;
    }
  }
  return r;
}

}  // namespace ldse::testing

#endif  // LDSE_TESTS_TRAIN_REPLAY_H_
