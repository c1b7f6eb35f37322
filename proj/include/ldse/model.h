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

#ifndef LDSE_MODEL_H_
#define LDSE_MODEL_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ldse/autodiff.h"
#include "ldse/keyvalue.h"
#include "ldse/tensor.h"

namespace ldse {

struct ModelConfig {
  std::size_t feat_dim = 32;         // input features per frame
  std::size_t hidden_dim = 64;       // encoder width
  std::size_t embed_dim = 32;        // D, shared by e^S and e^L
  std::size_t num_speakers = 1;
  std::size_t num_languages = 2;
  std::size_t encoder_layers = 2;
  std::size_t attention_dim = 64;    // SAP hidden size
  std::size_t lang_hidden_dim = 64;  // language classifier FC1 width
  std::uint64_t seed = 0;

  void Validate() const;
  KeyValues ToKeyValues() const;
  static ModelConfig FromKeyValues(const KeyValues &kv) { return FromKeyValues(kv, ModelConfig()); }
  static ModelConfig FromKeyValues(const KeyValues &kv, ModelConfig base);
};

// Parameters belong to one of two groups; the two training phases each
// update exactly one group.
enum class ParamGroup { kSpeaker = 0, kLanguage = 1 };

struct Parameter {
  std::string name;
  ParamGroup group;
  Tensor value;
};

// Encoder + SAP + speaker classifier + angular-prototypical scale/bias
// (speaker group) and the three-layer language classifier (language group).
class ModelBundle {
 public:
  ModelBundle() = default;
  // Xavier-uniform weights, zero biases, prototypical w=10 b=-5; seeded.
  explicit ModelBundle(const ModelConfig &config);

  const ModelConfig &config() const { return config_; }
  std::vector<Parameter> &params() { return params_; }
  const std::vector<Parameter> &params() const { return params_; }

  Tensor &at(const std::string &name);
  const Tensor &at(const std::string &name) const;

  // FNV hash over every parameter of `group`; freeze checks compare these.
  std::uint64_t GroupHash(ParamGroup group) const;

  friend bool operator==(const ModelBundle &a, const ModelBundle &b);

 private:
  void Add(std::string name, ParamGroup group, Tensor value);

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Lower clamp for the angular-prototypical scale.
inline constexpr double kMinProtoScale = 1e-6;

// Parameters placed on a tape. Groups not in `tracked` become constants so
// no gradient is computed for them.
class BoundModel {
 public:
  BoundModel(ad::Tape &tape, const ModelBundle &model, bool track_speaker, bool track_language);

  ad::Var operator[](const std::string &name) const { return vars_.at(name); }
  const ModelConfig &config() const { return config_; }
  ad::Tape &tape() const { return *tape_; }
  const std::map<std::string, ad::Var> &vars() const { return vars_; }

 private:
  ad::Tape *tape_;
  ModelConfig config_;
  std::map<std::string, ad::Var> vars_;
};

// Per-frame MLP with tanh: (rows x feat_dim) -> (rows x hidden_dim).
ad::Var EncodeFrames(const BoundModel &m, ad::Var frames);

struct PoolOutput {
  ad::Var embedding;  // B x D
  ad::Var weights;    // B x T attention weights
};

// Self-attentive pooling over B utterances of `frames_per_utt` frames each,
// stacked row-wise in `z` ((B*T) x hidden_dim):
//   h_t = tanh(W z_t + b), alpha = softmax_t(h_t . u), e = sum_t alpha_t (V z_t + c)
PoolOutput SelfAttentivePool(const BoundModel &m, ad::Var z, std::size_t frames_per_utt);

// Speaker classifier: one affine layer, B x D -> B x num_speakers.
ad::Var SpeakerLogits(const BoundModel &m, ad::Var embedding);

struct LanguageOutput {
  ad::Var logits;    // B x num_languages
  ad::Var features;  // B x D, e^L (post-tanh output of FC2)
};

// GRL -> FC1(tanh) -> FC2(tanh) -> FC3.
LanguageOutput LanguageForward(const BoundModel &m, ad::Var embedding, bool grl_active);

// Speaker embeddings for B utterances given as (B*T) x feat_dim frames.
ad::Var EmbedUtterances(const BoundModel &m, ad::Var frames, std::size_t frames_per_utt);

// Untracked forward pass; returns B x D embeddings.
Tensor Embed(const ModelBundle &model, const Tensor &frames, std::size_t frames_per_utt);

// ---- checkpoints ------------------------------------------------------

struct Checkpoint {
  ModelBundle model;
  KeyValues provenance;  // effective run config, echoed for reproducibility
  std::string rng_state;
};

void WriteCheckpoint(const std::string &path, const Checkpoint &ckpt);
Checkpoint ReadCheckpoint(const std::string &path);
// Stream variants, used by the file versions and by tests.
void WriteCheckpoint(std::ostream &os, const Checkpoint &ckpt);
Checkpoint ReadCheckpoint(std::istream &is);

}  // namespace ldse

#endif  // LDSE_MODEL_H_
