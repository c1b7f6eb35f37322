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

#include "ldse/model.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ldse/binio.h"
#include "ldse/errors.h"
#include "ldse/random.h"

namespace ldse {
namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr char kCheckpointMagic[8] = {'L', 'D', 'S', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

Tensor Xavier(Rng &rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(fan_in, fan_out);
  for (double &v : w.values()) v = rng.Uniform(-limit, limit);
  return w;
}

std::string EncName(const char *kind, std::size_t layer) {
  return std::string("enc.") + kind + std::to_string(layer);
}

}  // namespace

void ModelConfig::Validate() const {
  auto positive = [](std::size_t v, const char *name) {
    if (v < 1) throw ContractError(std::string("ModelConfig: ") + name + " must be >= 1");
  };
  positive(feat_dim, "feat_dim");
  positive(hidden_dim, "hidden_dim");
  positive(embed_dim, "embed_dim");
  positive(num_speakers, "num_speakers");
  positive(num_languages, "num_languages");
  positive(encoder_layers, "encoder_layers");
  positive(attention_dim, "attention_dim");
  positive(lang_hidden_dim, "lang_hidden_dim");
}

KeyValues ModelConfig::ToKeyValues() const {
  KeyValues kv;
  kv.Set("model.feat_dim", std::to_string(feat_dim));
  kv.Set("model.hidden_dim", std::to_string(hidden_dim));
  kv.Set("model.embed_dim", std::to_string(embed_dim));
  kv.Set("model.num_speakers", std::to_string(num_speakers));
  kv.Set("model.num_languages", std::to_string(num_languages));
  kv.Set("model.encoder_layers", std::to_string(encoder_layers));
  kv.Set("model.attention_dim", std::to_string(attention_dim));
  kv.Set("model.lang_hidden_dim", std::to_string(lang_hidden_dim));
  kv.Set("model.seed", std::to_string(seed));
  return kv;
}

ModelConfig ModelConfig::FromKeyValues(const KeyValues &kv, ModelConfig c) {
  auto count = [&kv](const char *key, std::size_t fallback) {
    const std::int64_t v = kv.GetInt(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ParseError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.feat_dim = count("model.feat_dim", c.feat_dim);
  c.hidden_dim = count("model.hidden_dim", c.hidden_dim);
  c.embed_dim = count("model.embed_dim", c.embed_dim);
  c.num_speakers = count("model.num_speakers", c.num_speakers);
  c.num_languages = count("model.num_languages", c.num_languages);
  c.encoder_layers = count("model.encoder_layers", c.encoder_layers);
  c.attention_dim = count("model.attention_dim", c.attention_dim);
  c.lang_hidden_dim = count("model.lang_hidden_dim", c.lang_hidden_dim);
  c.seed = static_cast<std::uint64_t>(kv.GetInt("model.seed", static_cast<std::int64_t>(c.seed)));
  return c;
}

ModelBundle::ModelBundle(const ModelConfig &config) : config_(config) {
  config_.Validate();
  Rng rng(DeriveSeed(config_.seed, kInitStream));
  const auto &c = config_;
  const auto S = ParamGroup::kSpeaker, L = ParamGroup::kLanguage;

  std::size_t in = c.feat_dim;
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    Add(EncName("w", l), S, Xavier(rng, in, c.hidden_dim));
    Add(EncName("b", l), S, Tensor(1, c.hidden_dim));
    in = c.hidden_dim;
  }
  Add("sap.w", S, Xavier(rng, c.hidden_dim, c.attention_dim));
  Add("sap.b", S, Tensor(1, c.attention_dim));
  Add("sap.u", S, Xavier(rng, c.attention_dim, 1));
  Add("sap.v", S, Xavier(rng, c.hidden_dim, c.embed_dim));
  Add("sap.c", S, Tensor(1, c.embed_dim));
  Add("spk.w", S, Xavier(rng, c.embed_dim, c.num_speakers));
  Add("spk.b", S, Tensor(1, c.num_speakers));
  Add("proto.w", S, Tensor(1, 1, 10.0));
  Add("proto.b", S, Tensor(1, 1, -5.0));

  Add("lang.w0", L, Xavier(rng, c.embed_dim, c.lang_hidden_dim));
  Add("lang.b0", L, Tensor(1, c.lang_hidden_dim));
  Add("lang.w1", L, Xavier(rng, c.lang_hidden_dim, c.embed_dim));
  Add("lang.b1", L, Tensor(1, c.embed_dim));
  Add("lang.w2", L, Xavier(rng, c.embed_dim, c.num_languages));
  Add("lang.b2", L, Tensor(1, c.num_languages));
}

void ModelBundle::Add(std::string name, ParamGroup group, Tensor value) {
  if (index_.count(name)) throw ContractError("ModelBundle: duplicate parameter " + name);
  index_[name] = params_.size();
  params_.push_back({std::move(name), group, std::move(value)});
}

Tensor &ModelBundle::at(const std::string &name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ModelBundle: no parameter named " + name);
  return params_[it->second].value;
}

const Tensor &ModelBundle::at(const std::string &name) const {
  return const_cast<ModelBundle *>(this)->at(name);
}

std::uint64_t ModelBundle::GroupHash(ParamGroup group) const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const Parameter &p : params_)
    if (p.group == group) h = HashTensor(p.value, h);
  return h;
}

bool operator==(const ModelBundle &a, const ModelBundle &b) {
  if (a.params_.size() != b.params_.size()) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    const Parameter &x = a.params_[i], &y = b.params_[i];
    if (x.name != y.name || x.group != y.group || !(x.value == y.value)) return false;
  }
  return a.config_.ToKeyValues().ToText() == b.config_.ToKeyValues().ToText();
}

BoundModel::BoundModel(ad::Tape &tape, const ModelBundle &model, bool track_speaker,
                       bool track_language)
    : tape_(&tape), config_(model.config()) {
  for (const Parameter &p : model.params()) {
    const bool track = p.group == ParamGroup::kSpeaker ? track_speaker : track_language;
    vars_.emplace(p.name, track ? tape.Leaf(p.value, p.name) : tape.Constant(p.value));
  }
}

ad::Var EncodeFrames(const BoundModel &m, ad::Var frames) {
  if (frames.cols() != m.config().feat_dim)
    throw ShapeError("EncodeFrames: expected " + std::to_string(m.config().feat_dim) +
                     " features per frame, got " + std::to_string(frames.cols()));
  if (frames.rows() == 0) throw ShapeError("EncodeFrames: no frames");
  ad::Var h = frames;
  for (std::size_t l = 0; l < m.config().encoder_layers; ++l)
    h = ad::Tanh(ad::Add(ad::MatMul(h, m[EncName("w", l)]), m[EncName("b", l)]));
  return h;
}

PoolOutput SelfAttentivePool(const BoundModel &m, ad::Var z, std::size_t frames_per_utt) {
  if (frames_per_utt == 0 || z.rows() % frames_per_utt != 0)
    throw ShapeError("SelfAttentivePool: " + std::to_string(z.rows()) +
                     " frames do not split into utterances of " + std::to_string(frames_per_utt));
  const std::size_t utts = z.rows() / frames_per_utt;
  ad::Var h = ad::Tanh(ad::Add(ad::MatMul(z, m["sap.w"]), m["sap.b"]));
  ad::Var scores = ad::Reshape(ad::MatMul(h, m["sap.u"]), utts, frames_per_utt);
  ad::Var alpha = ad::RowSoftmax(scores);
  ad::Var projected = ad::Add(ad::MatMul(z, m["sap.v"]), m["sap.c"]);
  ad::Var weighted = ad::Mul(projected, ad::Reshape(alpha, utts * frames_per_utt, 1));
  return {ad::BlockRowSum(weighted, frames_per_utt), alpha};
}

ad::Var SpeakerLogits(const BoundModel &m, ad::Var embedding) {
  return ad::Add(ad::MatMul(embedding, m["spk.w"]), m["spk.b"]);
}

LanguageOutput LanguageForward(const BoundModel &m, ad::Var embedding, bool grl_active) {
  if (embedding.cols() != m.config().embed_dim)
    throw ShapeError("LanguageForward: embedding width " + std::to_string(embedding.cols()) +
                     " != " + std::to_string(m.config().embed_dim));
  ad::Var x = ad::GradientReversal(embedding, grl_active);
  ad::Var h1 = ad::Tanh(ad::Add(ad::MatMul(x, m["lang.w0"]), m["lang.b0"]));
  ad::Var h2 = ad::Tanh(ad::Add(ad::MatMul(h1, m["lang.w1"]), m["lang.b1"]));
  ad::Var logits = ad::Add(ad::MatMul(h2, m["lang.w2"]), m["lang.b2"]);
  return {logits, h2};
}

ad::Var EmbedUtterances(const BoundModel &m, ad::Var frames, std::size_t frames_per_utt) {
  return SelfAttentivePool(m, EncodeFrames(m, frames), frames_per_utt).embedding;
}

Tensor Embed(const ModelBundle &model, const Tensor &frames, std::size_t frames_per_utt) {
  ad::Tape tape;
  BoundModel m(tape, model, false, false);
  return EmbedUtterances(m, tape.Constant(frames), frames_per_utt).value();
}

void WriteCheckpoint(std::ostream &os, const Checkpoint &ckpt) {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  binio::WriteU32(os, kCheckpointVersion);
  binio::WriteString(os, ckpt.model.config().ToKeyValues().ToText());
  binio::WriteString(os, ckpt.provenance.ToText());
  binio::WriteString(os, ckpt.rng_state);
  const auto &params = ckpt.model.params();
  binio::WriteU32(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter &p : params) {
    binio::WriteString(os, p.name);
    binio::WriteU32(os, static_cast<std::uint32_t>(p.group));
    binio::WriteU64(os, p.value.rows());
    binio::WriteU64(os, p.value.cols());
    for (double v : p.value.values()) binio::WriteF64(os, v);
  }
}

Checkpoint ReadCheckpoint(std::istream &is) {
  char magic[sizeof kCheckpointMagic];
  if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kCheckpointMagic))
    throw ParseError("checkpoint: bad magic");
  if (const auto v = binio::ReadU32(is, "checkpoint version"); v != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(v));
  const ModelConfig config =
      ModelConfig::FromKeyValues(KeyValues::Parse(binio::ReadString(is, "model config"), "checkpoint"));
  Checkpoint ckpt;
  ckpt.provenance = KeyValues::Parse(binio::ReadString(is, "provenance"), "checkpoint provenance");
  ckpt.rng_state = binio::ReadString(is, "rng state");
  ckpt.model = ModelBundle(config);
  const std::uint32_t count = binio::ReadU32(is, "parameter count");
  if (count != ckpt.model.params().size())
    throw ParseError("checkpoint: " + std::to_string(count) + " parameters, config implies " +
                     std::to_string(ckpt.model.params().size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = binio::ReadString(is, "parameter name");
    if (name != ckpt.model.params()[i].name)
      throw ParseError("checkpoint: expected parameter " + ckpt.model.params()[i].name + ", found " + name);
    const std::uint32_t group = binio::ReadU32(is, "parameter group");
    const std::uint64_t rows = binio::ReadU64(is, "parameter rows");
    const std::uint64_t cols = binio::ReadU64(is, "parameter cols");
    Tensor &dst = ckpt.model.at(name);
    if (dst.rows() != rows || dst.cols() != cols)
      throw ParseError("checkpoint: parameter " + name + " has shape " + std::to_string(rows) + "x" +
                       std::to_string(cols) + ", expected " + dst.ShapeString());
    if (group != static_cast<std::uint32_t>(ckpt.model.params()[i].group))
      throw ParseError("checkpoint: parameter " + name + " has wrong group");
    for (double &v : dst.values()) v = binio::ReadF64(is, "parameter value");
  }
  return ckpt;
}

void WriteCheckpoint(const std::string &path, const Checkpoint &ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot open checkpoint for writing: " + path);
  WriteCheckpoint(os, ckpt);
  if (!os) throw ContractError("failed writing checkpoint: " + path);
}

Checkpoint ReadCheckpoint(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open checkpoint: " + path);
  return ReadCheckpoint(is);
}

}  // namespace ldse
