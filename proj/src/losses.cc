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

#include "ldse/losses.h"

#include <vector>

#include "ldse/errors.h"

namespace ldse {

const char *ModeName(Mode mode) {
  switch (mode) {
    case Mode::kBaseline: return "baseline";
    case Mode::kGrl: return "grl";
    case Mode::kCos: return "cos";
    case Mode::kMapc: return "mapc";
    case Mode::kOurs: return "ours";
  }
  throw ContractError("unknown training mode " + std::to_string(static_cast<int>(mode)));
}

Mode ParseMode(const std::string &name) {
  for (Mode m : kAllModes)
    if (name == ModeName(m)) return m;
  throw ParseError("unknown training mode `" + name + "` (baseline|grl|cos|mapc|ours)");
}

bool ModeUsesGrl(Mode mode) { return mode == Mode::kGrl || mode == Mode::kOurs; }

ad::Var CrossEntropy(ad::Var logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows())
    throw ShapeError("CrossEntropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " rows");
  if (labels.empty()) throw ContractError("CrossEntropy: empty batch");
  for (std::size_t y : labels)
    if (y >= logits.cols())
      throw ContractError("CrossEntropy: label " + std::to_string(y) + " out of range for " +
                          std::to_string(logits.cols()) + " classes");
  return ad::Neg(ad::Mean(ad::PickPerRow(ad::LogSoftmaxRows(logits), labels)));
}

ad::Var AngularPrototypical(ad::Var embeddings, std::size_t speakers, std::size_t per_speaker,
                            ad::Var w, ad::Var b) {
  if (per_speaker < 2) throw ContractError("AngularPrototypical: need at least 2 utterances per speaker");
  if (speakers < 1) throw ContractError("AngularPrototypical: need at least 1 speaker");
  if (embeddings.rows() != speakers * per_speaker)
    throw ShapeError("AngularPrototypical: " + std::to_string(embeddings.rows()) + " rows for " +
                     std::to_string(speakers) + "x" + std::to_string(per_speaker));
  if (!(w.value()(0, 0) > 0.0)) throw ContractError("AngularPrototypical: scale w must be > 0");

  std::vector<std::size_t> query_rows, support_rows;
  for (std::size_t k = 0; k < speakers; ++k) {
    for (std::size_t m = 0; m + 1 < per_speaker; ++m) support_rows.push_back(k * per_speaker + m);
    query_rows.push_back(k * per_speaker + per_speaker - 1);
  }
  ad::Var queries = ad::GatherRows(embeddings, query_rows);
  ad::Var support = ad::GatherRows(embeddings, support_rows);
  ad::Var protos = ad::Scale(ad::BlockRowSum(support, per_speaker - 1),
                             1.0 / static_cast<double>(per_speaker - 1));
  ad::Var cos = ad::MatMul(ad::L2NormalizeRows(queries, kStdEps),
                           ad::Transpose(ad::L2NormalizeRows(protos, kStdEps)));
  ad::Var logits = ad::Add(ad::Mul(cos, w), b);
  std::vector<std::size_t> targets(speakers);
  for (std::size_t k = 0; k < speakers; ++k) targets[k] = k;
  return CrossEntropy(logits, targets);
}

ad::Var CosineMin(ad::Var e_s, ad::Var e_l) {
  if (!e_s.value().SameShape(e_l.value()))
    throw ShapeError("CosineMin: " + e_s.value().ShapeString() + " vs " + e_l.value().ShapeString());
  ad::Var cos = ad::RowSum(ad::Mul(ad::L2NormalizeRows(e_s, kStdEps), ad::L2NormalizeRows(e_l, kStdEps)));
  return ad::Mean(ad::Abs(cos));
}

ad::Var Mapc(ad::Var e_s, ad::Var e_l) {
  if (!e_s.value().SameShape(e_l.value()))
    throw ShapeError("Mapc: " + e_s.value().ShapeString() + " vs " + e_l.value().ShapeString());
  if (e_s.rows() < 2) throw ContractError("Mapc: need at least 2 rows to estimate correlation");
  ad::Var xc = ad::Sub(e_s, ad::ColMean(e_s));
  ad::Var yc = ad::Sub(e_l, ad::ColMean(e_l));
  ad::Var cov = ad::ColMean(ad::Mul(xc, yc));
  ad::Var denom = ad::Mul(ad::ColStd(e_s, kStdEps), ad::ColStd(e_l, kStdEps));
  return ad::Mean(ad::Abs(ad::Div(cov, denom)));
}

ad::Var TotalLoss(const LossVars &t, double lambda, Mode mode, double corr_weight) {
  if (!(lambda >= 0.0)) throw ContractError("TotalLoss: lambda must be >= 0");
  auto need = [mode](const ad::Var &v, const char *name) {
    if (!v.valid())
      throw ContractError(std::string("TotalLoss: mode ") + ModeName(mode) + " needs term " + name);
    return v;
  };
  ad::Var spk = need(t.spk, "spk");
  switch (mode) {
    case Mode::kBaseline:
      return spk;
    case Mode::kGrl:
      return ad::Add(spk, ad::Scale(need(t.lang, "lang"), lambda));
    case Mode::kCos:
      return ad::Add(spk, need(t.cos, "cos"));
    case Mode::kMapc:
      return ad::Add(spk, ad::Scale(need(t.corr, "corr"), corr_weight));
    case Mode::kOurs:
      return ad::Add(ad::Add(spk, ad::Scale(need(t.corr, "corr"), corr_weight)),
                     ad::Scale(need(t.lang, "lang"), lambda));
  }
  throw ContractError("TotalLoss: unknown mode " + std::to_string(static_cast<int>(mode)));
}

}  // namespace ldse
