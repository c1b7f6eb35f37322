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

#ifndef LDSE_LOSSES_H_
#define LDSE_LOSSES_H_

#include <span>
#include <string>

#include "ldse/autodiff.h"

namespace ldse {

// Training objective variants compared by the lab.
enum class Mode {
  kBaseline,  // L_spk
  kGrl,       // L_spk + lambda * L_lang through an active GRL
  kCos,       // L_spk + L_cos
  kMapc,      // L_spk + L_corr
  kOurs,      // L_spk + L_corr + lambda * L_lang through an active GRL
};

const char *ModeName(Mode mode);
Mode ParseMode(const std::string &name);
inline constexpr Mode kAllModes[] = {Mode::kBaseline, Mode::kGrl, Mode::kCos, Mode::kMapc, Mode::kOurs};

// True for modes whose embedding step runs the GRL in reverse.
bool ModeUsesGrl(Mode mode);

// Scalar loss values recorded per step.
struct LossTerms {
  double spk = 0.0;
  double lang = 0.0;
  double corr = 0.0;
  double cos = 0.0;
  double total = 0.0;
  Mode mode = Mode::kBaseline;
};

// Differentiable terms feeding TotalLoss. Terms a mode does not use may
// be left unset.
struct LossVars {
  ad::Var spk;
  ad::Var lang;
  ad::Var corr;
  ad::Var cos;
};

// Mean over rows of -log softmax(logits)[label]. Labels must be < cols.
ad::Var CrossEntropy(ad::Var logits, std::span<const std::size_t> labels);

// Angular prototypical loss over `speakers` groups of `per_speaker`
// consecutive rows. The last row of each group is the query, the mean of
// the others the prototype; logits w * cos(query_j, proto_k) + b are scored
// with cross-entropy against k = j. Requires per_speaker >= 2 and w > 0.
ad::Var AngularPrototypical(ad::Var embeddings, std::size_t speakers, std::size_t per_speaker,
                            ad::Var w, ad::Var b);

// Mean over rows of |cos(e_s_i, e_l_i)|.
ad::Var CosineMin(ad::Var e_s, ad::Var e_l);

// Mean absolute Pearson correlation: for each dimension j, the correlation
// across the batch between column j of e_s and column j of e_l; averaged
// over j. Standard deviations carry eps = 1e-8 inside the square root.
// Requires at least two rows.
ad::Var Mapc(ad::Var e_s, ad::Var e_l);

inline constexpr double kStdEps = 1e-8;

// Composes the per-mode objective. `corr_weight` scales L_corr (1 in
// normal use).
ad::Var TotalLoss(const LossVars &terms, double lambda, Mode mode, double corr_weight = 1.0);

}  // namespace ldse

#endif  // LDSE_LOSSES_H_
