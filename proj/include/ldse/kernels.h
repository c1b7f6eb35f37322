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

#ifndef LDSE_KERNELS_H_
#define LDSE_KERNELS_H_

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "ldse/tensor.h"

namespace ldse::kernels {

// Dense products used by the tape and by inference. Each entry point has
// a serial reference in kernels::serial; the default versions split the
// output rows across OpenMP threads but accumulate every output element
// in the same k-order, so both produce bit-identical results.

// c = a * b
Tensor MatMul(const Tensor &a, const Tensor &b);
// c = a^T * b
Tensor MatMulTransA(const Tensor &a, const Tensor &b);
// c = a * b^T
Tensor MatMulTransB(const Tensor &a, const Tensor &b);

// Mean over all (i, j) of dot(a.row(i), b.row(j)). With unit-norm rows this
// is the mean pairwise cosine similarity between two segment sets.
double MeanPairDot(const Tensor &a, const Tensor &b);

// MeanPairDot for every (enroll, test) index pair into `sets`.
std::vector<double> BatchMeanPairDot(std::span<const Tensor> sets,
                                     std::span<const std::pair<std::size_t, std::size_t>> pairs);

// Row-wise L2 normalization with eps inside the square root.
Tensor NormalizeRows(const Tensor &a, double eps = 1e-8);

// Number of OpenMP threads available (1 when built without OpenMP).
int MaxThreads();

namespace serial {
Tensor MatMul(const Tensor &a, const Tensor &b);
Tensor MatMulTransA(const Tensor &a, const Tensor &b);
Tensor MatMulTransB(const Tensor &a, const Tensor &b);
std::vector<double> BatchMeanPairDot(std::span<const Tensor> sets,
                                     std::span<const std::pair<std::size_t, std::size_t>> pairs);
}  // namespace serial

}  // namespace ldse::kernels

#endif  // LDSE_KERNELS_H_
