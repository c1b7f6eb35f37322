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

#include "ldse/kernels.h"

#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ldse/errors.h"

namespace ldse::kernels {
namespace {

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

void CheckMatMul(const Tensor &a, const Tensor &b, std::size_t a_inner,
                 std::size_t b_inner, const char *name) {
  if (a_inner != b_inner)
    throw ShapeError(std::string(name) + ": cannot multiply " + a.ShapeString() +
                     " by " + b.ShapeString());
}

// c.row(i) = sum_k a(i,k) * b.row(k)
inline void MatMulRow(const Tensor &a, const Tensor &b, Tensor &c, std::size_t i) {
  const std::size_t inner = a.cols(), n = b.cols();
  double *out = c.row(i).data();
  const double *arow = a.row(i).data();
  for (std::size_t k = 0; k < inner; ++k) {
    const double aik = arow[k];
    const double *brow = b.row(k).data();
    for (std::size_t j = 0; j < n; ++j) out[j] += aik * brow[j];
  }
}

// c.row(i) = sum_k a(k,i) * b.row(k)
inline void MatMulTransARow(const Tensor &a, const Tensor &b, Tensor &c, std::size_t i) {
  const std::size_t inner = a.rows(), n = b.cols();
  double *out = c.row(i).data();
  for (std::size_t k = 0; k < inner; ++k) {
    const double aki = a(k, i);
    const double *brow = b.row(k).data();
    for (std::size_t j = 0; j < n; ++j) out[j] += aki * brow[j];
  }
}

// c(i,j) = dot(a.row(i), b.row(j))
inline void MatMulTransBRow(const Tensor &a, const Tensor &b, Tensor &c, std::size_t i) {
  const std::size_t inner = a.cols(), n = b.rows();
  const double *arow = a.row(i).data();
  for (std::size_t j = 0; j < n; ++j) {
    const double *brow = b.row(j).data();
    double s = 0.0;
    for (std::size_t k = 0; k < inner; ++k) s += arow[k] * brow[k];
    c(i, j) = s;
  }
}

template <typename RowFn>
void ForRows(std::size_t rows, std::size_t work, RowFn fn) {
#ifdef _OPENMP
  if (work >= kParallelWork && rows > 1 && omp_get_max_threads() > 1) {
    const std::int64_t n = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) fn(static_cast<std::size_t>(i));
    return;
  }
#endif
  (void)work;
  for (std::size_t i = 0; i < rows; ++i) fn(i);
}

double MeanPairDotImpl(const Tensor &a, const Tensor &b) {
  if (a.cols() != b.cols())
    throw ShapeError("MeanPairDot: " + a.ShapeString() + " vs " + b.ShapeString());
  if (a.rows() == 0 || b.rows() == 0) throw ShapeError("MeanPairDot: empty segment set");
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double *ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double *br = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      total += s;
    }
  }
  return total / static_cast<double>(a.rows() * b.rows());
}

void CheckPairs(std::span<const Tensor> sets,
                std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  for (const auto &[x, y] : pairs)
    if (x >= sets.size() || y >= sets.size())
      throw ContractError("BatchMeanPairDot: pair index out of range");
}

}  // namespace

Tensor MatMul(const Tensor &a, const Tensor &b) {
  CheckMatMul(a, b, a.cols(), b.rows(), "MatMul");
  Tensor c(a.rows(), b.cols());
  ForRows(a.rows(), a.rows() * a.cols() * b.cols(),
          [&](std::size_t i) { MatMulRow(a, b, c, i); });
  return c;
}

Tensor MatMulTransA(const Tensor &a, const Tensor &b) {
  CheckMatMul(a, b, a.rows(), b.rows(), "MatMulTransA");
  Tensor c(a.cols(), b.cols());
  ForRows(a.cols(), a.rows() * a.cols() * b.cols(),
          [&](std::size_t i) { MatMulTransARow(a, b, c, i); });
  return c;
}

Tensor MatMulTransB(const Tensor &a, const Tensor &b) {
  CheckMatMul(a, b, a.cols(), b.cols(), "MatMulTransB");
  Tensor c(a.rows(), b.rows());
  ForRows(a.rows(), a.rows() * a.cols() * b.rows(),
          [&](std::size_t i) { MatMulTransBRow(a, b, c, i); });
  return c;
}

double MeanPairDot(const Tensor &a, const Tensor &b) { return MeanPairDotImpl(a, b); }

std::vector<double> BatchMeanPairDot(std::span<const Tensor> sets,
                                     std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  CheckPairs(sets, pairs);
  std::vector<double> out(pairs.size());
  const std::int64_t n = static_cast<std::int64_t>(pairs.size());
  // Each score is written to its own slot, so results do not depend on
  // the thread count.
#pragma omp parallel for schedule(dynamic, 64)
  for (std::int64_t t = 0; t < n; ++t) {
    const auto &p = pairs[static_cast<std::size_t>(t)];
    out[static_cast<std::size_t>(t)] = MeanPairDotImpl(sets[p.first], sets[p.second]);
  }
  return out;
}

Tensor NormalizeRows(const Tensor &a, double eps) {
  Tensor out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = out.row(i);
    double ss = 0.0;
    for (double v : r) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss + eps);
    for (double &v : r) v *= inv;
  }
  return out;
}

int MaxThreads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

Tensor MatMul(const Tensor &a, const Tensor &b) {
  CheckMatMul(a, b, a.cols(), b.rows(), "serial::MatMul");
  Tensor c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) MatMulRow(a, b, c, i);
  return c;
}

Tensor MatMulTransA(const Tensor &a, const Tensor &b) {
  CheckMatMul(a, b, a.rows(), b.rows(), "serial::MatMulTransA");
  Tensor c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) MatMulTransARow(a, b, c, i);
  return c;
}

Tensor MatMulTransB(const Tensor &a, const Tensor &b) {
  CheckMatMul(a, b, a.cols(), b.cols(), "serial::MatMulTransB");
  Tensor c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) MatMulTransBRow(a, b, c, i);
  return c;
}

std::vector<double> BatchMeanPairDot(std::span<const Tensor> sets,
                                     std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  CheckPairs(sets, pairs);
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto &[x, y] : pairs) out.push_back(MeanPairDotImpl(sets[x], sets[y]));
  return out;
}

}  // namespace serial
}  // namespace ldse::kernels
