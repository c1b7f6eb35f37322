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

#include <utility>
#include <vector>

#include "doctest.h"
#include "ldse/errors.h"
#include "ldse/kernels.h"
#include "test_util.h"

using namespace ldse;
using ldse::testing::NaiveMatMul;
using ldse::testing::RandomTensor;

namespace {

Tensor Transposed(const Tensor &a) {
  Tensor t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace

TEST_CASE("matmul variants match a triple loop") {
  Rng rng(1);
  const Tensor a = RandomTensor(7, 5, rng), b = RandomTensor(5, 3, rng);
  const Tensor ref = NaiveMatMul(a, b);
  CHECK(ldse::testing::MaxAbsDiff(kernels::MatMul(a, b), ref) < 1e-12);
  CHECK(ldse::testing::MaxAbsDiff(kernels::MatMulTransA(Transposed(a), b), ref) < 1e-12);
  CHECK(ldse::testing::MaxAbsDiff(kernels::MatMulTransB(a, Transposed(b)), ref) < 1e-12);
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  Rng rng(2);
  // Large enough to cross the threading threshold.
  const Tensor a = RandomTensor(300, 64, rng), b = RandomTensor(64, 48, rng);
  CHECK(kernels::MatMul(a, b) == kernels::serial::MatMul(a, b));
  const Tensor at = Transposed(a);
  CHECK(kernels::MatMulTransA(at, b) == kernels::serial::MatMulTransA(at, b));
  const Tensor bt = Transposed(b);
  CHECK(kernels::MatMulTransB(a, bt) == kernels::serial::MatMulTransB(a, bt));

  std::vector<Tensor> sets;
  for (int i = 0; i < 40; ++i) sets.push_back(kernels::NormalizeRows(RandomTensor(10, 16, rng)));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 40; j += 3) pairs.emplace_back(i, j);
  const auto par = kernels::BatchMeanPairDot(sets, pairs);
  const auto ser = kernels::serial::BatchMeanPairDot(sets, pairs);
  REQUIRE(par.size() == ser.size());
  for (std::size_t i = 0; i < par.size(); ++i) CHECK(par[i] == ser[i]);
}

TEST_CASE("mean pair dot is the average over all row pairs") {
  Rng rng(3);
  const Tensor a = RandomTensor(4, 6, rng), b = RandomTensor(3, 6, rng);
  double s = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 6; ++k) s += a(i, k) * b(j, k);
  CHECK(kernels::MeanPairDot(a, b) == doctest::Approx(s / 12).epsilon(1e-12));
}

TEST_CASE("normalized rows have unit norm") {
  Rng rng(4);
  const Tensor x = RandomTensor(9, 5, rng);
  const Tensor n = kernels::NormalizeRows(x);
  for (std::size_t i = 0; i < 9; ++i) {
    double s = 0, sx = 0;
    for (double v : n.row(i)) s += v * v;
    for (double v : x.row(i)) sx += v * v;
    // eps sits inside the square root: |n|^2 = |x|^2 / (|x|^2 + eps).
    CHECK(s == doctest::Approx(sx / (sx + 1e-8)).epsilon(1e-14));
  }
  const Tensor z = kernels::NormalizeRows(Tensor(1, 3));
  CHECK(z.AllFinite());
}

TEST_CASE("shape mismatch is rejected") {
  CHECK_THROWS_AS(kernels::MatMul(Tensor(2, 3), Tensor(2, 3)), ShapeError);
}
