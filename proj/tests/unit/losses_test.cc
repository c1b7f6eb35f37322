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

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "ldse/errors.h"
#include "ldse/losses.h"
#include "loss_cases.h"
#include "test_util.h"

using namespace ldse;
using namespace ldse::ad;
using ldse::testing::RandomTensor;

namespace {

constexpr double kMapcGolden = 0.023084149978983337;

double Value(Var v) { return v.value()(0, 0); }

double CeOracle(const Tensor &logits, const std::vector<std::size_t> &labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double m = logits(i, 0);
    for (std::size_t k = 1; k < logits.cols(); ++k) m = std::max(m, logits(i, k));
    double s = 0.0;
    for (std::size_t k = 0; k < logits.cols(); ++k) s += std::exp(logits(i, k) - m);
    total += m + std::log(s) - logits(i, labels[i]);
  }
  return total / static_cast<double>(logits.rows());
}

// Two-pass Pearson per column in long double.
double MapcOracle(const Tensor &a, const Tensor &b) {
  const std::size_t n = a.rows();
  long double acc = 0.0L;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    long double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) ma += a(i, j), mb += b(i, j);
    ma /= n, mb /= n;
    long double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      cov += (a(i, j) - ma) * (b(i, j) - mb);
      va += (a(i, j) - ma) * (a(i, j) - ma);
      vb += (b(i, j) - mb) * (b(i, j) - mb);
    }
    cov /= n, va /= n, vb /= n;
    acc += std::fabs(cov / (std::sqrt(va + 1e-8L) * std::sqrt(vb + 1e-8L)));
  }
  return static_cast<double>(acc / a.cols());
}

double Mapc(const Tensor &a, const Tensor &b) {
  Tape t;
  return Value(ldse::Mapc(t.Constant(a), t.Constant(b)));
}

}  // namespace

TEST_CASE("mode names round trip") {
  for (Mode m : kAllModes) CHECK(ParseMode(ModeName(m)) == m);
  CHECK_THROWS_AS(ParseMode("adversarial"), ParseError);
  CHECK(ModeUsesGrl(Mode::kGrl));
  CHECK(ModeUsesGrl(Mode::kOurs));
  CHECK_FALSE(ModeUsesGrl(Mode::kBaseline));
  CHECK_FALSE(ModeUsesGrl(Mode::kCos));
  CHECK_FALSE(ModeUsesGrl(Mode::kMapc));
}

TEST_CASE("cross entropy examples") {
  Tape t;
  const std::vector<std::size_t> zero{0};
  CHECK(Value(CrossEntropy(t.Constant(Tensor(1, 4)), zero)) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(Value(CrossEntropy(t.Constant(Tensor::FromRows({{100, 0, 0}})), zero)) < 1e-40);

  Rng rng(5);
  const Tensor logits = RandomTensor(5, 3, rng, 2.0);
  const std::vector<std::size_t> labels{0, 2, 1, 1, 0};
  CHECK(std::abs(Value(CrossEntropy(t.Constant(logits), labels)) - CeOracle(logits, labels)) < 1e-12);

  const std::vector<std::size_t> bad{0, 3, 1, 1, 0};
  CHECK_THROWS_AS(CrossEntropy(t.Constant(logits), bad), ContractError);
  CHECK_THROWS_AS(CrossEntropy(t.Constant(logits), zero), ShapeError);
}

TEST_CASE("angular prototypical examples") {
  Tape t;
  const Var one = t.Constant(Tensor(1, 1, 1.0)), zero = t.Constant(Tensor(1, 1));
  const Tensor orth = Tensor::FromRows({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
  // Norms carry eps inside the square root, so the unit cosine is 1/(1+eps).
  CHECK(Value(AngularPrototypical(t.Constant(orth), 2, 2, one, zero)) ==
        doctest::Approx(std::log1p(std::exp(-1.0 / (1.0 + kStdEps)))).epsilon(1e-14));
  CHECK(std::log1p(std::exp(-1.0)) == doctest::Approx(0.3133).epsilon(1e-4));

  const Tensor same(6, 3, 0.7);
  CHECK(Value(AngularPrototypical(t.Constant(same), 3, 2, one, zero)) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-14));

  Rng rng(3);
  const Tensor e = RandomTensor(9, 4, rng);
  Tensor scaled = e;
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 5.0;
  const Var w = t.Constant(Tensor(1, 1, 10.0)), b = t.Constant(Tensor(1, 1, -5.0));
  CHECK(std::abs(Value(AngularPrototypical(t.Constant(e), 3, 3, w, b)) -
                 Value(AngularPrototypical(t.Constant(scaled), 3, 3, w, b))) < 1e-7);

  CHECK_THROWS_AS(AngularPrototypical(t.Constant(e), 9, 1, w, b), ContractError);
  CHECK_THROWS_AS(AngularPrototypical(t.Constant(e), 3, 3, zero, b), ContractError);
  CHECK_THROWS_AS(AngularPrototypical(t.Constant(e), 2, 3, w, b), ShapeError);
}

TEST_CASE("angular prototypical bias gets no gradient") {
  Rng rng(9);
  Tape t;
  const Var b = t.Leaf(Tensor(1, 1, 0.3));
  const Var loss = AngularPrototypical(t.Leaf(RandomTensor(6, 3, rng)), 3, 2, t.Leaf(Tensor(1, 1, 4.0)), b);
  t.Backward(loss);
  CHECK(std::abs(t.grad(b)(0, 0)) < 1e-14);
}

TEST_CASE("cosine min is invariant to positive row rescaling") {
  Rng rng(4);
  const Tensor a = RandomTensor(7, 3, rng), b = RandomTensor(7, 3, rng);
  Tensor scaled = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) scaled(i, j) *= 0.5 + i;
  Tape t;
  const double base = Value(CosineMin(t.Constant(a), t.Constant(b)));
  CHECK(base >= 0.0);
  CHECK(base <= 1.0);
  CHECK(std::abs(base - Value(CosineMin(t.Constant(scaled), t.Constant(b)))) < 1e-7);
}

TEST_CASE("cross entropy is nonnegative and ln K only for constant rows") {
  Rng rng(8);
  Tape t;
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor logits = RandomTensor(4, 5, rng);
    const std::vector<std::size_t> labels{0, 1, 2, 3};
    const double v = Value(CrossEntropy(t.Constant(logits), labels));
    CHECK(v >= 0.0);
  }
  const std::vector<std::size_t> labels{1, 2};
  CHECK(Value(CrossEntropy(t.Constant(Tensor::FromRows({{3, 3, 3}, {-2, -2, -2}})), labels)) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-15));
}

TEST_CASE("cosine min examples") {
  Tape t;
  const Tensor a = Tensor::FromRows({{1, 2}, {3, -1}});
  CHECK(Value(CosineMin(t.Constant(a), t.Constant(a))) == doctest::Approx(1.0).epsilon(1e-8));
  const Tensor perp = Tensor::FromRows({{-2, 1}, {1, 3}});
  CHECK(std::abs(Value(CosineMin(t.Constant(a), t.Constant(perp)))) < 1e-15);
  Tensor neg = a;
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
  CHECK(Value(CosineMin(t.Constant(a), t.Constant(neg))) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK_THROWS_AS(CosineMin(t.Constant(a), t.Constant(Tensor(2, 3))), ShapeError);
}

TEST_CASE("mapc examples") {
  Rng rng(11);
  const Tensor a = RandomTensor(50, 4, rng);
  CHECK(Mapc(a, a) == doctest::Approx(1.0).epsilon(1e-6));

  Tensor affine = a;
  for (std::size_t i = 0; i < affine.size(); ++i) affine[i] = -3.0 * affine[i] + 2.0;
  CHECK(Mapc(a, affine) == doctest::Approx(1.0).epsilon(1e-6));

  Tape t;
  CHECK_THROWS_AS(ldse::Mapc(t.Constant(Tensor(1, 3)), t.Constant(Tensor(1, 3))), ContractError);
  CHECK_THROWS_AS(ldse::Mapc(t.Constant(Tensor(2, 3)), t.Constant(Tensor(2, 2))), ShapeError);
}

TEST_CASE("mapc on independent columns is small and pinned") {
  Rng rng(2024);
  const Tensor a = RandomTensor(1000, 8, rng), b = RandomTensor(1000, 8, rng);
  const double v = Mapc(a, b);
  CHECK(std::abs(v - MapcOracle(a, b)) < 1e-12);
  CHECK(v < 0.1);
  CHECK(v == doctest::Approx(kMapcGolden).epsilon(1e-12));
}

TEST_CASE("mapc properties over random batches") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + seed % 20, d = 1 + seed % 5;
    const Tensor a = RandomTensor(n, d, rng), b = RandomTensor(n, d, rng);
    const double ab = Mapc(a, b);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(ab == Mapc(b, a));
    CHECK(std::abs(ab - MapcOracle(a, b)) < 1e-12);
  }
}

TEST_CASE("total loss composition") {
  Tape t;
  auto s = [&](double v) { return t.Constant(Tensor(1, 1, v)); };
  LossVars v{s(2.0), s(1.0), s(0.3), s(0.4)};
  CHECK(Value(TotalLoss(v, 0.5, Mode::kBaseline)) == 2.0);
  CHECK(Value(TotalLoss(v, 0.5, Mode::kGrl)) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(Value(TotalLoss(v, 0.5, Mode::kCos)) == doctest::Approx(2.4).epsilon(1e-15));
  CHECK(Value(TotalLoss(v, 0.5, Mode::kMapc)) == doctest::Approx(2.3).epsilon(1e-15));
  CHECK(Value(TotalLoss(v, 0.5, Mode::kOurs)) == doctest::Approx(2.8).epsilon(1e-15));
  CHECK(Value(TotalLoss(v, 0.5, Mode::kOurs, 2.0)) == doctest::Approx(3.1).epsilon(1e-15));
  CHECK(Value(TotalLoss(v, 0.0, Mode::kGrl)) == Value(TotalLoss(v, 0.0, Mode::kBaseline)));

  LossVars only_spk{s(2.0), {}, {}, {}};
  CHECK(Value(TotalLoss(only_spk, 0.5, Mode::kBaseline)) == 2.0);
  CHECK_THROWS_AS(TotalLoss(only_spk, 0.5, Mode::kOurs), ContractError);
  CHECK_THROWS_AS(TotalLoss(v, -1.0, Mode::kGrl), ContractError);
}

TEST_CASE("loss gradients match finite differences") {
  for (const auto &c : ldse::testing::GradientCases()) {
    CAPTURE(c.name);
    const auto r = FiniteDifferenceCheck(c.fn, c.params, 1e-5);
    CAPTURE(r.worst_param);
    CHECK(r.max_rel_error < 1e-4);
  }
}
