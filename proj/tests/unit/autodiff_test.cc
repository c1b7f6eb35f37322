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
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "ldse/autodiff.h"
#include "ldse/errors.h"
#include "test_util.h"

using namespace ldse;
using namespace ldse::ad;
using ldse::testing::RandomTensor;

namespace {

// Scalar loss <op(inputs), R> with a fixed random R, so every output
// entry reaches the gradient with a generic weight.
using Op = std::function<Var(std::span<const Var>)>;

GradCheckResult CheckOp(const Op &op, const std::vector<Tensor> &inputs, std::uint64_t seed) {
  Tensor weights;
  {
    Tape probe;
    std::vector<Var> vars;
    for (const auto &t : inputs) vars.push_back(probe.Leaf(t));
    const Tensor out = op(vars).value();
    Rng rng(seed ^ 0xabc);
    weights = RandomTensor(out.rows(), out.cols(), rng);
  }
  return FiniteDifferenceCheck(
      [&](Tape &tape, std::span<const Var> p) { return Dot(op(p), tape.Constant(weights)); }, inputs, 1e-5);
}

Tensor Positive(std::size_t r, std::size_t c, Rng &rng) {
  Tensor t = RandomTensor(r, c, rng);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::abs(t[i]) + 0.5;
  return t;
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape tape;
  const Tensor a = Tensor::FromRows({{1, 2}, {3, 4}});
  CHECK(MatMul(tape.Constant(a), tape.Constant(Tensor::Identity(2))).value() == a);
  CHECK(MatMul(tape.Constant(Tensor::Identity(2)), tape.Constant(Tensor::FromRows({{5}, {7}}))).value() ==
        Tensor::FromRows({{5}, {7}}));
  // Triple-loop oracle, worked by hand.
  const Tensor x = Tensor::FromRows({{1, 2, 3, 4}, {0.5, -1, 2, 0}, {3, 1, -2, 1.5}});
  const Tensor y = Tensor::FromRows({{1, -1}, {2, 0.5}, {0, 3}, {-1, 2}});
  CHECK(MatMul(tape.Constant(x), tape.Constant(y)).value() == Tensor::FromRows({{1, 17}, {-1.5, 5}, {3.5, -5.5}}));
  CHECK_THROWS_AS(MatMul(tape.Constant(x), tape.Constant(x)), ShapeError);
}

TEST_CASE("elementwise ops reject incompatible shapes") {
  Tape tape;
  CHECK_THROWS_AS(Add(tape.Constant(Tensor(2, 3)), tape.Constant(Tensor(3, 2))), ShapeError);
  CHECK_THROWS_AS(Mul(tape.Constant(Tensor(2, 3)), tape.Constant(Tensor(2, 2))), ShapeError);
  // Broadcast of a row, a column and a scalar.
  CHECK_NOTHROW(Add(tape.Constant(Tensor(2, 3)), tape.Constant(Tensor(1, 3))));
  CHECK_NOTHROW(Add(tape.Constant(Tensor(2, 3)), tape.Constant(Tensor(2, 1))));
  CHECK_NOTHROW(Mul(tape.Constant(Tensor(2, 3)), tape.Constant(Tensor(1, 1))));
}

TEST_CASE("primitive forward values") {
  Tape tape;
  const Tensor sm = RowSoftmax(tape.Constant(Tensor(1, 4, 3.0))).value();
  for (std::size_t i = 0; i < 4; ++i) CHECK(sm[i] == doctest::Approx(0.25).epsilon(1e-15));

  // Constant row: the variance is zero and the result is sqrt(eps).
  const Tensor sd = RowStd(tape.Constant(Tensor::FromRows({{1, 1, 1, 1}})), 1e-8).value();
  CHECK(sd[0] == doctest::Approx(1e-4).epsilon(1e-12));
  // Population convention: std of {1, 3} is 1.
  CHECK(ColStd(tape.Constant(Tensor::FromRows({{1}, {3}})), 1e-30).value()[0] == 1.0);

  Rng rng(8);
  const Tensor x = RandomTensor(2, 3, rng);
  const Tensor t = Tanh(tape.Constant(x)).value();
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(t[i] == std::tanh(x[i]));

  const Tensor r = Relu(tape.Constant(Tensor::FromRows({{-1, 0, 2}}))).value();
  CHECK(r == Tensor::FromRows({{0, 0, 2}}));
  const Tensor m = RowMean(tape.Constant(Tensor::FromRows({{1, 2, 3}, {4, 5, 9}}))).value();
  CHECK(m == Tensor::FromRows({{2}, {6}}));
  const Tensor cm = ColMean(tape.Constant(Tensor::FromRows({{1, 2}, {3, 6}}))).value();
  CHECK(cm == Tensor::FromRows({{2, 4}}));
  CHECK(Dot(tape.Constant(Tensor::FromRows({{1, 2}})), tape.Constant(Tensor::FromRows({{3, 4}}))).value()[0] == 11);
  const Tensor n = L2NormalizeRows(tape.Constant(Tensor::FromRows({{3, 4}})), 1e-30).value();
  CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_THROWS_AS(RowStd(tape.Constant(Tensor(1, 2)), 0.0), ContractError);
}

TEST_CASE("gradient reversal") {
  const Tensor x = Tensor::FromRows({{1, 2, 3}});
  const Tensor up = Tensor::FromRows({{0.5, -1, 2}});
  for (bool active : {true, false}) {
    Tape tape;
    Var v = tape.Leaf(x);
    Var g = GradientReversal(v, active);
    CHECK(g.value() == x);
    tape.Backward(Dot(g, tape.Constant(up)));
    CHECK(tape.grad(v) == (active ? Tensor::FromRows({{-0.5, 1, -2}}) : up));
  }
}

TEST_CASE("reversed cross-entropy gradient is exactly the negated plain one") {
  Rng rng(4);
  const Tensor w = RandomTensor(5, 3, rng), x = RandomTensor(4, 5, rng);
  auto grad = [&](bool active) {
    Tape tape;
    Var wv = tape.Leaf(w);
    Var logits = MatMul(GradientReversal(tape.Constant(x), false), wv);
    Var h = GradientReversal(logits, active);
    const std::vector<std::size_t> labels{0, 2, 1, 2};
    Var lsm = LogSoftmaxRows(h);
    Var loss = Neg(Mean(PickPerRow(lsm, labels)));
    tape.Backward(loss);
    return tape.grad(wv);
  };
  const Tensor on = grad(true), off = grad(false);
  for (std::size_t i = 0; i < on.size(); ++i) CHECK(on[i] == -off[i]);
}

TEST_CASE("backward basics") {
  Rng rng(1);
  const Tensor x = RandomTensor(3, 2, rng);
  {
    Tape tape;
    Var v = tape.Leaf(x);
    tape.Backward(Sum(v));
    CHECK(tape.grad(v) == Tensor(3, 2, 1.0));
  }
  {
    Tape tape;
    Var v = tape.Leaf(x);
    tape.Backward(Dot(v, v));
    const Tensor g = tape.grad(v);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(g[i] == 2 * x[i]);
  }
  {
    Tape tape;
    Var v = tape.Leaf(x);
    CHECK_THROWS_AS(tape.Backward(v), ContractError);
    CHECK_THROWS_AS(tape.Backward(Sum(tape.Constant(x))), ContractError);
    // A leaf that does not reach the loss gets zeros.
    Var unused = tape.Leaf(x);
    tape.Backward(Sum(v));
    CHECK(tape.grad(unused) == Tensor(3, 2));
  }
}

TEST_CASE("finite differences on a quadratic are exact to roundoff") {
  Rng rng(2);
  const Tensor a = RandomTensor(3, 3, rng);
  const auto r = FiniteDifferenceCheck(
      [&](Tape &tape, std::span<const Var> p) { return Dot(MatMul(tape.Constant(a), p[0]), p[0]); },
      {RandomTensor(3, 2, rng)}, 1e-5);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("finite differences refuse a non-finite loss") {
  CHECK_THROWS_AS(FiniteDifferenceCheck([](Tape &, std::span<const Var> p) { return Sum(Log(p[0])); },
                                        {Tensor::FromRows({{-1.0}})}, 1e-5),
                  NumericError);
  CHECK_THROWS_AS(FiniteDifferenceCheck([](Tape &, std::span<const Var> p) { return Sum(p[0]); },
                                        {Tensor(1, 1)}, 0.0),
                  ContractError);
}

TEST_CASE("composite MLP gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const Tensor x = RandomTensor(6, 4, rng);
    const std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2};
    const auto r = FiniteDifferenceCheck(
        [&](Tape &tape, std::span<const Var> p) {
          Var h = Tanh(Add(MatMul(tape.Constant(x), p[0]), p[1]));
          Var logits = Add(MatMul(h, p[2]), p[3]);
          return Neg(Mean(PickPerRow(LogSoftmaxRows(logits), labels)));
        },
        {RandomTensor(4, 5, rng), RandomTensor(1, 5, rng), RandomTensor(5, 3, rng), RandomTensor(1, 3, rng)}, 1e-5);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("every primitive passes finite differences over 20 seeds") {
  struct Case {
    std::string name;
    Op op;
    int arity;
    bool positive;
  };
  const std::vector<std::size_t> rows{2, 0, 3};
  const std::vector<std::size_t> cols{1, 0, 2, 2};
  const std::vector<Case> cases = {
      {"matmul_t", [](auto p) { return MatMul(p[0], Transpose(p[1])); }, 2, false},
      {"add", [](auto p) { return Add(p[0], p[1]); }, 2, false},
      {"add_row", [](auto p) { return Add(p[0], ColMean(p[1])); }, 2, false},
      {"add_col", [](auto p) { return Add(p[0], RowMean(p[1])); }, 2, false},
      {"sub", [](auto p) { return Sub(p[0], p[1]); }, 2, false},
      {"mul", [](auto p) { return Mul(p[0], p[1]); }, 2, false},
      {"mul_scalar", [](auto p) { return Mul(p[0], Mean(p[1])); }, 2, false},
      {"div", [](auto p) { return Div(p[0], p[1]); }, 2, true},
      {"div_col", [](auto p) { return Div(p[0], RowSum(p[1])); }, 2, true},
      {"scale", [](auto p) { return AddScalar(Scale(p[0], -2.5), 1.0); }, 1, false},
      {"neg", [](auto p) { return Neg(p[0]); }, 1, false},
      {"tanh", [](auto p) { return Tanh(p[0]); }, 1, false},
      {"relu", [](auto p) { return Relu(p[0]); }, 1, false},
      {"abs", [](auto p) { return Abs(p[0]); }, 1, false},
      {"exp", [](auto p) { return Exp(p[0]); }, 1, false},
      {"log", [](auto p) { return Log(p[0]); }, 1, true},
      {"sqrt", [](auto p) { return Sqrt(p[0]); }, 1, true},
      {"square", [](auto p) { return Square(p[0]); }, 1, false},
      {"sum", [](auto p) { return Sum(p[0]); }, 1, false},
      {"mean", [](auto p) { return Mean(p[0]); }, 1, false},
      {"row_sum", [](auto p) { return RowSum(p[0]); }, 1, false},
      {"col_sum", [](auto p) { return ColSum(p[0]); }, 1, false},
      {"row_std", [](auto p) { return RowStd(p[0], 1e-8); }, 1, false},
      {"col_std", [](auto p) { return ColStd(p[0], 1e-8); }, 1, false},
      {"softmax", [](auto p) { return RowSoftmax(p[0]); }, 1, false},
      {"log_softmax", [](auto p) { return LogSoftmaxRows(p[0]); }, 1, false},
      {"dot", [](auto p) { return Dot(p[0], p[1]); }, 2, false},
      {"l2_normalize", [](auto p) { return L2NormalizeRows(p[0], 1e-8); }, 1, false},
      {"grl_inactive", [](auto p) { return GradientReversal(Tanh(p[0]), false); }, 1, false},
      {"reshape", [](auto p) { return Reshape(p[0], 2, 6); }, 1, false},
      {"block_row_sum", [](auto p) { return BlockRowSum(p[0], 2); }, 1, false},
      {"gather", [rows](auto p) { return GatherRows(p[0], rows); }, 1, false},
      {"concat", [](auto p) { return ConcatRows(std::vector<Var>{p[0], p[1]}); }, 2, false},
      {"pick", [cols](auto p) { return PickPerRow(p[0], cols); }, 1, false},
  };
  for (const auto &c : cases) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed * 131 + c.name.size());
      std::vector<Tensor> in;
      for (int i = 0; i < c.arity; ++i) in.push_back(c.positive ? Positive(4, 3, rng) : RandomTensor(4, 3, rng));
      const auto r = CheckOp(c.op, in, seed);
      INFO(c.name << " seed " << seed << " param " << r.worst_param << "[" << r.worst_index << "] analytic "
                  << r.analytic << " numeric " << r.numeric);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("forward replay is bit-identical") {
  auto run = [] {
    Rng rng(12);
    Tape tape;
    Var x = tape.Leaf(RandomTensor(5, 4, rng));
    Var w = tape.Leaf(RandomTensor(4, 3, rng));
    Var y = L2NormalizeRows(Tanh(MatMul(x, w)), 1e-8);
    Var loss = Mean(Square(y));
    tape.Backward(loss);
    return std::make_pair(y.value(), tape.grad(w));
  };
  CHECK(run() == run());
}

TEST_CASE("values stay finite for finite inputs") {
  Rng rng(6);
  Tape tape;
  Var x = tape.Constant(RandomTensor(3, 4, rng, 50.0));
  CHECK(RowSoftmax(x).value().AllFinite());
  CHECK(LogSoftmaxRows(x).value().AllFinite());
  CHECK(L2NormalizeRows(tape.Constant(Tensor(2, 3)), 1e-8).value().AllFinite());
  CHECK(ColStd(tape.Constant(Tensor(3, 2)), 1e-8).value().AllFinite());
}
