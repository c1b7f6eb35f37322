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

#include "ldse/autodiff.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "ldse/errors.h"
#include "ldse/kernels.h"

namespace ldse::ad {

const Tensor &Var::value() const {
  if (!tape_) throw ContractError("Var: uninitialized handle");
  return tape_->value(id_);
}

bool Var::tracked() const { return tape_ && tape_->tracked(id_); }

const Tensor &BackwardContext::out() const { return tape.value(self); }
const Tensor &BackwardContext::in(std::size_t i) const { return tape.value(inputs[i]); }
bool BackwardContext::needs(std::size_t i) const { return tape.tracked(inputs[i]); }

Var Tape::Leaf(Tensor value, std::string name) {
  nodes_.push_back(Node{name.empty() ? "leaf" : "leaf:" + name, std::move(value), {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::Constant(Tensor value) {
  nodes_.push_back(Node{"const", std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::Record(std::string op, Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
  bool tracked = false;
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) throw ContractError("Tape::Record: input node does not exist");
    tracked = tracked || nodes_[in].tracked;
  }
  if (!tracked) backward = nullptr;
  nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs), std::move(backward), tracked});
  return Var(this, nodes_.size() - 1);
}

void Tape::Backward(Var loss) {
  if (loss.tape() != this) throw ContractError("Tape::Backward: loss belongs to another tape");
  const Tensor &lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1)
    throw ContractError("Tape::Backward: loss must be 1x1, got " + lv.ShapeString());
  if (!tracked(loss.id())) throw ContractError("Tape::Backward: loss is not tracked");

  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.id()] = Tensor(1, 1, 1.0);
  std::vector<Tensor> in_grads;
  for (NodeId id = loss.id() + 1; id-- > 0;) {
    Node &node = nodes_[id];
    if (!node.tracked || !node.backward || grads_[id].empty()) continue;
    in_grads.assign(node.inputs.size(), Tensor());
    BackwardContext ctx{*this, id, node.inputs, grads_[id]};
    node.backward(ctx, in_grads);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const NodeId in = node.inputs[i];
      if (!nodes_[in].tracked || in_grads[i].empty()) continue;
      Tensor &acc = grads_[in];
      if (acc.empty()) {
        acc = std::move(in_grads[i]);
      } else {
        auto dst = acc.values();
        auto src = in_grads[i].values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }
}

Tensor Tape::grad(Var v) const {
  if (v.tape() != this) throw ContractError("Tape::grad: variable belongs to another tape");
  const Tensor &val = value(v.id());
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
  return Tensor(val.rows(), val.cols());
}

namespace {

Tape &SameTape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw ContractError("autodiff: uninitialized variable");
  if (a.tape() != b.tape()) throw ContractError("autodiff: variables from different tapes");
  return *a.tape();
}

Tape &TapeOf(Var a) {
  if (!a.valid()) throw ContractError("autodiff: uninitialized variable");
  return *a.tape();
}

std::size_t BroadcastDim(std::size_t x, std::size_t y, const char *op, const Tensor &a,
                         const Tensor &b) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.ShapeString() + " and " +
                   b.ShapeString());
}

// Sums g over the dimensions that were broadcast to reach g's shape.
Tensor ReduceTo(const Tensor &g, std::size_t rows, std::size_t cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Tensor out(rows, cols);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      out(rows == 1 ? 0 : i, cols == 1 ? 0 : j) += g(i, j);
  return out;
}

template <typename F>
Tensor BroadcastApply(const Tensor &a, const Tensor &b, const char *op, F f) {
  const std::size_t r = BroadcastDim(a.rows(), b.rows(), op, a, b);
  const std::size_t c = BroadcastDim(a.cols(), b.cols(), op, a, b);
  Tensor out(r, c);
  const bool ar = a.rows() == 1, ac = a.cols() == 1, br = b.rows() == 1, bc = b.cols() == 1;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out(i, j) = f(a(ar ? 0 : i, ac ? 0 : j), b(br ? 0 : i, bc ? 0 : j));
  return out;
}

template <typename F>
Tensor Map(const Tensor &a, F f) {
  Tensor out(a.rows(), a.cols());
  auto src = a.values();
  auto dst = out.values();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k] = f(src[k]);
  return out;
}

// Unary elementwise op whose derivative is a function of (input, output).
template <typename F, typename D>
Var Unary(Var a, const char *name, F f, D dfdx) {
  Tape &t = TapeOf(a);
  return t.Record(name, Map(a.value(), f), {a.id()},
                  [dfdx](const BackwardContext &ctx, std::span<Tensor> g) {
                    const Tensor &x = ctx.in(0), &y = ctx.out(), &go = ctx.grad_out;
                    Tensor d(x.rows(), x.cols());
                    for (std::size_t k = 0; k < d.size(); ++k) d[k] = go[k] * dfdx(x[k], y[k]);
                    g[0] = std::move(d);
                  });
}

}  // namespace

Var MatMul(Var a, Var b) {
  Tape &t = SameTape(a, b);
  return t.Record("matmul", kernels::MatMul(a.value(), b.value()), {a.id(), b.id()},
                  [](const BackwardContext &ctx, std::span<Tensor> g) {
                    if (ctx.needs(0)) g[0] = kernels::MatMulTransB(ctx.grad_out, ctx.in(1));
                    if (ctx.needs(1)) g[1] = kernels::MatMulTransA(ctx.in(0), ctx.grad_out);
                  });
}

Var Transpose(Var a) {
  auto transpose = [](const Tensor &x) {
    Tensor y(x.cols(), x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) y(j, i) = x(i, j);
    return y;
  };
  return TapeOf(a).Record("transpose", transpose(a.value()), {a.id()},
                          [transpose](const BackwardContext &ctx, std::span<Tensor> g) {
                            g[0] = transpose(ctx.grad_out);
                          });
}

Var Add(Var a, Var b) {
  Tape &t = SameTape(a, b);
  return t.Record("add", BroadcastApply(a.value(), b.value(), "Add", std::plus<>{}),
                  {a.id(), b.id()}, [](const BackwardContext &ctx, std::span<Tensor> g) {
                    for (std::size_t i = 0; i < 2; ++i)
                      if (ctx.needs(i)) g[i] = ReduceTo(ctx.grad_out, ctx.in(i).rows(), ctx.in(i).cols());
                  });
}

Var Sub(Var a, Var b) {
  Tape &t = SameTape(a, b);
  return t.Record("sub", BroadcastApply(a.value(), b.value(), "Sub", std::minus<>{}),
                  {a.id(), b.id()}, [](const BackwardContext &ctx, std::span<Tensor> g) {
                    if (ctx.needs(0)) g[0] = ReduceTo(ctx.grad_out, ctx.in(0).rows(), ctx.in(0).cols());
                    if (ctx.needs(1)) {
                      Tensor neg = Map(ctx.grad_out, [](double v) { return -v; });
                      g[1] = ReduceTo(neg, ctx.in(1).rows(), ctx.in(1).cols());
                    }
                  });
}

Var Mul(Var a, Var b) {
  Tape &t = SameTape(a, b);
  return t.Record("mul", BroadcastApply(a.value(), b.value(), "Mul", std::multiplies<>{}),
                  {a.id(), b.id()}, [](const BackwardContext &ctx, std::span<Tensor> g) {
                    const Tensor &x = ctx.in(0), &y = ctx.in(1);
                    if (ctx.needs(0))
                      g[0] = ReduceTo(BroadcastApply(ctx.grad_out, y, "Mul", std::multiplies<>{}),
                                      x.rows(), x.cols());
                    if (ctx.needs(1))
                      g[1] = ReduceTo(BroadcastApply(ctx.grad_out, x, "Mul", std::multiplies<>{}),
                                      y.rows(), y.cols());
                  });
}

Var Div(Var a, Var b) {
  Tape &t = SameTape(a, b);
  return t.Record("div", BroadcastApply(a.value(), b.value(), "Div", std::divides<>{}),
                  {a.id(), b.id()}, [](const BackwardContext &ctx, std::span<Tensor> g) {
                    const Tensor &x = ctx.in(0), &y = ctx.in(1), &out = ctx.out();
                    if (ctx.needs(0))
                      g[0] = ReduceTo(BroadcastApply(ctx.grad_out, y, "Div", std::divides<>{}),
                                      x.rows(), x.cols());
                    if (ctx.needs(1)) {
                      // d(x/y)/dy = -(x/y)/y
                      Tensor q = BroadcastApply(out, y, "Div", std::divides<>{});
                      Tensor d(q.rows(), q.cols());
                      for (std::size_t k = 0; k < d.size(); ++k) d[k] = -ctx.grad_out[k] * q[k];
                      g[1] = ReduceTo(d, y.rows(), y.cols());
                    }
                  });
}

Var Scale(Var a, double s) {
  return TapeOf(a).Record("scale", Map(a.value(), [s](double v) { return s * v; }), {a.id()},
                          [s](const BackwardContext &ctx, std::span<Tensor> g) {
                            g[0] = Map(ctx.grad_out, [s](double v) { return s * v; });
                          });
}

Var AddScalar(Var a, double s) {
  return TapeOf(a).Record("add_scalar", Map(a.value(), [s](double v) { return v + s; }), {a.id()},
                          [](const BackwardContext &ctx, std::span<Tensor> g) { g[0] = ctx.grad_out; });
}

Var Neg(Var a) { return Scale(a, -1.0); }

Var Tanh(Var a) {
  return Unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var Relu(Var a) {
  return Unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var Abs(Var a) {
  return Unary(a, "abs", [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var Exp(Var a) {
  return Unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var Log(Var a) {
  return Unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var Sqrt(Var a) {
  return Unary(a, "sqrt", [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var Square(Var a) {
  return Unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var Sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return TapeOf(a).Record("sum", Tensor(1, 1, s), {a.id()},
                          [](const BackwardContext &ctx, std::span<Tensor> g) {
                            g[0] = Tensor(ctx.in(0).rows(), ctx.in(0).cols(), ctx.grad_out[0]);
                          });
}

Var Mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("Mean: empty tensor");
  return Scale(Sum(a), 1.0 / n);
}

Var RowSum(Var a) {
  const Tensor &x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (double v : x.row(i)) out(i, 0) += v;
  return TapeOf(a).Record("row_sum", std::move(out), {a.id()},
                          [](const BackwardContext &ctx, std::span<Tensor> g) {
                            const Tensor &x = ctx.in(0);
                            Tensor d(x.rows(), x.cols());
                            for (std::size_t i = 0; i < x.rows(); ++i)
                              for (double &v : d.row(i)) v = ctx.grad_out(i, 0);
                            g[0] = std::move(d);
                          });
}

Var RowMean(Var a) {
  if (a.cols() == 0) throw ShapeError("RowMean: no columns");
  return Scale(RowSum(a), 1.0 / static_cast<double>(a.cols()));
}

Var ColSum(Var a) {
  const Tensor &x = a.value();
  Tensor out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
  return TapeOf(a).Record("col_sum", std::move(out), {a.id()},
                          [](const BackwardContext &ctx, std::span<Tensor> g) {
                            const Tensor &x = ctx.in(0);
                            Tensor d(x.rows(), x.cols());
                            for (std::size_t i = 0; i < x.rows(); ++i)
                              for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) = ctx.grad_out(0, j);
                            g[0] = std::move(d);
                          });
}

Var ColMean(Var a) {
  if (a.rows() == 0) throw ShapeError("ColMean: no rows");
  return Scale(ColSum(a), 1.0 / static_cast<double>(a.rows()));
}

Var RowStd(Var a, double eps) {
  if (!(eps > 0.0)) throw ContractError("RowStd: eps must be > 0");
  const Tensor &x = a.value();
  if (x.cols() == 0) throw ShapeError("RowStd: no columns");
  const double n = static_cast<double>(x.cols());
  Tensor mean(x.rows(), 1), out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double m = 0.0;
    for (double v : x.row(i)) m += v;
    m /= n;
    double var = 0.0;
    for (double v : x.row(i)) var += (v - m) * (v - m);
    mean(i, 0) = m;
    out(i, 0) = std::sqrt(var / n + eps);
  }
  return TapeOf(a).Record("row_std", std::move(out), {a.id()},
                          [mean, n](const BackwardContext &ctx, std::span<Tensor> g) {
                            const Tensor &x = ctx.in(0), &s = ctx.out();
                            Tensor d(x.rows(), x.cols());
                            for (std::size_t i = 0; i < x.rows(); ++i)
                              for (std::size_t j = 0; j < x.cols(); ++j)
                                d(i, j) = ctx.grad_out(i, 0) * (x(i, j) - mean(i, 0)) / (n * s(i, 0));
                            g[0] = std::move(d);
                          });
}

Var ColStd(Var a, double eps) {
  if (!(eps > 0.0)) throw ContractError("ColStd: eps must be > 0");
  const Tensor &x = a.value();
  if (x.rows() == 0) throw ShapeError("ColStd: no rows");
  const double n = static_cast<double>(x.rows());
  Tensor mean(1, x.cols()), out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) mean(0, j) += x(i, j);
  for (std::size_t j = 0; j < x.cols(); ++j) mean(0, j) /= n;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double c = x(i, j) - mean(0, j);
      out(0, j) += c * c;
    }
  for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) = std::sqrt(out(0, j) / n + eps);
  return TapeOf(a).Record("col_std", std::move(out), {a.id()},
                          [mean, n](const BackwardContext &ctx, std::span<Tensor> g) {
                            const Tensor &x = ctx.in(0), &s = ctx.out();
                            Tensor d(x.rows(), x.cols());
                            for (std::size_t i = 0; i < x.rows(); ++i)
                              for (std::size_t j = 0; j < x.cols(); ++j)
                                d(i, j) = ctx.grad_out(0, j) * (x(i, j) - mean(0, j)) / (n * s(0, j));
                            g[0] = std::move(d);
                          });
}

Var RowSoftmax(Var a) {
  const Tensor &x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    auto yr = y.row(i);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double z = 0.0;
    for (std::size_t j = 0; j < xr.size(); ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (double &v : yr) v /= z;
  }
  return TapeOf(a).Record("row_softmax", std::move(y), {a.id()},
                          [](const BackwardContext &ctx, std::span<Tensor> g) {
                            const Tensor &y = ctx.out(), &go = ctx.grad_out;
                            Tensor d(y.rows(), y.cols());
                            for (std::size_t i = 0; i < y.rows(); ++i) {
                              double s = 0.0;
                              for (std::size_t j = 0; j < y.cols(); ++j) s += go(i, j) * y(i, j);
                              for (std::size_t j = 0; j < y.cols(); ++j) d(i, j) = y(i, j) * (go(i, j) - s);
                            }
                            g[0] = std::move(d);
                          });
}

Var LogSoftmaxRows(Var a) {
  const Tensor &x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double z = 0.0;
    for (double v : xr) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < xr.size(); ++j) y(i, j) = xr[j] - lse;
  }
  return TapeOf(a).Record("log_softmax", std::move(y), {a.id()},
                          [](const BackwardContext &ctx, std::span<Tensor> g) {
                            const Tensor &y = ctx.out(), &go = ctx.grad_out;
                            Tensor d(y.rows(), y.cols());
                            for (std::size_t i = 0; i < y.rows(); ++i) {
                              double s = 0.0;
                              for (std::size_t j = 0; j < y.cols(); ++j) s += go(i, j);
                              for (std::size_t j = 0; j < y.cols(); ++j)
                                d(i, j) = go(i, j) - std::exp(y(i, j)) * s;
                            }
                            g[0] = std::move(d);
                          });
}

Var Dot(Var a, Var b) {
  Tape &t = SameTape(a, b);
  if (!a.value().SameShape(b.value()))
    throw ShapeError("Dot: " + a.value().ShapeString() + " vs " + b.value().ShapeString());
  double s = 0.0;
  for (std::size_t k = 0; k < a.value().size(); ++k) s += a.value()[k] * b.value()[k];
  return t.Record("dot", Tensor(1, 1, s), {a.id(), b.id()},
                  [](const BackwardContext &ctx, std::span<Tensor> g) {
                    const double go = ctx.grad_out[0];
                    if (ctx.needs(0)) g[0] = Map(ctx.in(1), [go](double v) { return go * v; });
                    if (ctx.needs(1)) g[1] = Map(ctx.in(0), [go](double v) { return go * v; });
                  });
}

Var L2NormalizeRows(Var a, double eps) {
  if (!(eps > 0.0)) throw ContractError("L2NormalizeRows: eps must be > 0");
  Tensor y = kernels::NormalizeRows(a.value(), eps);
  return TapeOf(a).Record("l2_normalize", std::move(y), {a.id()},
                          [eps](const BackwardContext &ctx, std::span<Tensor> g) {
                            const Tensor &x = ctx.in(0), &go = ctx.grad_out;
                            Tensor d(x.rows(), x.cols());
                            for (std::size_t i = 0; i < x.rows(); ++i) {
                              double ss = 0.0, gx = 0.0;
                              for (std::size_t j = 0; j < x.cols(); ++j) {
                                ss += x(i, j) * x(i, j);
                                gx += go(i, j) * x(i, j);
                              }
                              const double n = std::sqrt(ss + eps);
                              const double n3 = n * n * n;
                              for (std::size_t j = 0; j < x.cols(); ++j)
                                d(i, j) = go(i, j) / n - x(i, j) * gx / n3;
                            }
                            g[0] = std::move(d);
                          });
}

Var GradientReversal(Var x, bool active) {
  return TapeOf(x).Record(active ? "grl" : "grl_off", x.value(), {x.id()},
                          [active](const BackwardContext &ctx, std::span<Tensor> g) {
                            g[0] = active ? Map(ctx.grad_out, [](double v) { return -v; })
                                          : ctx.grad_out;
                          });
}

Var Reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor &x = a.value();
  if (rows * cols != x.size())
    throw ShapeError("Reshape: " + x.ShapeString() + " to " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  std::vector<double> data(x.values().begin(), x.values().end());
  return TapeOf(a).Record("reshape", Tensor(rows, cols, std::move(data)), {a.id()},
                          [](const BackwardContext &ctx, std::span<Tensor> g) {
                            const Tensor &x = ctx.in(0);
                            std::vector<double> d(ctx.grad_out.values().begin(),
                                                  ctx.grad_out.values().end());
                            g[0] = Tensor(x.rows(), x.cols(), std::move(d));
                          });
}

Var BlockRowSum(Var a, std::size_t block) {
  const Tensor &x = a.value();
  if (block == 0 || x.rows() % block != 0)
    throw ShapeError("BlockRowSum: " + std::to_string(x.rows()) + " rows not divisible by " +
                     std::to_string(block));
  Tensor out(x.rows() / block, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i / block, j) += x(i, j);
  return TapeOf(a).Record("block_row_sum", std::move(out), {a.id()},
                          [block](const BackwardContext &ctx, std::span<Tensor> g) {
                            const Tensor &x = ctx.in(0);
                            Tensor d(x.rows(), x.cols());
                            for (std::size_t i = 0; i < x.rows(); ++i)
                              for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) = ctx.grad_out(i / block, j);
                            g[0] = std::move(d);
                          });
}

Var GatherRows(Var a, std::span<const std::size_t> rows) {
  const Tensor &x = a.value();
  Tensor out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows())
      throw ShapeError("GatherRows: row " + std::to_string(rows[i]) + " out of " + x.ShapeString());
    std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return TapeOf(a).Record("gather_rows", std::move(out), {a.id()},
                          [idx](const BackwardContext &ctx, std::span<Tensor> g) {
                            const Tensor &x = ctx.in(0);
                            Tensor d(x.rows(), x.cols());
                            for (std::size_t i = 0; i < idx.size(); ++i)
                              for (std::size_t j = 0; j < x.cols(); ++j) d(idx[i], j) += ctx.grad_out(i, j);
                            g[0] = std::move(d);
                          });
}

Var ConcatRows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("ConcatRows: no inputs");
  Tape &t = TapeOf(parts[0]);
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<NodeId> ids;
  std::vector<double> data;
  for (const Var &p : parts) {
    SameTape(parts[0], p);
    if (p.cols() != cols) throw ShapeError("ConcatRows: column mismatch");
    rows += p.rows();
    ids.push_back(p.id());
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  }
  return t.Record("concat_rows", Tensor(rows, cols, std::move(data)), std::move(ids),
                  [](const BackwardContext &ctx, std::span<Tensor> g) {
                    std::size_t offset = 0;
                    for (std::size_t i = 0; i < ctx.inputs.size(); ++i) {
                      const std::size_t r = ctx.in(i).rows();
                      if (ctx.needs(i)) g[i] = ctx.grad_out.RowBlock(offset, r);
                      offset += r;
                    }
                  });
}

Var PickPerRow(Var a, std::span<const std::size_t> cols) {
  const Tensor &x = a.value();
  if (cols.size() != x.rows())
    throw ShapeError("PickPerRow: " + std::to_string(cols.size()) + " indices for " + x.ShapeString());
  Tensor out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (cols[i] >= x.cols())
      throw ShapeError("PickPerRow: column " + std::to_string(cols[i]) + " out of " + x.ShapeString());
    out(i, 0) = x(i, cols[i]);
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return TapeOf(a).Record("pick_per_row", std::move(out), {a.id()},
                          [idx](const BackwardContext &ctx, std::span<Tensor> g) {
                            const Tensor &x = ctx.in(0);
                            Tensor d(x.rows(), x.cols());
                            for (std::size_t i = 0; i < idx.size(); ++i) d(i, idx[i]) = ctx.grad_out(i, 0);
                            g[0] = std::move(d);
                          });
}

GradCheckResult FiniteDifferenceCheck(const LossFn &loss_fn, const std::vector<Tensor> &params,
                                      double step) {
  if (!(step > 0.0)) throw ContractError("FiniteDifferenceCheck: step must be > 0");

  auto evaluate = [&](const std::vector<Tensor> &values) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor &v : values) vars.push_back(tape.Leaf(v));
    const double loss = loss_fn(tape, vars).value()(0, 0);
    if (!std::isfinite(loss)) throw NumericError("FiniteDifferenceCheck: non-finite loss");
    return loss;
  };

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor &v : params) vars.push_back(tape.Leaf(v));
    Var loss = loss_fn(tape, vars);
    if (!std::isfinite(loss.value()(0, 0)))
      throw NumericError("FiniteDifferenceCheck: non-finite loss");
    tape.Backward(loss);
    for (const Var &v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult result;
  std::vector<Tensor> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p].size(); ++k) {
      const double orig = params[p][k];
      probe[p][k] = orig + step;
      const double up = evaluate(probe);
      probe[p][k] = orig - step;
      const double down = evaluate(probe);
      probe[p][k] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[p][k];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-12});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > result.max_rel_error || (p == 0 && k == 0)) {
        result = {rel, p, k, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace ldse::ad
