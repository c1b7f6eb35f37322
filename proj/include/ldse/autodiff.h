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

#ifndef LDSE_AUTODIFF_H_
#define LDSE_AUTODIFF_H_

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ldse/tensor.h"

namespace ldse::ad {

using NodeId = std::size_t;
class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape *tape, NodeId id) : tape_(tape), id_(id) {}

  const Tensor &value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool tracked() const;
  NodeId id() const { return id_; }
  Tape *tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape *tape_ = nullptr;
  NodeId id_ = 0;
};

// What a backward closure sees: the upstream gradient of its output and
// read access to its inputs' forward values.
struct BackwardContext {
  const Tape &tape;
  NodeId self;
  std::span<const NodeId> inputs;
  const Tensor &grad_out;

  const Tensor &out() const;
  const Tensor &in(std::size_t i) const;
  bool needs(std::size_t i) const;
};

// Fills grads[i] for every input i with needs(i); leaving an entry empty
// means "no contribution".
using BackwardFn = std::function<void(const BackwardContext &, std::span<Tensor> grads)>;

// Define-by-run reverse-mode tape. Nodes are appended in execution order,
// so inputs always precede their consumers and Backward is one reverse
// sweep with a fixed accumulation order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  // A tracked leaf (parameter or differentiable input).
  Var Leaf(Tensor value, std::string name = {});
  // An untracked value; gradients never flow into it.
  Var Constant(Tensor value);

  // Appends an op node. The node is tracked iff some input is tracked; an
  // untracked node drops `backward`.
  Var Record(std::string op, Tensor value, std::vector<NodeId> inputs, BackwardFn backward);

  const Tensor &value(NodeId id) const { return nodes_.at(id).value; }
  bool tracked(NodeId id) const { return nodes_.at(id).tracked; }
  const std::string &op(NodeId id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a 1x1 tracked loss. Clears any previous gradients.
  void Backward(Var loss);

  // Gradient of the last Backward's loss w.r.t. `v`; zeros if v received
  // none.
  Tensor grad(Var v) const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool tracked = false;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// ---- primitives -------------------------------------------------------
//
// Binary elementwise ops broadcast an operand whose row or column count
// is 1 (bias rows, per-row scalars, 1x1 scalars); nothing else.

Var MatMul(Var a, Var b);
Var Transpose(Var a);
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Mul(Var a, Var b);  // elementwise
Var Div(Var a, Var b);  // elementwise
Var Scale(Var a, double s);
Var AddScalar(Var a, double s);
Var Neg(Var a);

Var Tanh(Var a);
Var Relu(Var a);
Var Abs(Var a);
Var Exp(Var a);
Var Log(Var a);
Var Sqrt(Var a);
Var Square(Var a);

Var Sum(Var a);   // 1x1
Var Mean(Var a);  // 1x1
Var RowSum(Var a);   // R x 1
Var RowMean(Var a);  // R x 1
Var ColSum(Var a);   // 1 x C
Var ColMean(Var a);  // 1 x C
// Population standard deviation sqrt(var + eps).
Var RowStd(Var a, double eps);  // R x 1
Var ColStd(Var a, double eps);  // 1 x C

Var RowSoftmax(Var a);
Var LogSoftmaxRows(Var a);
Var Dot(Var a, Var b);  // sum of elementwise products, 1x1
Var L2NormalizeRows(Var a, double eps);

// Identity forward. Backward multiplies the upstream gradient by -1 when
// active and passes it through unchanged otherwise.
Var GradientReversal(Var x, bool active = true);

Var Reshape(Var a, std::size_t rows, std::size_t cols);
// Sums consecutive blocks of `block` rows: (B*block) x C -> B x C.
Var BlockRowSum(Var a, std::size_t block);
Var GatherRows(Var a, std::span<const std::size_t> rows);
Var ConcatRows(std::span<const Var> parts);
// out(i, 0) = a(i, cols[i])
Var PickPerRow(Var a, std::span<const std::size_t> cols);

// ---- gradient checking ------------------------------------------------

using LossFn = std::function<Var(Tape &, std::span<const Var> params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares tape gradients with central differences, one coordinate at a
// time. Relative error is |a - n| / max(|a|, |n|, 1e-12).
GradCheckResult FiniteDifferenceCheck(const LossFn &loss_fn, const std::vector<Tensor> &params,
                                      double step);

}  // namespace ldse::ad

#endif  // LDSE_AUTODIFF_H_
