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

// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <utility>
#include <vector>

#include "ldse/kernels.h"
#include "ldse/random.h"

namespace {

using ldse::Tensor;

Tensor Random(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  ldse::Rng rng(seed);
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.Normal();
  return t;
}

template <Tensor (*Kernel)(const Tensor &, const Tensor &)>
void BM_MatMul(benchmark::State &state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = Random(n, n, 1), b = Random(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

// Segment-scoring workload: 10 unit segments of width 32 per utterance.
struct ScoringWorkload {
  std::vector<Tensor> sets;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  explicit ScoringWorkload(std::size_t trials) {
    const std::size_t utts = 200;
    for (std::size_t u = 0; u < utts; ++u) sets.push_back(ldse::kernels::NormalizeRows(Random(10, 32, 100 + u)));
    ldse::Rng rng(7);
    for (std::size_t t = 0; t < trials; ++t) pairs.emplace_back(rng.UniformInt(utts), rng.UniformInt(utts));
  }
};

template <std::vector<double> (*Kernel)(std::span<const Tensor>,
                                        std::span<const std::pair<std::size_t, std::size_t>>)>
void BM_BatchMeanPairDot(benchmark::State &state) {
  const ScoringWorkload w(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(w.sets, w.pairs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

BENCHMARK(BM_MatMul<ldse::kernels::serial::MatMul>)->Name("MatMul/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_MatMul<ldse::kernels::MatMul>)->Name("MatMul/parallel")->Arg(64)->Arg(256)->Arg(512)->UseRealTime();
BENCHMARK(BM_BatchMeanPairDot<ldse::kernels::serial::BatchMeanPairDot>)
    ->Name("BatchMeanPairDot/serial")
    ->Arg(1000)
    ->Arg(20000);
BENCHMARK(BM_BatchMeanPairDot<ldse::kernels::BatchMeanPairDot>)
    ->Name("BatchMeanPairDot/parallel")
    ->Arg(1000)
    ->Arg(20000)
    ->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
