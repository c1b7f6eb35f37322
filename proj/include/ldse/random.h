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

#ifndef LDSE_RANDOM_H_
#define LDSE_RANDOM_H_

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ldse {

// Mixes a base seed with a stream tag so that independent consumers
// (data generation, init, batch sampling, ...) never share a sequence.
std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t tag);

// Seeded generator with platform-independent draws. The standard
// distributions are implementation-defined, so every draw used by the
// library goes through the helpers here and only the raw mt19937_64
// output is relied upon.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t NextU64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t UniformInt(std::uint64_t n);

  // Standard normal via Box-Muller; caches the second variate.
  double Normal();

  template <typename T>
  void Shuffle(std::vector<T> &v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(UniformInt(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Serialized engine + cached normal, for checkpoints.
  std::string State() const;
  void SetState(const std::string &state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ldse

#endif  // LDSE_RANDOM_H_
