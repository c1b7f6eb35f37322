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

#include "ldse/tensor.h"

#include <cmath>
#include <cstdint>
#include <cstring>

#include "ldse/errors.h"

namespace ldse {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw ShapeError("Tensor: " + std::to_string(data_.size()) +
                     " values for shape " + ShapeString());
}

Tensor Tensor::FromRows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto &row : rows) {
    if (row.size() != c) throw ShapeError("Tensor::FromRows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

Tensor Tensor::RowVector(std::span<const double> values) {
  return Tensor(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::Identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::RowBlock(std::size_t begin, std::size_t count) const {
  if (begin + count > rows_)
    throw ShapeError("Tensor::RowBlock: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + ShapeString());
  auto first = data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_);
  return Tensor(count, cols_,
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * cols_)));
}

bool Tensor::AllFinite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::ShapeString() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

std::uint64_t HashTensor(const Tensor &t, std::uint64_t h) {
  auto mix = [&h](const void *p, std::size_t n) {
    const auto *bytes = static_cast<const unsigned char *>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  const std::uint64_t shape[2] = {t.rows(), t.cols()};
  mix(shape, sizeof shape);
  mix(t.values().data(), t.size() * sizeof(double));
  return h;
}

}  // namespace ldse
