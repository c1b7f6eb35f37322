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

#ifndef LDSE_ERRORS_H_
#define LDSE_ERRORS_H_

#include <stdexcept>
#include <string>

namespace ldse {

// Incompatible tensor dimensions.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string &what) : std::invalid_argument(what) {}
};

// A precondition of an operation does not hold (bad label, bad config,
// missing id, ...). The CLI maps this to exit status 1.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string &what) : std::runtime_error(what) {}
};

// Malformed input text or binary. The CLI maps this to exit status 2.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string &what) : std::runtime_error(what) {}
};

// NaN/Inf where a finite value was required.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string &what) : std::runtime_error(what) {}
};

}  // namespace ldse

#endif  // LDSE_ERRORS_H_
