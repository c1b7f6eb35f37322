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

#ifndef LDSE_KEYVALUE_H_
#define LDSE_KEYVALUE_H_

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ldse {

// Ordered flat `key = value` record. Used for config files, for the
// provenance block embedded in every artifact and for the report format.
class KeyValues {
 public:
  struct Entry {
    std::string key;
    std::string value;
    std::string origin;  // e.g. "run.cfg:3" or "--lambda"; informational
  };

  // Parses `key = value` lines; '#' starts a comment. Blank lines are
  // skipped. Duplicate keys are rejected, naming both lines.
  static KeyValues Parse(const std::string &text, const std::string &source);

  // Replaces an existing key in place or appends.
  void Set(const std::string &key, std::string value, std::string origin = {});
  std::optional<std::string> Get(const std::string &key) const;
  const Entry *Find(const std::string &key) const;
  bool Has(const std::string &key) const { return Find(key) != nullptr; }

  const std::vector<Entry> &entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  // One `key = value` per line. `prefix` is prepended to every line (for
  // embedding as comments).
  std::string ToText(const std::string &prefix = {}) const;

  // Typed accessors; throw ParseError naming key and origin.
  double GetDouble(const std::string &key, double fallback) const;
  std::int64_t GetInt(const std::string &key, std::int64_t fallback) const;
  std::string GetString(const std::string &key, const std::string &fallback) const;

 private:
  std::vector<Entry> entries_;
};

// Shortest round-trippable decimal form of a double.
std::string FormatDouble(double v);

double ParseDouble(const std::string &text, const std::string &what);
std::int64_t ParseInt(const std::string &text, const std::string &what);

}  // namespace ldse

#endif  // LDSE_KEYVALUE_H_
