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

#include "ldse/keyvalue.h"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "ldse/errors.h"

namespace ldse {
namespace {

std::string Trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues KeyValues::Parse(const std::string &text, const std::string &source) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ParseError(where + ": expected `key = value`, got `" + line + "`");
    std::string key = Trim(line.substr(0, eq));
    std::string value = Trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(where + ": empty key");
    if (const Entry *prev = kv.Find(key))
      throw ParseError("conflicting values for `" + key + "`: " + prev->origin + " and " + where);
    kv.entries_.push_back({std::move(key), std::move(value), where});
  }
  return kv;
}

void KeyValues::Set(const std::string &key, std::string value, std::string origin) {
  for (Entry &e : entries_)
    if (e.key == key) {
      e.value = std::move(value);
      e.origin = std::move(origin);
      return;
    }
  entries_.push_back({key, std::move(value), std::move(origin)});
}

const KeyValues::Entry *KeyValues::Find(const std::string &key) const {
  for (const Entry &e : entries_)
    if (e.key == key) return &e;
  return nullptr;
}

std::optional<std::string> KeyValues::Get(const std::string &key) const {
  if (const Entry *e = Find(key)) return e->value;
  return std::nullopt;
}

std::string KeyValues::ToText(const std::string &prefix) const {
  std::string out;
  for (const Entry &e : entries_) out += prefix + e.key + " = " + e.value + "\n";
  return out;
}

double KeyValues::GetDouble(const std::string &key, double fallback) const {
  const Entry *e = Find(key);
  return e ? ParseDouble(e->value, key + (e->origin.empty() ? "" : " (" + e->origin + ")")) : fallback;
}

std::int64_t KeyValues::GetInt(const std::string &key, std::int64_t fallback) const {
  const Entry *e = Find(key);
  return e ? ParseInt(e->value, key + (e->origin.empty() ? "" : " (" + e->origin + ")")) : fallback;
}

std::string KeyValues::GetString(const std::string &key, const std::string &fallback) const {
  const Entry *e = Find(key);
  return e ? e->value : fallback;
}

std::string FormatDouble(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double ParseDouble(const std::string &text, const std::string &what) {
  const std::string t = Trim(text);
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ParseError("invalid number for " + what + ": `" + text + "`");
  return v;
}

std::int64_t ParseInt(const std::string &text, const std::string &what) {
  const std::string t = Trim(text);
  std::int64_t v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ParseError("invalid integer for " + what + ": `" + text + "`");
  return v;
}

}  // namespace ldse
