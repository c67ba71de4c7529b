/*
 * SPDX-FileCopyrightText: Copyright (c) 2026 The octran-desk Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>

#include "octran/binary_io.hpp"
#include "octran/error.hpp"

namespace octran {

/// Flat `key=value` text, one pair per line. `#` starts a comment line.
/// Keys are unique; later duplicates are rejected.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "<text>") {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        fail(ErrorCode::invalid_config, origin + ":" + std::to_string(lineno) + ": expected key=value");
      }
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) fail(ErrorCode::invalid_config, origin + ":" + std::to_string(lineno) + ": empty key");
      if (!kv.values_.emplace(key, value).second) {
        fail(ErrorCode::invalid_config, origin + ": duplicate key '" + key + "'");
      }
    }
    kv.origin_ = origin;
    return kv;
  }

  static KeyValues load(const std::string& path) {
    auto bytes = io::read_file(path);
    return parse(std::string(bytes.begin(), bytes.end()), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorCode::invalid_config, origin_ + ": missing key '" + key + "'");
    used_[key] = true;
    return it->second;
  }

  std::string str_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? str(key) : fallback;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      fail(ErrorCode::invalid_config, origin_ + ": key '" + key + "' is not a number: " + s);
    }
    return v;
  }

  double real_or(const std::string& key, double fallback) const { return has(key) ? real(key) : fallback; }

  long long integer(const std::string& key) const {
    const auto& s = str(key);
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      fail(ErrorCode::invalid_config, origin_ + ": key '" + key + "' is not an integer: " + s);
    }
    return v;
  }

  long long integer_or(const std::string& key, long long fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  /// Keys present in the input that no accessor has touched.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) out.push_back(k);
    }
    return out;
  }

  void reject_unused() const {
    auto extra = unused();
    if (!extra.empty()) fail(ErrorCode::invalid_config, origin_ + ": unknown key '" + extra.front() + "'");
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> used_;
  std::string origin_;
};

/// Shortest text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace octran
