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

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "octran/error.hpp"

namespace octran::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian stores");

using Bytes = std::vector<std::uint8_t>;

inline void put_bytes(Bytes& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

template <typename T>
void put(Bytes& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

/// Bounds-checked cursor over an in-memory byte buffer. Every read past the
/// end raises `truncated`, so parsers never return partial data.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

  std::span<const std::uint8_t> take(std::size_t n, std::string_view what) {
    if (remaining() < n) {
      fail(ErrorCode::truncated, std::string(what) + ": need " + std::to_string(n) + " bytes, have " +
                                     std::to_string(remaining()));
    }
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T get(std::string_view what) {
    auto s = take(sizeof(T), what);
    T value;
    std::memcpy(&value, s.data(), sizeof(T));
    return value;
  }

  /// Reads up to and including '\n'; the newline is not returned.
  std::string line(std::string_view what) {
    std::string out;
    while (true) {
      if (done()) fail(ErrorCode::truncated, std::string(what) + ": unterminated line");
      char c = static_cast<char>(data_[pos_++]);
      if (c == '\n') return out;
      out.push_back(c);
    }
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Writes to "<path>.tmp" and renames over the target.
inline void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail(ErrorCode::io, "cannot rename " + tmp + " to " + path);
}

inline void write_file_atomic(const std::string& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace octran::io
