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

#include <string>

#include "octran/binary_io.hpp"
#include "octran/tensor.hpp"

namespace octran {

/// TNSR layout (little-endian): "TNSR" | u32 rank | u32 dims[rank] | f64 data, row-major.
inline void encode_tnsr(io::Bytes& out, const Tensor& t) {
  io::put_bytes(out, "TNSR");
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) io::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (auto v : t.data()) io::put<double>(out, v);
}

inline io::Bytes encode_tnsr(const Tensor& t) {
  io::Bytes out;
  encode_tnsr(out, t);
  return out;
}

inline Tensor decode_tnsr(io::Reader& in) {
  auto magic = in.take(4, "TNSR magic");
  if (std::string(magic.begin(), magic.end()) != "TNSR") fail(ErrorCode::bad_magic, "expected TNSR");
  const auto rank = in.get<std::uint32_t>("TNSR rank");
  if (rank > 16) fail(ErrorCode::bad_dims, "TNSR rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = in.get<std::uint32_t>("TNSR dims");
    if (d == 0) fail(ErrorCode::bad_dims, "TNSR zero dimension");
    n *= d;
  }
  if (n > in.remaining() / sizeof(double)) {
    fail(ErrorCode::truncated, "TNSR payload of " + std::to_string(n) + " values");
  }
  std::vector<double> data(n);
  for (auto& v : data) v = in.get<double>("TNSR data");
  return Tensor(std::move(shape), std::move(data));
}

inline Tensor decode_tnsr(std::span<const std::uint8_t> bytes) {
  io::Reader in(bytes);
  auto t = decode_tnsr(in);
  if (!in.done()) fail(ErrorCode::bad_dims, "trailing bytes after TNSR payload");
  return t;
}

inline void save_tnsr(const Tensor& t, const std::string& path) { io::write_file_atomic(path, encode_tnsr(t)); }
inline Tensor load_tnsr(const std::string& path) { return decode_tnsr(io::read_file(path)); }

}  // namespace octran
