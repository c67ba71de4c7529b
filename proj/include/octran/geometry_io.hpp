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

#include <cstdio>
#include <sstream>
#include <string>

#include "octran/binary_io.hpp"
#include "octran/geometry.hpp"

namespace octran {

inline constexpr std::uint32_t kOcgrVersion = 1;

/// OCGR layout (little-endian):
///   "OCGR" | u32 version | u32 dims[3] | f64 origin[3] | f64 extent[3] |
///   occupancy bits, x fastest then y then z, LSB-first, zero-padded to a byte.
inline io::Bytes encode_ocgr(const OccupancyGrid& grid) {
  grid.validate();
  io::Bytes out;
  io::put_bytes(out, "OCGR");
  io::put<std::uint32_t>(out, kOcgrVersion);
  for (auto d : grid.spec.dims) io::put<std::uint32_t>(out, d);
  for (auto o : grid.spec.origin) io::put<double>(out, o);
  for (auto e : grid.spec.extent) io::put<double>(out, e);
  const auto& d = grid.spec.dims;
  std::vector<std::uint8_t> packed((grid.spec.cell_count() + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::uint32_t k = 0; k < d[2]; ++k)
    for (std::uint32_t j = 0; j < d[1]; ++j)
      for (std::uint32_t i = 0; i < d[0]; ++i, ++bit)
        if (grid.at(i, j, k)) packed[bit / 8] |= std::uint8_t(1u << (bit % 8));
  out.insert(out.end(), packed.begin(), packed.end());
  return out;
}

/// Parses one OCGR record from the reader's position.
inline OccupancyGrid decode_ocgr(io::Reader& in) {
  auto magic = in.take(4, "OCGR magic");
  if (std::string(magic.begin(), magic.end()) != "OCGR") fail(ErrorCode::bad_magic, "expected OCGR");
  const auto version = in.get<std::uint32_t>("OCGR version");
  if (version != kOcgrVersion) fail(ErrorCode::bad_version, "OCGR version " + std::to_string(version));
  VoxelGridSpec spec;
  for (auto& d : spec.dims) d = in.get<std::uint32_t>("OCGR dims");
  for (auto& o : spec.origin) o = in.get<double>("OCGR origin");
  for (auto& e : spec.extent) e = in.get<double>("OCGR extent");
  for (auto d : spec.dims) {
    if (d == 0) fail(ErrorCode::bad_dims, "OCGR zero dimension");
  }
  spec.validate();
  OccupancyGrid grid(spec);
  auto packed = in.take((spec.cell_count() + 7) / 8, "OCGR occupancy");
  std::size_t bit = 0;
  for (std::uint32_t k = 0; k < spec.dims[2]; ++k)
    for (std::uint32_t j = 0; j < spec.dims[1]; ++j)
      for (std::uint32_t i = 0; i < spec.dims[0]; ++i, ++bit)
        if (packed[bit / 8] & (1u << (bit % 8))) grid.set(i, j, k);
  return grid;
}

inline OccupancyGrid decode_ocgr(std::span<const std::uint8_t> bytes) {
  io::Reader in(bytes);
  auto grid = decode_ocgr(in);
  if (!in.done()) fail(ErrorCode::bad_dims, "trailing bytes after OCGR payload");
  return grid;
}

inline void save_ocgr(const OccupancyGrid& grid, const std::string& path) {
  io::write_file_atomic(path, encode_ocgr(grid));
}

inline OccupancyGrid load_ocgr(const std::string& path) { return decode_ocgr(io::read_file(path)); }

/// ASCII PLY 1.0 with float x, y, z vertices.
inline std::string encode_ply(const PointCloud& cloud) {
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char buf[96];
  for (const auto& p : cloud) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", float(p.x), float(p.y), float(p.z));
    out << buf;
  }
  return out.str();
}

inline void save_ply(const PointCloud& cloud, const std::string& path) {
  io::write_file_atomic(path, encode_ply(cloud));
}

/// Reads the vertex block of an ASCII PLY written by `encode_ply`.
inline PointCloud parse_ply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "ply") fail(ErrorCode::bad_magic, "not a PLY file");
  std::size_t count = 0;
  bool ascii = false;
  while (std::getline(in, line) && line != "end_header") {
    if (line == "format ascii 1.0") ascii = true;
    if (line.rfind("element vertex ", 0) == 0) count = std::stoul(line.substr(15));
  }
  if (!ascii) fail(ErrorCode::unsupported_channels, "only ascii PLY is supported");
  PointCloud cloud(count);
  for (auto& p : cloud) {
    if (!(in >> p.x >> p.y >> p.z)) fail(ErrorCode::truncated, "PLY vertex list");
  }
  return cloud;
}

}  // namespace octran
