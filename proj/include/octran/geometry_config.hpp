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

#include "octran/geometry.hpp"
#include "octran/kv.hpp"

namespace octran {

/// Camera keys: fx, fy, ox, oy, baseline, width, height.
inline std::string camera_to_text(const StereoCamera& c) {
  return "fx=" + format_real(c.fx) + "\nfy=" + format_real(c.fy) + "\nox=" + format_real(c.ox) +
         "\noy=" + format_real(c.oy) + "\nbaseline=" + format_real(c.baseline) +
         "\nwidth=" + std::to_string(c.width) + "\nheight=" + std::to_string(c.height) + "\n";
}

namespace detail {
inline std::uint32_t positive_u32(const KeyValues& kv, const std::string& key, long long fallback) {
  const auto v = kv.integer_or(key, fallback);
  if (v < 1 || v > 0xFFFFFFFFll) fail(ErrorCode::invalid_config, "key '" + key + "' must be a positive integer");
  return static_cast<std::uint32_t>(v);
}
}  // namespace detail

inline StereoCamera camera_from_kv(const KeyValues& kv, const StereoCamera& fallback) {
  StereoCamera c;
  c.fx = kv.real_or("fx", fallback.fx);
  c.fy = kv.real_or("fy", fallback.fy);
  c.ox = kv.real_or("ox", fallback.ox);
  c.oy = kv.real_or("oy", fallback.oy);
  c.baseline = kv.real_or("baseline", fallback.baseline);
  c.width = detail::positive_u32(kv, "width", fallback.width);
  c.height = detail::positive_u32(kv, "height", fallback.height);
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::invalid_config, e.what());
  }
  return c;
}

/// All keys required.
inline StereoCamera camera_from_kv(const KeyValues& kv) {
  for (const char* k : {"fx", "fy", "ox", "oy", "baseline", "width", "height"}) (void)kv.str(k);
  return camera_from_kv(kv, StereoCamera{});
}

/// Grid keys: grid_n{x,y,z}, grid_extent_{x,y,z}, grid_origin_{x,y,z}.
inline std::string grid_to_text(const VoxelGridSpec& g) {
  std::string out;
  const char* axes = "xyz";
  for (int a = 0; a < 3; ++a) out += std::string("grid_n") + axes[a] + "=" + std::to_string(g.dims[a]) + "\n";
  for (int a = 0; a < 3; ++a) out += std::string("grid_extent_") + axes[a] + "=" + format_real(g.extent[a]) + "\n";
  for (int a = 0; a < 3; ++a) out += std::string("grid_origin_") + axes[a] + "=" + format_real(g.origin[a]) + "\n";
  return out;
}

/// Missing keys keep `fallback`. Extents given without an origin get the
/// forward-facing origin.
inline VoxelGridSpec grid_from_kv(const KeyValues& kv, const VoxelGridSpec& fallback) {
  VoxelGridSpec g = fallback;
  const char* axes = "xyz";
  for (int a = 0; a < 3; ++a) g.dims[a] = detail::positive_u32(kv, std::string("grid_n") + axes[a], g.dims[a]);
  bool extent_given = false;
  for (int a = 0; a < 3; ++a) {
    const auto k = std::string("grid_extent_") + axes[a];
    extent_given = extent_given || kv.has(k);
    g.extent[a] = kv.real_or(k, g.extent[a]);
  }
  if (extent_given) g = VoxelGridSpec::forward_facing(g.dims, g.extent);
  for (int a = 0; a < 3; ++a) g.origin[a] = kv.real_or(std::string("grid_origin_") + axes[a], g.origin[a]);
  try {
    g.validate();
  } catch (const Error& e) {
    fail(ErrorCode::invalid_config, e.what());
  }
  return g;
}

}  // namespace octran
