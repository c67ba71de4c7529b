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

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "octran/error.hpp"

namespace octran {

/// Point or direction in the camera frame: x right, y down, z forward (meters).
struct Vec3 {
  double x = 0;
  double y = 0;
  double z = 0;

  friend bool operator==(const Vec3&, const Vec3&) = default;
};

/// Sub-pixel image location plus the disparity observed there.
struct PixelDisparity {
  double u = 0;
  double v = 0;
  double d = 0;
};

/// Pinhole intrinsics with the virtual stereo baseline that scales disparity
/// to metric depth (z = b * f_x / d).
struct StereoCamera {
  double fx = 0;
  double fy = 0;
  double ox = 0;
  double oy = 0;
  double baseline = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) fail(ErrorCode::invalid_argument, "focal lengths must be positive");
    if (!(baseline > 0)) fail(ErrorCode::invalid_argument, "baseline must be positive");
    if (width == 0 || height == 0) fail(ErrorCode::invalid_argument, "sensor size must be nonzero");
    if (!(ox >= 0 && ox < width) || !(oy >= 0 && oy < height)) {
      fail(ErrorCode::invalid_argument, "principal point outside sensor");
    }
  }

  bool in_frame(double u, double v) const { return u >= 0 && u < width && v >= 0 && v < height; }

  friend bool operator==(const StereoCamera&, const StereoCamera&) = default;
};

/// Back-projects pixel (u, v) with disparity d:
///   x = b (u - o_x) / d,  y = b f_x (v - o_y) / (f_y d),  z = b f_x / d.
/// The y term keeps the f_x / f_y ratio; with square pixels it is the usual
/// pinhole back-projection.
inline Vec3 triangulate(const StereoCamera& cam, double u, double v, double d) {
  if (!(d > 0)) fail(ErrorCode::no_depth, "disparity " + std::to_string(d) + " at (" + std::to_string(u) + ", " +
                                              std::to_string(v) + ")");
  if (!cam.in_frame(u, v)) {
    fail(ErrorCode::out_of_frame, "pixel (" + std::to_string(u) + ", " + std::to_string(v) + ") outside " +
                                      std::to_string(cam.width) + "x" + std::to_string(cam.height));
  }
  return {cam.baseline * (u - cam.ox) / d, cam.baseline * cam.fx * (v - cam.oy) / (cam.fy * d),
          cam.baseline * cam.fx / d};
}

/// Exact inverse of `triangulate`. The returned pixel may lie outside the
/// sensor; callers that need an in-frame pixel check `in_frame`.
inline PixelDisparity project(const StereoCamera& cam, const Vec3& p) {
  if (!(p.z > 0)) fail(ErrorCode::behind_camera, "z = " + std::to_string(p.z));
  const double d = cam.baseline * cam.fx / p.z;
  return {cam.ox + p.x * d / cam.baseline, cam.oy + cam.fy * p.y * d / (cam.baseline * cam.fx), d};
}

/// First-order depth error caused by a disparity error `delta_d`:
/// dz = z^2 * delta_d / (b * f_x). Grows quadratically with depth.
inline double depth_error(const StereoCamera& cam, double z, double delta_d) {
  if (!(z > 0)) fail(ErrorCode::invalid_depth, "z = " + std::to_string(z));
  if (!(delta_d >= 0)) fail(ErrorCode::invalid_argument, "delta_d must be non-negative");
  return z * z * delta_d / (cam.baseline * cam.fx);
}

/// Per-pixel disparity in pixels, stored as 32-bit floats (the interchange
/// precision). Zero means no measurement; an optional mask further
/// invalidates pixels.
struct DisparityMap {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<float> values;       // row-major, row v then column u
  std::vector<std::uint8_t> mask;  // empty, or one entry per pixel; 0 = masked out

  DisparityMap() = default;
  DisparityMap(std::uint32_t w, std::uint32_t h) : width(w), height(h), values(std::size_t(w) * h, 0.0f) {}

  float& at(std::uint32_t u, std::uint32_t v) { return values[std::size_t(v) * width + u]; }
  float at(std::uint32_t u, std::uint32_t v) const { return values[std::size_t(v) * width + u]; }

  bool valid(std::uint32_t u, std::uint32_t v) const {
    const std::size_t i = std::size_t(v) * width + u;
    return values[i] > 0 && (mask.empty() || mask[i] != 0);
  }

  void validate() const {
    if (values.size() != std::size_t(width) * height) {
      fail(ErrorCode::dimension_mismatch, "disparity payload has " + std::to_string(values.size()) +
                                              " values for " + std::to_string(width) + "x" +
                                              std::to_string(height));
    }
    if (!mask.empty() && mask.size() != values.size()) fail(ErrorCode::dimension_mismatch, "mask size");
    for (float d : values) {
      if (!std::isfinite(d) || d < 0) fail(ErrorCode::invalid_argument, "disparity must be finite and >= 0");
    }
  }

  friend bool operator==(const DisparityMap&, const DisparityMap&) = default;
};

using PointCloud = std::vector<Vec3>;

inline PointCloud disparity_to_pointcloud(const StereoCamera& cam, const DisparityMap& dm) {
  if (dm.width != cam.width || dm.height != cam.height) {
    fail(ErrorCode::dimension_mismatch, "disparity map " + std::to_string(dm.width) + "x" +
                                            std::to_string(dm.height) + " vs sensor " + std::to_string(cam.width) +
                                            "x" + std::to_string(cam.height));
  }
  dm.validate();
  PointCloud cloud;
  for (std::uint32_t v = 0; v < dm.height; ++v) {
    for (std::uint32_t u = 0; u < dm.width; ++u) {
      if (dm.valid(u, v)) cloud.push_back(triangulate(cam, u, v, dm.at(u, v)));
    }
  }
  return cloud;
}

/// Axis-aligned metric voxel lattice. Axis a covers [origin[a], origin[a] + extent[a])
/// split into dims[a] half-open cells.
struct VoxelGridSpec {
  std::array<std::uint32_t, 3> dims{1, 1, 1};
  std::array<double, 3> extent{1, 1, 1};
  std::array<double, 3> origin{0, 0, 0};

  /// Laterally centered, `above_horizon` of the vertical extent above the
  /// optical axis, starting at the camera plane.
  static VoxelGridSpec forward_facing(std::array<std::uint32_t, 3> dims, std::array<double, 3> extent,
                                      double above_horizon = 0.5) {
    return {dims, extent, {-extent[0] / 2, -extent[1] * above_horizon, 0.0}};
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 1) fail(ErrorCode::invalid_argument, "grid dims must be >= 1");
      if (!(extent[a] > 0) || !std::isfinite(extent[a])) fail(ErrorCode::invalid_argument, "grid extent must be > 0");
      if (!std::isfinite(origin[a])) fail(ErrorCode::invalid_argument, "grid origin must be finite");
      if (!(voxel_size(a) > 0)) fail(ErrorCode::invalid_argument, "voxel size underflows");
    }
  }

  double voxel_size(int axis) const { return extent[axis] / dims[axis]; }
  std::size_t cell_count() const { return std::size_t(dims[0]) * dims[1] * dims[2]; }

  /// Lower boundary of cell `i` on `axis`; boundary(dims) is exactly origin + extent.
  double boundary(int axis, std::uint32_t i) const {
    if (i >= dims[axis]) return origin[axis] + extent[axis];
    return origin[axis] + extent[axis] * i / dims[axis];
  }

  double center(int axis, std::uint32_t i) const { return origin[axis] + extent[axis] * (i + 0.5) / dims[axis]; }

  /// Cell index containing `x` on `axis`, or -1 when outside [origin, origin + extent).
  std::int64_t cell_of(int axis, double x) const {
    if (!(x >= boundary(axis, 0) && x < boundary(axis, dims[axis]))) return -1;
    auto i = static_cast<std::int64_t>(std::floor((x - origin[axis]) / voxel_size(axis)));
    if (i < 0) i = 0;
    if (i >= std::int64_t(dims[axis])) i = dims[axis] - 1;
    // floor() can land one cell off near a boundary; settle on the interval rule.
    while (i > 0 && x < boundary(axis, std::uint32_t(i))) --i;
    while (i + 1 < std::int64_t(dims[axis]) && x >= boundary(axis, std::uint32_t(i + 1))) ++i;
    return i;
  }

  friend bool operator==(const VoxelGridSpec&, const VoxelGridSpec&) = default;
};

/// Binary occupancy over a VoxelGridSpec. Cells are stored z-fastest,
/// index = (i * N_y + j) * N_z + k, matching a row-major N_x x N_y x N_z tensor.
struct OccupancyGrid {
  VoxelGridSpec spec;
  std::vector<std::uint8_t> cells;

  OccupancyGrid() = default;
  explicit OccupancyGrid(const VoxelGridSpec& s) : spec(s), cells(s.cell_count(), 0) {}

  std::size_t index(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
    return (std::size_t(i) * spec.dims[1] + j) * spec.dims[2] + k;
  }
  bool at(std::uint32_t i, std::uint32_t j, std::uint32_t k) const { return cells[index(i, j, k)] != 0; }
  void set(std::uint32_t i, std::uint32_t j, std::uint32_t k, bool on = true) { cells[index(i, j, k)] = on ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto c : cells) n += c != 0;
    return n;
  }

  void validate() const {
    spec.validate();
    if (cells.size() != spec.cell_count()) fail(ErrorCode::dimension_mismatch, "occupancy payload size");
    for (auto c : cells) {
      if (c > 1) fail(ErrorCode::invalid_argument, "occupancy cell not binary");
    }
  }

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;
};

struct VoxelizeResult {
  OccupancyGrid grid;
  std::size_t dropped = 0;
};

/// Marks every cell containing at least one point; points outside the grid
/// are dropped and counted.
inline VoxelizeResult voxelize(const PointCloud& cloud, const VoxelGridSpec& spec) {
  spec.validate();
  VoxelizeResult out{OccupancyGrid(spec), 0};
  for (const auto& p : cloud) {
    const auto i = spec.cell_of(0, p.x);
    const auto j = spec.cell_of(1, p.y);
    const auto k = spec.cell_of(2, p.z);
    if (i < 0 || j < 0 || k < 0) {
      ++out.dropped;
      continue;
    }
    out.grid.set(std::uint32_t(i), std::uint32_t(j), std::uint32_t(k));
  }
  return out;
}

inline PointCloud voxel_centroids(const OccupancyGrid& grid) {
  PointCloud out;
  const auto& s = grid.spec;
  for (std::uint32_t i = 0; i < s.dims[0]; ++i)
    for (std::uint32_t j = 0; j < s.dims[1]; ++j)
      for (std::uint32_t k = 0; k < s.dims[2]; ++k)
        if (grid.at(i, j, k)) out.push_back({s.center(0, i), s.center(1, j), s.center(2, k)});
  return out;
}

/// |a AND b| / |a OR b|; 1.0 when both grids are empty.
inline double iou(const OccupancyGrid& a, const OccupancyGrid& b) {
  if (!(a.spec == b.spec)) fail(ErrorCode::spec_mismatch, "IoU between grids with different specs");
  if (a.cells.size() != b.cells.size()) fail(ErrorCode::dimension_mismatch, "IoU payload sizes differ");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t n = 0; n < a.cells.size(); ++n) {
    const bool x = a.cells[n] != 0;
    const bool y = b.cells[n] != 0;
    inter += x && y;
    uni += x || y;
  }
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

/// Chebyshev dilation by `radius` cells.
inline OccupancyGrid dilate(const OccupancyGrid& grid, int radius = 1) {
  OccupancyGrid out(grid.spec);
  const auto& d = grid.spec.dims;
  for (std::int64_t i = 0; i < d[0]; ++i)
    for (std::int64_t j = 0; j < d[1]; ++j)
      for (std::int64_t k = 0; k < d[2]; ++k) {
        if (!grid.at(std::uint32_t(i), std::uint32_t(j), std::uint32_t(k))) continue;
        for (std::int64_t a = std::max<std::int64_t>(0, i - radius); a <= std::min<std::int64_t>(d[0] - 1, i + radius); ++a)
          for (std::int64_t b = std::max<std::int64_t>(0, j - radius); b <= std::min<std::int64_t>(d[1] - 1, j + radius); ++b)
            for (std::int64_t c = std::max<std::int64_t>(0, k - radius); c <= std::min<std::int64_t>(d[2] - 1, k + radius); ++c)
              out.set(std::uint32_t(a), std::uint32_t(b), std::uint32_t(c));
      }
  return out;
}

}  // namespace octran
