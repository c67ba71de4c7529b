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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "octran/geometry.hpp"
#include "octran/parameters.hpp"
#include "octran/tensor.hpp"

namespace octran {

/// Axis-aligned box with a flat RGB albedo.
struct Box {
  Vec3 lo;
  Vec3 hi;
  std::array<double, 3> albedo{0.5, 0.5, 0.5};

  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
  }

  /// Euclidean distance from `p` to the box boundary (inside or outside).
  double surface_distance(const Vec3& p) const {
    if (contains(p)) {
      return std::min({p.x - lo.x, hi.x - p.x, p.y - lo.y, hi.y - p.y, p.z - lo.z, hi.z - p.z});
    }
    const double dx = std::max({lo.x - p.x, 0.0, p.x - hi.x});
    const double dy = std::max({lo.y - p.y, 0.0, p.y - hi.y});
    const double dz = std::max({lo.z - p.z, 0.0, p.z - hi.z});
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }

  friend bool operator==(const Box&, const Box&) = default;
};

struct Scene {
  std::vector<Box> boxes;
  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Box-world generator settings. Boxes are placed fully inside the
/// placement volume, which must sit inside the grid and in front of the camera.
struct SceneSpec {
  std::uint64_t seed = 0;
  std::uint32_t min_boxes = 3;
  std::uint32_t max_boxes = 6;
  Vec3 min_size{1.0, 0.5, 1.0};
  Vec3 max_size{3.0, 2.0, 3.0};
  Vec3 volume_lo{-6.0, -0.5, 3.0};
  Vec3 volume_hi{6.0, 1.5, 15.0};
  StereoCamera camera{64.0, 64.0, 64.0, 16.0, 0.5, 128, 32};
  VoxelGridSpec grid = VoxelGridSpec::forward_facing({16, 4, 16}, {16.0, 4.0, 16.0});

  void validate() const {
    camera.validate();
    grid.validate();
    if (min_boxes > max_boxes) fail(ErrorCode::invalid_config, "min_boxes > max_boxes");
    const std::array<double, 3> smin{min_size.x, min_size.y, min_size.z}, smax{max_size.x, max_size.y, max_size.z};
    const std::array<double, 3> vlo{volume_lo.x, volume_lo.y, volume_lo.z}, vhi{volume_hi.x, volume_hi.y, volume_hi.z};
    for (int a = 0; a < 3; ++a) {
      if (!(smin[a] > 0) || !(smin[a] <= smax[a])) fail(ErrorCode::invalid_config, "box size range is empty");
      if (!(vlo[a] < vhi[a])) fail(ErrorCode::invalid_config, "placement volume is empty");
      if (vlo[a] < grid.origin[a] || vhi[a] > grid.origin[a] + grid.extent[a]) {
        fail(ErrorCode::invalid_config, "placement volume leaves the grid");
      }
    }
    if (!(volume_lo.z > 0)) fail(ErrorCode::invalid_config, "placement volume must lie in front of the camera");
    // the middle of the volume's near face has to be in view
    const double cx = 0.5 * (volume_lo.x + volume_hi.x), cy = 0.5 * (volume_lo.y + volume_hi.y);
    const double u = camera.ox + camera.fx * cx / volume_lo.z, v = camera.oy + camera.fy * cy / volume_lo.z;
    if (!camera.in_frame(u, v)) fail(ErrorCode::invalid_config, "placement volume is outside the camera frustum");
  }

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

inline constexpr int kPlacementRetries = 64;

/// Deterministic in `spec` (seed included).
inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Scene scene;
  const auto count = spec.min_boxes + std::uint32_t(rng.below(spec.max_boxes - spec.min_boxes + 1));
  for (std::uint32_t n = 0; n < count; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      const Vec3 size{rng.uniform(spec.min_size.x, spec.max_size.x), rng.uniform(spec.min_size.y, spec.max_size.y),
                      rng.uniform(spec.min_size.z, spec.max_size.z)};
      const Vec3 room{spec.volume_hi.x - spec.volume_lo.x - size.x, spec.volume_hi.y - spec.volume_lo.y - size.y,
                      spec.volume_hi.z - spec.volume_lo.z - size.z};
      if (room.x < 0 || room.y < 0 || room.z < 0) continue;
      Box b;
      b.lo = {spec.volume_lo.x + rng.uniform() * room.x, spec.volume_lo.y + rng.uniform() * room.y,
              spec.volume_lo.z + rng.uniform() * room.z};
      b.hi = {b.lo.x + size.x, b.lo.y + size.y, b.lo.z + size.z};
      // clamp rounding spill past the volume's far corner
      b.hi = {std::min(b.hi.x, spec.volume_hi.x), std::min(b.hi.y, spec.volume_hi.y), std::min(b.hi.z, spec.volume_hi.z)};
      b.albedo = {rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)};
      scene.boxes.push_back(b);
      placed = true;
    }
    if (!placed) {
      fail(ErrorCode::placement_failed, "box " + std::to_string(n) + " does not fit after " +
                                            std::to_string(kPlacementRetries) + " attempts");
    }
  }
  return scene;
}

/// Ray through pixel (u, v) from the camera center, normalized to unit z.
inline Vec3 pixel_ray(const StereoCamera& cam, double u, double v) {
  return {(u - cam.ox) / cam.fx, (v - cam.oy) / cam.fy, 1.0};
}

struct RayHit {
  double t = 0;        // ray parameter; equals depth z for unit-z rays
  int axis = 0;        // axis of the entered face
  std::size_t box = 0;
};

/// Slab test of a ray from the origin against one box.
inline std::optional<RayHit> intersect(const Vec3& dir, const Box& box) {
  const std::array<double, 3> d{dir.x, dir.y, dir.z}, lo{box.lo.x, box.lo.y, box.lo.z}, hi{box.hi.x, box.hi.y, box.hi.z};
  double t_in = -std::numeric_limits<double>::infinity();
  double t_out = std::numeric_limits<double>::infinity();
  int axis = 0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0) {
      if (lo[a] > 0 || hi[a] < 0) return std::nullopt;
      continue;
    }
    double t0 = lo[a] / d[a], t1 = hi[a] / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_in) {
      t_in = t0;
      axis = a;
    }
    t_out = std::min(t_out, t1);
  }
  if (t_in > t_out || !(t_in > 0)) return std::nullopt;
  return RayHit{t_in, axis, 0};
}

inline std::optional<RayHit> nearest_hit(const Scene& scene, const Vec3& dir) {
  std::optional<RayHit> best;
  for (std::size_t n = 0; n < scene.boxes.size(); ++n) {
    auto h = intersect(dir, scene.boxes[n]);
    if (h && (!best || h->t < best->t)) {
      best = h;
      best->box = n;
    }
  }
  return best;
}

/// d = b f_x / z at the nearest box along each pixel ray; 0 where no box is hit.
inline DisparityMap render_disparity(const Scene& scene, const StereoCamera& cam) {
  cam.validate();
  DisparityMap dm(cam.width, cam.height);
  for (std::uint32_t v = 0; v < cam.height; ++v)
    for (std::uint32_t u = 0; u < cam.width; ++u) {
      if (auto h = nearest_hit(scene, pixel_ray(cam, u, v))) {
        dm.at(u, v) = static_cast<float>(cam.baseline * cam.fx / h->t);
      }
    }
  return dm;
}

/// (3, H, W) shading: box albedo modulated by face orientation and depth,
/// over a sky / ground backdrop split at the principal row.
inline Tensor render_image(const Scene& scene, const StereoCamera& cam) {
  const auto H = cam.height, W = cam.width;
  Tensor img({3, H, W});
  constexpr std::array<double, 3> face_shade{0.75, 0.55, 1.0};
  for (std::uint32_t v = 0; v < H; ++v)
    for (std::uint32_t u = 0; u < W; ++u) {
      std::array<double, 3> rgb;
      if (auto h = nearest_hit(scene, pixel_ray(cam, u, v))) {
        const auto& b = scene.boxes[h->box];
        const double s = face_shade[h->axis] / (1.0 + 0.05 * h->t);
        rgb = {b.albedo[0] * s, b.albedo[1] * s, b.albedo[2] * s};
      } else if (v < cam.oy) {
        rgb = {0.55, 0.7, 0.9};
      } else {
        rgb = {0.3, 0.3, 0.3};
      }
      for (int c = 0; c < 3; ++c) img[(std::size_t(c) * H + v) * W + u] = rgb[c];
    }
  return img;
}

enum class GtMode { volume, surface };

/// Ground truth straight from box geometry, independent of rendering.
/// volume: voxel center inside a box. surface: voxel center within half a
/// voxel diagonal of a box's boundary.
inline OccupancyGrid gt_occupancy(const Scene& scene, const VoxelGridSpec& grid, GtMode mode) {
  grid.validate();
  OccupancyGrid out(grid);
  const double half_diag =
      0.5 * std::sqrt(grid.voxel_size(0) * grid.voxel_size(0) + grid.voxel_size(1) * grid.voxel_size(1) +
                      grid.voxel_size(2) * grid.voxel_size(2));
  for (std::uint32_t i = 0; i < grid.dims[0]; ++i)
    for (std::uint32_t j = 0; j < grid.dims[1]; ++j)
      for (std::uint32_t k = 0; k < grid.dims[2]; ++k) {
        const Vec3 c{grid.center(0, i), grid.center(1, j), grid.center(2, k)};
        for (const auto& b : scene.boxes) {
          const bool on = mode == GtMode::volume ? b.contains(c) : b.surface_distance(c) <= half_diag;
          if (on) {
            out.set(i, j, k);
            break;
          }
        }
      }
  return out;
}

/// One dataset item: the scene it came from, its RGB rendering, disparity,
/// and volume-mode ground truth.
struct RenderedSample {
  Scene scene;
  Tensor image;
  DisparityMap disparity;
  OccupancyGrid gt;

  friend bool operator==(const RenderedSample&, const RenderedSample&) = default;
};

inline RenderedSample render_sample(const SceneSpec& spec) {
  RenderedSample s;
  s.scene = generate_scene(spec);
  s.image = render_image(s.scene, spec.camera);
  s.disparity = render_disparity(s.scene, spec.camera);
  s.gt = gt_occupancy(s.scene, spec.grid, GtMode::volume);
  return s;
}

/// Sample `index` of a dataset rooted at `spec.seed`.
inline RenderedSample render_dataset_sample(SceneSpec spec, std::uint64_t index) {
  spec.seed = derive_seed(spec.seed, index);
  return render_sample(spec);
}

struct ConsistencyReport {
  std::size_t points = 0;
  std::size_t dropped = 0;
  std::size_t occupied = 0;
  std::size_t violations = 0;

  bool consistent() const { return violations == 0; }
};

/// Voxelizes the back-projected disparity and counts occupied voxels that
/// fall outside the one-voxel dilation of the surface ground truth.
inline ConsistencyReport pipeline_consistency(const RenderedSample& sample, const StereoCamera& cam,
                                              const VoxelGridSpec& grid) {
  const auto cloud = disparity_to_pointcloud(cam, sample.disparity);
  const auto vox = voxelize(cloud, grid);
  const auto allowed = dilate(gt_occupancy(sample.scene, grid, GtMode::surface), 1);
  ConsistencyReport r;
  r.points = cloud.size();
  r.dropped = vox.dropped;
  for (std::size_t n = 0; n < vox.grid.cells.size(); ++n) {
    if (!vox.grid.cells[n]) continue;
    ++r.occupied;
    if (!allowed.cells[n]) ++r.violations;
  }
  return r;
}

}  // namespace octran
