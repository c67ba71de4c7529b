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
#include <charconv>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "octran/binary_io.hpp"
#include "octran/geometry_config.hpp"
#include "octran/geometry_io.hpp"
#include "octran/kv.hpp"
#include "octran/scenes.hpp"
#include "octran/tensor_io.hpp"

namespace octran {

// ---------------------------------------------------------------------------
// PFM

/// Grayscale Portable Float Map: "Pf\n<w> <h>\n-1.0\n", then float32
/// little-endian rows from the bottom row up.
inline io::Bytes encode_pfm(const DisparityMap& dm) {
  dm.validate();
  io::Bytes out;
  io::put_bytes(out, "Pf\n" + std::to_string(dm.width) + " " + std::to_string(dm.height) + "\n-1.0\n");
  out.reserve(out.size() + dm.values.size() * 4);
  for (std::uint32_t r = 0; r < dm.height; ++r) {
    const std::uint32_t v = dm.height - 1 - r;
    for (std::uint32_t u = 0; u < dm.width; ++u) io::put<float>(out, dm.at(u, v));
  }
  return out;
}

namespace detail {
inline bool parse_u32(std::string_view s, std::uint32_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}
}  // namespace detail

inline DisparityMap decode_pfm(io::Reader& in) {
  const auto magic = in.line("PFM magic");
  if (magic == "PF") fail(ErrorCode::unsupported_channels, "three-channel PFM is not a disparity map");
  if (magic != "Pf") fail(ErrorCode::bad_magic, "expected Pf");

  const auto dims = in.line("PFM dims");
  const auto sp = dims.find(' ');
  std::uint32_t w = 0, h = 0;
  if (sp == std::string::npos || !detail::parse_u32(std::string_view(dims).substr(0, sp), w) ||
      !detail::parse_u32(std::string_view(dims).substr(sp + 1), h) || w == 0 || h == 0) {
    fail(ErrorCode::bad_dims, "PFM dims line '" + dims + "'");
  }

  const auto scale_text = in.line("PFM scale");
  double scale = 0;
  auto [p, ec] = std::from_chars(scale_text.data(), scale_text.data() + scale_text.size(), scale);
  if (ec != std::errc() || p != scale_text.data() + scale_text.size() || scale == 0 || !std::isfinite(scale)) {
    fail(ErrorCode::bad_dims, "PFM scale line '" + scale_text + "'");
  }
  const bool big_endian = scale > 0;

  DisparityMap dm(w, h);
  auto payload = in.take(std::size_t(w) * h * 4, "PFM payload");
  std::size_t n = 0;
  for (std::uint32_t r = 0; r < h; ++r) {
    const std::uint32_t v = h - 1 - r;
    for (std::uint32_t u = 0; u < w; ++u, ++n) {
      std::uint32_t bits;
      std::memcpy(&bits, payload.data() + 4 * n, 4);
      if (big_endian) bits = __builtin_bswap32(bits);
      dm.at(u, v) = std::bit_cast<float>(bits);
    }
  }
  dm.validate();
  return dm;
}

inline DisparityMap decode_pfm(std::span<const std::uint8_t> bytes) {
  io::Reader in(bytes);
  auto dm = decode_pfm(in);
  if (!in.done()) fail(ErrorCode::bad_dims, "trailing bytes after PFM payload");
  return dm;
}

inline void save_pfm(const DisparityMap& dm, const std::string& path) { io::write_file_atomic(path, encode_pfm(dm)); }

inline DisparityMap load_pfm(const std::string& path) { return decode_pfm(io::read_file(path)); }

// ---------------------------------------------------------------------------
// Scene spec text

inline std::string scene_spec_to_text(const SceneSpec& s) {
  std::string out = "seed=" + std::to_string(s.seed) + "\nmin_boxes=" + std::to_string(s.min_boxes) +
                    "\nmax_boxes=" + std::to_string(s.max_boxes) + "\n";
  auto vec = [&](const std::string& key, const Vec3& v) {
    out += key + "_x=" + format_real(v.x) + "\n" + key + "_y=" + format_real(v.y) + "\n" + key + "_z=" +
           format_real(v.z) + "\n";
  };
  vec("min_size", s.min_size);
  vec("max_size", s.max_size);
  vec("volume_lo", s.volume_lo);
  vec("volume_hi", s.volume_hi);
  out += camera_to_text(s.camera);
  out += grid_to_text(s.grid);
  return out;
}

/// Missing keys keep the desk defaults of SceneSpec; unknown keys are rejected.
inline SceneSpec scene_spec_from_kv(const KeyValues& kv) {
  SceneSpec s;
  s.seed = static_cast<std::uint64_t>(kv.integer_or("seed", static_cast<long long>(s.seed)));
  s.min_boxes = static_cast<std::uint32_t>(kv.integer_or("min_boxes", s.min_boxes));
  s.max_boxes = static_cast<std::uint32_t>(kv.integer_or("max_boxes", s.max_boxes));
  auto vec = [&](const std::string& key, Vec3& v) {
    v.x = kv.real_or(key + "_x", v.x);
    v.y = kv.real_or(key + "_y", v.y);
    v.z = kv.real_or(key + "_z", v.z);
  };
  vec("min_size", s.min_size);
  vec("max_size", s.max_size);
  vec("volume_lo", s.volume_lo);
  vec("volume_hi", s.volume_hi);
  s.camera = camera_from_kv(kv, s.camera);
  s.grid = grid_from_kv(kv, s.grid);
  kv.reject_unused();
  s.validate();
  return s;
}

inline SceneSpec parse_scene_spec(const std::string& text, const std::string& origin = "<scene spec>") {
  return scene_spec_from_kv(KeyValues::parse(text, origin));
}

// ---------------------------------------------------------------------------
// Shard

inline constexpr std::string_view kShardMagic = "OCTRAN-SHARD 1";

/// Text manifest (camera, grid, per-sample box lists and blob sizes), an
/// "end" line, then per sample: PFM disparity, OCGR ground truth, TNSR image.
inline io::Bytes encode_shard(const std::vector<RenderedSample>& samples, const StereoCamera& cam,
                              const VoxelGridSpec& grid) {
  if (samples.empty()) fail(ErrorCode::invalid_argument, "a shard needs at least one sample");
  std::string manifest = std::string(kShardMagic) + "\ncount " + std::to_string(samples.size()) + "\n";
  manifest += "camera " + format_real(cam.fx) + " " + format_real(cam.fy) + " " + format_real(cam.ox) + " " +
              format_real(cam.oy) + " " + format_real(cam.baseline) + " " + std::to_string(cam.width) + " " +
              std::to_string(cam.height) + "\n";
  manifest += "grid";
  for (auto d : grid.dims) manifest += " " + std::to_string(d);
  for (auto e : grid.extent) manifest += " " + format_real(e);
  for (auto o : grid.origin) manifest += " " + format_real(o);
  manifest += "\n";

  io::Bytes payload;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& s = samples[n];
    if (s.disparity.width != cam.width || s.disparity.height != cam.height) {
      fail(ErrorCode::manifest_mismatch, "sample " + std::to_string(n) + " disparity does not match the camera");
    }
    if (!(s.gt.spec == grid)) fail(ErrorCode::manifest_mismatch, "sample " + std::to_string(n) + " grid differs");
    const auto pfm = encode_pfm(s.disparity);
    const auto ocgr = encode_ocgr(s.gt);
    const auto img = encode_tnsr(s.image);
    manifest += "sample " + std::to_string(n) + " boxes " + std::to_string(s.scene.boxes.size()) + " pfm " +
                std::to_string(pfm.size()) + " ocgr " + std::to_string(ocgr.size()) + " image " +
                std::to_string(img.size()) + "\n";
    for (const auto& b : s.scene.boxes) {
      manifest += "box";
      for (double v : {b.lo.x, b.lo.y, b.lo.z, b.hi.x, b.hi.y, b.hi.z, b.albedo[0], b.albedo[1], b.albedo[2]}) {
        manifest += " " + format_real(v);
      }
      manifest += "\n";
    }
    payload.insert(payload.end(), pfm.begin(), pfm.end());
    payload.insert(payload.end(), ocgr.begin(), ocgr.end());
    payload.insert(payload.end(), img.begin(), img.end());
  }
  manifest += "end\n";
  io::Bytes out;
  io::put_bytes(out, manifest);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

struct Shard {
  StereoCamera camera;
  VoxelGridSpec grid;
  std::vector<RenderedSample> samples;

  friend bool operator==(const Shard&, const Shard&) = default;
};

namespace detail {

/// Whitespace-split manifest line whose first token must be `tag`.
class ManifestLine {
 public:
  ManifestLine(io::Reader& in, const std::string& tag) : in_(in.line("shard manifest")) {
    std::string t;
    in_ >> t;
    if (t != tag) fail(ErrorCode::manifest_mismatch, "expected '" + tag + "' line, got '" + t + "'");
  }

  double real() {
    std::string t = token();
    double v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) fail(ErrorCode::manifest_mismatch, "bad number '" + t + "'");
    return v;
  }

  std::uint64_t count() {
    std::string t = token();
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) fail(ErrorCode::manifest_mismatch, "bad count '" + t + "'");
    return v;
  }

  void expect(const std::string& word) {
    if (token() != word) fail(ErrorCode::manifest_mismatch, "expected '" + word + "'");
  }

  void finish() {
    std::string extra;
    if (in_ >> extra) fail(ErrorCode::manifest_mismatch, "unexpected '" + extra + "'");
  }

 private:
  std::string token() {
    std::string t;
    if (!(in_ >> t)) fail(ErrorCode::manifest_mismatch, "manifest line ends early");
    return t;
  }

  std::istringstream in_;
};

}  // namespace detail

inline Shard decode_shard(std::span<const std::uint8_t> bytes) {
  io::Reader in(bytes);
  if (in.line("shard magic") != kShardMagic) fail(ErrorCode::bad_magic, "not an octran shard");
  Shard shard;
  std::uint64_t count = 0;
  {
    detail::ManifestLine l(in, "count");
    count = l.count();
    l.finish();
  }
  if (count == 0) fail(ErrorCode::manifest_mismatch, "shard declares zero samples");
  {
    detail::ManifestLine l(in, "camera");
    auto& c = shard.camera;
    c.fx = l.real();
    c.fy = l.real();
    c.ox = l.real();
    c.oy = l.real();
    c.baseline = l.real();
    c.width = static_cast<std::uint32_t>(l.count());
    c.height = static_cast<std::uint32_t>(l.count());
    l.finish();
  }
  {
    detail::ManifestLine l(in, "grid");
    for (auto& d : shard.grid.dims) d = static_cast<std::uint32_t>(l.count());
    for (auto& e : shard.grid.extent) e = l.real();
    for (auto& o : shard.grid.origin) o = l.real();
    l.finish();
  }
  struct Sizes {
    std::uint64_t pfm, ocgr, image;
  };
  std::vector<Sizes> sizes;
  for (std::uint64_t n = 0; n < count; ++n) {
    detail::ManifestLine l(in, "sample");
    if (l.count() != n) fail(ErrorCode::manifest_mismatch, "samples out of order");
    l.expect("boxes");
    const auto boxes = l.count();
    Sizes s{};
    l.expect("pfm");
    s.pfm = l.count();
    l.expect("ocgr");
    s.ocgr = l.count();
    l.expect("image");
    s.image = l.count();
    l.finish();
    sizes.push_back(s);
    RenderedSample sample;
    for (std::uint64_t b = 0; b < boxes; ++b) {
      detail::ManifestLine bl(in, "box");
      Box box;
      box.lo = {bl.real(), bl.real(), bl.real()};
      box.hi = {bl.real(), bl.real(), bl.real()};
      box.albedo = {bl.real(), bl.real(), bl.real()};
      bl.finish();
      sample.scene.boxes.push_back(box);
    }
    shard.samples.push_back(std::move(sample));
  }
  if (in.line("shard manifest") != "end") fail(ErrorCode::manifest_mismatch, "missing manifest terminator");

  std::uint64_t expected = 0;
  for (const auto& s : sizes) expected += s.pfm + s.ocgr + s.image;
  if (in.remaining() < expected) {
    fail(ErrorCode::truncated, "shard payload has " + std::to_string(in.remaining()) + " of " +
                                   std::to_string(expected) + " bytes");
  }
  if (in.remaining() > expected) fail(ErrorCode::manifest_mismatch, "shard payload longer than its manifest");

  for (std::size_t n = 0; n < shard.samples.size(); ++n) {
    auto& s = shard.samples[n];
    s.disparity = decode_pfm(in.take(sizes[n].pfm, "shard PFM"));
    s.gt = decode_ocgr(in.take(sizes[n].ocgr, "shard OCGR"));
    s.image = decode_tnsr(in.take(sizes[n].image, "shard image"));
    if (s.disparity.width != shard.camera.width || s.disparity.height != shard.camera.height) {
      fail(ErrorCode::manifest_mismatch, "sample " + std::to_string(n) + " disparity size differs from camera");
    }
    if (!(s.gt.spec == shard.grid)) fail(ErrorCode::manifest_mismatch, "sample " + std::to_string(n) + " grid differs");
  }
  return shard;
}

inline void write_shard(const std::vector<RenderedSample>& samples, const StereoCamera& cam, const VoxelGridSpec& grid,
                        const std::string& path) {
  io::write_file_atomic(path, encode_shard(samples, cam, grid));
}

inline Shard read_shard(const std::string& path) { return decode_shard(io::read_file(path)); }

}  // namespace octran
