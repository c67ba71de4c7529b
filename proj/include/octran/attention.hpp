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

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "octran/autodiff.hpp"
#include "octran/parameters.hpp"
#include "octran/tensor.hpp"

namespace octran {

/// Head layout of the perceiver: cross-attention heads and their width,
/// latent self-attention heads and their width, and the number of latent
/// self-attention blocks.
struct AttentionConfig {
  std::size_t cross_heads = 1;
  std::size_t cross_dim_per_head = 64;
  std::size_t latent_heads = 8;
  std::size_t latent_dim_per_head = 32;
  std::size_t depth = 1;

  void validate() const {
    if (cross_heads < 1 || cross_dim_per_head < 1 || latent_heads < 1 || latent_dim_per_head < 1) {
      fail(ErrorCode::invalid_config, "attention heads and head widths must be >= 1");
    }
  }

  std::size_t cross_width() const { return cross_heads * cross_dim_per_head; }
  std::size_t latent_width() const { return latent_heads * latent_dim_per_head; }
};

/// Plain multi-head attention, softmax(Q K^T / sqrt(d_k)) V per head.
inline Tensor qkv_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads = 1,
                            std::string_view label = "attention") {
  return scaled_dot_product_attention(q, k, v, heads, label).output;
}

/// Score MACs of latents (N) attending over M inputs with total key width d.
constexpr std::uint64_t cross_attention_score_macs(std::uint64_t n, std::uint64_t m, std::uint64_t d) {
  return n * m * d;
}

/// Score MACs of M inputs attending over themselves with total key width d.
constexpr std::uint64_t self_attention_score_macs(std::uint64_t m, std::uint64_t d) { return m * m * d; }

// ---------------------------------------------------------------------------
// Fourier position features

struct FourierEncoding {
  double max_frequency = 10;
  std::size_t num_bands = 6;
  bool include_input = true;

  void validate() const {
    if (!(max_frequency > 0)) fail(ErrorCode::invalid_config, "max frequency must be > 0");
    if (num_bands < 1) fail(ErrorCode::invalid_config, "num_bands must be >= 1");
  }

  /// Geometric from 1 to max_frequency / 2.
  std::vector<double> bands() const {
    std::vector<double> f(num_bands, 1.0);
    const double top = max_frequency / 2;
    for (std::size_t b = 1; b < num_bands; ++b) f[b] = std::pow(top, double(b) / double(num_bands - 1));
    return f;
  }

  std::size_t feature_count(std::size_t dims) const { return dims * 2 * num_bands + (include_input ? dims : 0); }
};

/// For each coordinate p: sin(pi f_b p) for every band, then cos(pi f_b p);
/// the raw coordinates follow when `include_input` is set.
inline std::vector<double> fourier_encode(std::span<const double> positions, const FourierEncoding& enc) {
  enc.validate();
  const auto f = enc.bands();
  std::vector<double> out;
  out.reserve(enc.feature_count(positions.size()));
  for (double p : positions) {
    if (!(p >= -1 && p <= 1)) fail(ErrorCode::invalid_argument, "position outside [-1, 1]");
    for (double fb : f) out.push_back(std::sin(std::numbers::pi * fb * p));
    for (double fb : f) out.push_back(std::cos(std::numbers::pi * fb * p));
  }
  if (enc.include_input) out.insert(out.end(), positions.begin(), positions.end());
  return out;
}

/// Center of cell i among n, mapped into [-1, 1].
inline double normalized_coord(std::size_t i, std::size_t n) { return -1.0 + (2.0 * double(i) + 1.0) / double(n); }

/// (rows*cols, features) table for a row-major grid of tokens; `extra`
/// coordinates (already in [-1, 1]) are appended to every token's position.
inline Tensor grid_position_features(std::size_t rows, std::size_t cols, const FourierEncoding& enc,
                                     std::span<const double> extra = {}) {
  const auto dims = 2 + extra.size();
  const auto width = enc.feature_count(dims);
  Tensor out({rows * cols, width});
  std::vector<double> pos(dims);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      pos[0] = normalized_coord(r, rows);
      pos[1] = normalized_coord(c, cols);
      std::copy(extra.begin(), extra.end(), pos.begin() + 2);
      auto feat = fourier_encode(pos, enc);
      std::copy(feat.begin(), feat.end(), out.data().begin() + (r * cols + c) * width);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Feature pyramid and column chunking

inline constexpr std::size_t kPyramidLevels = 5;

/// Level j of the pyramid for an H x W input has stride 2^(6-j), rounded up:
/// at 128 x 512 this is 2^(j+1) x 2^(j+3).
inline std::array<std::size_t, 2> pyramid_level_shape(std::size_t height, std::size_t width, std::size_t level) {
  if (level >= kPyramidLevels) fail(ErrorCode::invalid_argument, "pyramid level " + std::to_string(level));
  const std::size_t stride = std::size_t{1} << (6 - level);
  return {(height + stride - 1) / stride, (width + stride - 1) / stride};
}

/// Multi-resolution features, level j stored channels-first (C, h_j, w_j).
struct FeaturePyramid {
  std::vector<Tensor> levels;

  std::size_t channels() const { return levels.empty() ? 0 : levels.front().dim(0); }

  void validate() const {
    if (levels.empty()) fail(ErrorCode::invalid_argument, "empty pyramid");
    for (const auto& l : levels) {
      if (l.rank() != 3 || l.dim(0) != channels()) {
        fail(ErrorCode::shape_mismatch, "pyramid level " + shape_str(l.shape()) + " has inconsistent channels");
      }
    }
  }
};

/// Column range [begin, end) of chunk i of C over a layer of `width` columns.
inline std::array<std::size_t, 2> chunk_columns(std::size_t width, std::size_t chunks, std::size_t i) {
  if (chunks < 1 || width % chunks != 0) {
    fail(ErrorCode::invalid_argument, std::to_string(chunks) + " chunks do not divide layer width " +
                                          std::to_string(width));
  }
  if (i >= chunks) fail(ErrorCode::invalid_argument, "chunk index out of range");
  return {i * width / chunks, (i + 1) * width / chunks};
}

/// Flat source indices of chunk i for a (C, h, w) layer; output shape (C, h, w / chunks).
inline std::vector<std::size_t> chunk_gather_indices(const Shape& layer, std::size_t chunks, std::size_t i) {
  const auto [b0, b1] = chunk_columns(layer[2], chunks, i);
  std::vector<std::size_t> idx;
  idx.reserve(layer[0] * layer[1] * (b1 - b0));
  for (std::size_t c = 0; c < layer[0]; ++c)
    for (std::size_t a = 0; a < layer[1]; ++a)
      for (std::size_t b = b0; b < b1; ++b) idx.push_back((c * layer[1] + a) * layer[2] + b);
  return idx;
}

/// result[i][n] is chunk i of the n-th selected level: every row a and the
/// columns [i/C * w, (i+1)/C * w). An empty `levels` selects all levels.
inline std::vector<std::vector<Tensor>> chunk_features(const FeaturePyramid& pyramid, std::size_t chunks,
                                                       std::vector<std::size_t> levels = {}) {
  pyramid.validate();
  if (levels.empty()) {
    for (std::size_t j = 0; j < pyramid.levels.size(); ++j) levels.push_back(j);
  }
  for (auto j : levels) {
    if (j >= pyramid.levels.size()) fail(ErrorCode::invalid_argument, "pyramid level out of range");
    chunk_columns(pyramid.levels[j].dim(2), chunks, 0);
  }
  std::vector<std::vector<Tensor>> out(chunks);
  for (std::size_t i = 0; i < chunks; ++i)
    for (auto j : levels) {
      const auto& layer = pyramid.levels[j];
      out[i].push_back(
          gather(layer, chunk_gather_indices(layer.shape(), chunks, i), {layer.dim(0), layer.dim(1), layer.dim(2) / chunks}));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Perceiver block

/// Sizes of one perceiver: N latents of `latent_dim` channels attending over
/// inputs with `input_dim` channels.
struct PerceiverShape {
  std::size_t latent_count = 32;
  std::size_t latent_dim = 64;
  std::size_t input_dim = 0;
  std::size_t mlp_ratio = 2;
  AttentionConfig heads;
};

inline void init_perceiver(ParameterStore& ps, const std::string& prefix, const PerceiverShape& s, Rng& rng) {
  s.heads.validate();
  if (s.latent_count < 1 || s.latent_dim < 1 || s.input_dim < 1) {
    fail(ErrorCode::invalid_config, "perceiver sizes must be >= 1");
  }
  const auto hidden = s.latent_dim * s.mlp_ratio;
  ps.add(prefix + ".latents", gaussian({s.latent_count, s.latent_dim}, 0.02, rng));
  nn::init_layer_norm(ps, prefix + ".cross.ln_latent", s.latent_dim);
  nn::init_layer_norm(ps, prefix + ".cross.ln_input", s.input_dim);
  nn::init_linear(ps, prefix + ".cross.q", s.latent_dim, s.heads.cross_width(), rng);
  nn::init_linear(ps, prefix + ".cross.k", s.input_dim, s.heads.cross_width(), rng);
  nn::init_linear(ps, prefix + ".cross.v", s.input_dim, s.heads.cross_width(), rng);
  nn::init_linear(ps, prefix + ".cross.out", s.heads.cross_width(), s.latent_dim, rng);
  nn::init_layer_norm(ps, prefix + ".cross.ln_mlp", s.latent_dim);
  nn::init_linear(ps, prefix + ".cross.mlp1", s.latent_dim, hidden, rng);
  nn::init_linear(ps, prefix + ".cross.mlp2", hidden, s.latent_dim, rng);
  for (std::size_t d = 0; d < s.heads.depth; ++d) {
    const auto b = prefix + ".self" + std::to_string(d);
    nn::init_layer_norm(ps, b + ".ln", s.latent_dim);
    nn::init_linear(ps, b + ".q", s.latent_dim, s.heads.latent_width(), rng);
    nn::init_linear(ps, b + ".k", s.latent_dim, s.heads.latent_width(), rng);
    nn::init_linear(ps, b + ".v", s.latent_dim, s.heads.latent_width(), rng);
    nn::init_linear(ps, b + ".out", s.heads.latent_width(), s.latent_dim, rng);
    nn::init_layer_norm(ps, b + ".ln_mlp", s.latent_dim);
    nn::init_linear(ps, b + ".mlp1", s.latent_dim, hidden, rng);
    nn::init_linear(ps, b + ".mlp2", hidden, s.latent_dim, rng);
  }
  nn::init_layer_norm(ps, prefix + ".ln_out", s.latent_dim);
}

namespace detail {
inline Var mlp_residual(const BoundParameters& p, const std::string& b, const std::string& ln, Var x) {
  auto h = nn::layer_norm(p, ln, x);
  h = ad::relu(nn::linear(p, b + ".mlp1", h));
  return ad::add(x, nn::linear(p, b + ".mlp2", h));
}
}  // namespace detail

/// Latents (queries) cross-attend over `inputs` (M x input_dim, keys and
/// values), then `depth` latent self-attention blocks. Pre-norm residual
/// blocks, each followed by a two-layer MLP. Returns N x latent_dim.
/// Score MACs land in the ledger under "<label>.cross.scores" and
/// "<label>.latent.scores".
inline Var perceiver_block(const BoundParameters& p, const std::string& prefix, Var inputs,
                           const AttentionConfig& cfg, const std::string& label = "perceiver") {
  cfg.validate();
  const Var latents = p[prefix + ".latents"];
  if (inputs.shape().size() != 2 || inputs.shape()[1] != p[prefix + ".cross.k.w"].shape()[0]) {
    fail(ErrorCode::shape_mismatch, "perceiver inputs " + shape_str(inputs.shape()) + " vs key projection " +
                                        shape_str(p[prefix + ".cross.k.w"].shape()));
  }
  const auto c = prefix + ".cross";
  auto lq = nn::layer_norm(p, c + ".ln_latent", latents);
  auto kv = nn::layer_norm(p, c + ".ln_input", inputs);
  auto q = nn::linear(p, c + ".q", lq);
  auto k = nn::linear(p, c + ".k", kv);
  auto v = nn::linear(p, c + ".v", kv);
  auto att = ad::attention(q, k, v, cfg.cross_heads, label + ".cross");
  Var x = ad::add(latents, nn::linear(p, c + ".out", att));
  x = detail::mlp_residual(p, c, c + ".ln_mlp", x);
  for (std::size_t d = 0; d < cfg.depth; ++d) {
    const auto b = prefix + ".self" + std::to_string(d);
    auto h = nn::layer_norm(p, b + ".ln", x);
    auto sq = nn::linear(p, b + ".q", h);
    auto sk = nn::linear(p, b + ".k", h);
    auto sv = nn::linear(p, b + ".v", h);
    auto sa = ad::attention(sq, sk, sv, cfg.latent_heads, label + ".latent");
    x = ad::add(x, nn::linear(p, b + ".out", sa));
    x = detail::mlp_residual(p, b, b + ".ln_mlp", x);
  }
  return nn::layer_norm(p, prefix + ".ln_out", x);
}

}  // namespace octran
