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
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "octran/attention.hpp"
#include "octran/autodiff.hpp"
#include "octran/geometry.hpp"
#include "octran/geometry_config.hpp"
#include "octran/kv.hpp"
#include "octran/parameters.hpp"

namespace octran {

enum class Variant { B, V0, V1 };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::B: return "B";
    case Variant::V0: return "V0";
    case Variant::V1: return "V1";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "B") return Variant::B;
  if (s == "V0") return Variant::V0;
  if (s == "V1") return Variant::V1;
  fail(ErrorCode::invalid_config, "unknown variant '" + s + "' (expected B, V0 or V1)");
}

/// Everything that determines a model and its training run. The first block
/// mirrors the ablation hyperparameters (cross heads, cross dim per head,
/// loss mask probability, learning rate, batch size, max frequency, depth,
/// latent heads, latent dim per head); the rest sizes the desk-scale network.
struct OctranConfig {
  Variant variant = Variant::V0;
  std::size_t ch = 8;
  std::size_t cdh = 32;
  double lmp = 0.5;
  double lr = 1e-4;
  std::size_t bs = 2;
  double mf = 500000;
  std::size_t d = 4;
  std::size_t lh = 8;
  std::size_t ldh = 32;

  std::size_t chunks = 4;
  bool shared_chunk_weights = true;
  std::size_t input_h = 32;
  std::size_t input_w = 128;
  VoxelGridSpec grid = VoxelGridSpec::forward_facing({16, 4, 16}, {16.0, 4.0, 16.0});
  std::size_t latent_count = 32;
  std::size_t latent_dim = 64;
  std::size_t channels = 32;
  std::size_t decoder_stages = 3;
  std::size_t num_bands = 6;
  std::uint64_t seed = 42;

  AttentionConfig attention() const { return {ch, cdh, lh, ldh, d}; }
  FourierEncoding fourier() const { return {mf, num_bands, true}; }

  /// Grid block decoded by one perceiver: the whole grid, or one lateral
  /// slab per chunk for V1.
  std::array<std::size_t, 3> slab_dims() const {
    std::array<std::size_t, 3> s{grid.dims[0], grid.dims[1], grid.dims[2]};
    if (variant == Variant::V1) s[0] /= chunks;
    return s;
  }

  /// Pyramid levels whose width the chunk count divides (all levels except for V1).
  std::vector<std::size_t> chunked_levels() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < kPyramidLevels; ++j) {
      if (variant != Variant::V1 || pyramid_level_shape(input_h, input_w, j)[1] % chunks == 0) out.push_back(j);
    }
    return out;
  }

  void validate() const;

  friend bool operator==(const OctranConfig&, const OctranConfig&) = default;
};

/// Reference hyperparameter rows for each variant on top of the desk-scale network sizes.
inline OctranConfig reference_config(Variant v) {
  OctranConfig c;
  c.variant = v;
  switch (v) {
    case Variant::B:
      c.ch = 1, c.cdh = 64, c.lmp = 0.0, c.lr = 0.001, c.bs = 1, c.mf = 1000, c.d = 1, c.lh = 8, c.ldh = 32;
      break;
    case Variant::V0:
      c.ch = 8, c.cdh = 32, c.lmp = 0.5, c.lr = 0.0001, c.bs = 2, c.mf = 500000, c.d = 4, c.lh = 8, c.ldh = 32;
      break;
    case Variant::V1:
      c.ch = 8, c.cdh = 32, c.lmp = 0.5, c.lr = 0.0001, c.bs = 4, c.mf = 500000, c.d = 8, c.lh = 4, c.ldh = 32;
      break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Decoder geometry

/// Transpose-conv plan from a coarse grid to `target`: each axis is doubled
/// in the last u_a stages, where u_a is how often 2 divides the axis (capped
/// at the stage count).
struct DecoderPlan {
  std::array<std::size_t, 3> coarse{};
  std::vector<Index3> strides;
  std::size_t input_channels = 0;
};

inline DecoderPlan plan_decoder(std::array<std::size_t, 3> target, std::size_t stages, std::size_t latent_values) {
  DecoderPlan plan;
  std::array<std::size_t, 3> ups{};
  for (int a = 0; a < 3; ++a) {
    std::size_t n = target[a], u = 0;
    while (u < stages && n % 2 == 0) {
      n /= 2;
      ++u;
    }
    ups[a] = u;
    plan.coarse[a] = n;
  }
  for (std::size_t s = 0; s < stages; ++s) {
    Index3 st{};
    for (int a = 0; a < 3; ++a) st[a] = s + ups[a] >= stages ? 2 : 1;
    plan.strides.push_back(st);
  }
  const auto cells = plan.coarse[0] * plan.coarse[1] * plan.coarse[2];
  if (latent_values % cells != 0) {
    fail(ErrorCode::invalid_config, std::to_string(latent_values) + " latent values do not reshape onto a coarse grid of " +
                                        std::to_string(cells) + " cells");
  }
  plan.input_channels = latent_values / cells;
  return plan;
}

inline void OctranConfig::validate() const {
  grid.validate();
  attention().validate();
  fourier().validate();
  if (!(lmp >= 0 && lmp <= 1)) fail(ErrorCode::invalid_config, "lmp must lie in [0, 1]");
  if (!(lr >= 0) || !std::isfinite(lr)) fail(ErrorCode::invalid_config, "lr must be >= 0");
  if (bs < 1) fail(ErrorCode::invalid_config, "bs must be >= 1");
  if (input_h < 1 || input_w < 1) fail(ErrorCode::invalid_config, "input size must be positive");
  if (latent_count < 1 || latent_dim < 1 || channels < 1) fail(ErrorCode::invalid_config, "model sizes must be >= 1");
  if (variant != Variant::B && (input_h % 32 != 0 || input_w % 32 != 0)) {
    fail(ErrorCode::invalid_config, "backbone input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                                        " is not divisible by 32");
  }
  if (variant == Variant::V1) {
    if (chunks < 1) fail(ErrorCode::invalid_config, "chunks must be >= 1");
    if (grid.dims[0] % chunks != 0) {
      fail(ErrorCode::invalid_config, std::to_string(chunks) + " chunks do not divide grid width " +
                                          std::to_string(grid.dims[0]));
    }
    if (chunked_levels().empty()) fail(ErrorCode::invalid_config, "no pyramid level is divisible into chunks");
  }
  plan_decoder(slab_dims(), decoder_stages, latent_count * latent_dim);
}

// ---------------------------------------------------------------------------
// Parameters

inline void init_conv2d(ParameterStore& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                        Rng& rng) {
  ps.add(name + ".w", gaussian({out, in, k, k}, std::sqrt(2.0 / double(in * k * k)), rng));
  ps.add(name + ".b", Tensor({out}));
}

inline void init_conv_transpose3d(ParameterStore& ps, const std::string& name, std::size_t in, std::size_t out,
                                  Index3 k, Rng& rng) {
  // kernel == stride, so every output voxel sees exactly `in` inputs
  ps.add(name + ".w", gaussian({in, out, k[0], k[1], k[2]}, std::sqrt(2.0 / double(in)), rng));
  ps.add(name + ".b", Tensor({out}));
}

inline std::size_t token_feature_dim(const OctranConfig& cfg) {
  const auto pos_dims = cfg.variant == Variant::B ? 2 : 3;
  const auto feat = cfg.variant == Variant::B ? 3 : cfg.channels;
  return feat + cfg.fourier().feature_count(pos_dims);
}

/// Deterministic initialization from `cfg.seed`.
inline ParameterStore init_parameters(const OctranConfig& cfg) {
  cfg.validate();
  ParameterStore ps;
  Rng rng(cfg.seed);
  const auto c = cfg.channels;
  if (cfg.variant != Variant::B) {
    init_conv2d(ps, "backbone.stem", 3, c, 3, rng);
    init_conv2d(ps, "backbone.down4", c, c, 3, rng);
    init_conv2d(ps, "backbone.res4a", c, c, 3, rng);
    init_conv2d(ps, "backbone.res4b", c, c, 3, rng);
    for (int j = 3; j >= 0; --j) init_conv2d(ps, "backbone.down" + std::to_string(j), c, c, 3, rng);
    for (std::size_t j = 0; j < kPyramidLevels; ++j) init_conv2d(ps, "fpn.lateral" + std::to_string(j), c, c, 1, rng);
  }
  PerceiverShape shape{cfg.latent_count, cfg.latent_dim, token_feature_dim(cfg), 2, cfg.attention()};
  if (cfg.variant == Variant::V1 && !cfg.shared_chunk_weights) {
    for (std::size_t i = 0; i < cfg.chunks; ++i) init_perceiver(ps, "perceiver.chunk" + std::to_string(i), shape, rng);
  } else {
    init_perceiver(ps, "perceiver", shape, rng);
  }
  const auto plan = plan_decoder(cfg.slab_dims(), cfg.decoder_stages, cfg.latent_count * cfg.latent_dim);
  std::size_t in = plan.input_channels;
  for (std::size_t s = 0; s < plan.strides.size(); ++s) {
    init_conv_transpose3d(ps, "decoder.up" + std::to_string(s), in, c, plan.strides[s], rng);
    in = c;
  }
  init_conv_transpose3d(ps, "decoder.head", in, 1, {1, 1, 1}, rng);
  return ps;
}

// ---------------------------------------------------------------------------
// Forward

namespace detail {

inline Var conv_block(const BoundParameters& p, const std::string& name, Var x, std::size_t stride, std::size_t pad) {
  return ad::add_channel_bias(ad::conv2d(x, p[name + ".w"], stride, pad), p[name + ".b"]);
}

/// Nearest-neighbour resize of (C, h, w) to (C, th, tw).
inline Var resize_nearest(Var x, std::size_t th, std::size_t tw) {
  const auto& s = x.shape();
  const auto c = s[0], h = s[1], w = s[2];
  std::vector<std::size_t> idx;
  idx.reserve(c * th * tw);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t r = 0; r < th; ++r)
      for (std::size_t q = 0; q < tw; ++q) idx.push_back((k * h + r * h / th) * w + q * w / tw);
  return ad::gather(x, std::move(idx), {c, th, tw});
}

/// (C, h, w) features to (h*w, C) tokens with position features appended.
inline Var to_tokens(Tape& tape, Var features, const Tensor& positions) {
  const auto& s = features.shape();
  auto tokens = ad::reshape(ad::permute(features, {1, 2, 0}), {s[1] * s[2], s[0]});
  return ad::concat({tokens, tape.constant(positions)}, 1);
}

}  // namespace detail

/// Pyramid levels j = 0..4 (coarse to fine) as traced (C, h_j, w_j) values.
inline std::vector<Var> backbone_forward(const BoundParameters& p, Var image) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != 3) fail(ErrorCode::shape_mismatch, "image must be (3, H, W), got " + shape_str(s));
  if (s[1] % 32 != 0 || s[2] % 32 != 0) {
    fail(ErrorCode::invalid_argument, "backbone input " + shape_str(s) + " is not divisible by 32");
  }
  using detail::conv_block;
  Var x = ad::relu(conv_block(p, "backbone.stem", image, 2, 1));
  x = ad::relu(conv_block(p, "backbone.down4", x, 2, 1));
  auto r = ad::relu(conv_block(p, "backbone.res4a", x, 1, 1));
  x = ad::relu(ad::add(x, conv_block(p, "backbone.res4b", r, 1, 1)));
  std::array<Var, kPyramidLevels> c{};
  c[4] = x;
  for (int j = 3; j >= 0; --j) c[j] = ad::relu(conv_block(p, "backbone.down" + std::to_string(j), c[j + 1], 2, 1));
  std::vector<Var> levels(kPyramidLevels);
  for (std::size_t j = 0; j < kPyramidLevels; ++j) {
    auto lat = conv_block(p, "fpn.lateral" + std::to_string(j), c[j], 1, 0);
    if (j == 0) {
      levels[j] = lat;
    } else {
      const auto& ls = lat.shape();
      levels[j] = ad::add(lat, detail::resize_nearest(levels[j - 1], ls[1], ls[2]));
    }
  }
  return levels;
}

/// Untraced pyramid for one (3, H, W) image.
inline FeaturePyramid backbone_pyramid(const ParameterStore& params, const Tensor& image) {
  Tape tape;
  BoundParameters p(tape, params);
  FeaturePyramid out;
  for (auto v : backbone_forward(p, tape.constant(image))) out.levels.push_back(v.value());
  return out;
}

inline Var decode(const BoundParameters& p, const OctranConfig& cfg, Var latents) {
  const auto target = cfg.slab_dims();
  const auto plan = plan_decoder(target, cfg.decoder_stages, cfg.latent_count * cfg.latent_dim);
  Var x = ad::reshape(latents, {plan.input_channels, plan.coarse[0], plan.coarse[1], plan.coarse[2]});
  for (std::size_t s = 0; s < plan.strides.size(); ++s) {
    const auto name = "decoder.up" + std::to_string(s);
    x = ad::relu(ad::add_channel_bias(ad::conv_transpose3d(x, p[name + ".w"], plan.strides[s], {0, 0, 0}),
                                      p[name + ".b"]));
  }
  x = ad::add_channel_bias(ad::conv_transpose3d(x, p["decoder.head.w"], {1, 1, 1}, {0, 0, 0}), p["decoder.head.b"]);
  return ad::reshape(x, {target[0], target[1], target[2]});
}

/// Occupancy logits shaped (N_x, N_y, N_z) for one (3, H, W) image.
inline Var forward(const BoundParameters& p, const OctranConfig& cfg, Var image) {
  cfg.validate();
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != 3 || s[1] != cfg.input_h || s[2] != cfg.input_w) {
    fail(ErrorCode::shape_mismatch, "image " + shape_str(s) + " vs configured (3x" + std::to_string(cfg.input_h) + "x" +
                                        std::to_string(cfg.input_w) + ")");
  }
  Tape& tape = p.tape();
  const auto enc = cfg.fourier();
  const auto att = cfg.attention();
  if (cfg.variant == Variant::B) {
    auto tokens = detail::to_tokens(tape, image, grid_position_features(cfg.input_h, cfg.input_w, enc));
    return decode(p, cfg, perceiver_block(p, "perceiver", tokens, att));
  }
  auto levels = backbone_forward(p, image);
  auto level_coord = [](std::size_t j) { return std::array<double, 1>{normalized_coord(j, kPyramidLevels)}; };
  if (cfg.variant == Variant::V0) {
    std::vector<Var> parts;
    for (std::size_t j = 0; j < kPyramidLevels; ++j) {
      const auto& ls = levels[j].shape();
      const auto lc = level_coord(j);
      parts.push_back(detail::to_tokens(tape, levels[j], grid_position_features(ls[1], ls[2], enc, lc)));
    }
    return decode(p, cfg, perceiver_block(p, "perceiver", ad::concat(parts, 0), att));
  }
  // V1: chunk i of every divisible level feeds one perceiver pass whose
  // latents decode lateral slab i; slabs are stacked along x.
  const auto used = cfg.chunked_levels();
  std::vector<Var> slabs;
  for (std::size_t i = 0; i < cfg.chunks; ++i) {
    std::vector<Var> parts;
    for (auto j : used) {
      const auto& ls = levels[j].shape();
      auto chunk = ad::gather(levels[j], chunk_gather_indices(ls, cfg.chunks, i), {ls[0], ls[1], ls[2] / cfg.chunks});
      const auto lc = level_coord(j);
      parts.push_back(detail::to_tokens(tape, chunk, grid_position_features(ls[1], ls[2] / cfg.chunks, enc, lc)));
    }
    const auto prefix = cfg.shared_chunk_weights ? std::string("perceiver") : "perceiver.chunk" + std::to_string(i);
    slabs.push_back(decode(p, cfg, perceiver_block(p, prefix, ad::concat(parts, 0), att)));
  }
  return ad::concat(slabs, 0);
}

inline Tensor predict_logits(const OctranConfig& cfg, const ParameterStore& params, const Tensor& image) {
  Tape tape;
  BoundParameters p(tape, params);
  return forward(p, cfg, tape.constant(image)).value();
}

// ---------------------------------------------------------------------------
// Loss, training, evaluation

struct Example {
  Tensor image;  // (3, H, W)
  OccupancyGrid target;
};

inline Tensor occupancy_tensor(const OccupancyGrid& g) {
  Tensor t({g.spec.dims[0], g.spec.dims[1], g.spec.dims[2]});
  for (std::size_t i = 0; i < g.cells.size(); ++i) t[i] = g.cells[i];
  return t;
}

/// 1 for every voxel in the loss, 0 for dropped ones. Occupied voxels are
/// always kept; each empty voxel is dropped with probability `lmp`, drawing
/// one uniform per empty voxel in index order.
inline Tensor loss_mask(const OccupancyGrid& target, double lmp, Rng& rng) {
  if (!(lmp >= 0 && lmp <= 1)) fail(ErrorCode::invalid_argument, "lmp must lie in [0, 1]");
  Tensor w({target.spec.dims[0], target.spec.dims[1], target.spec.dims[2]}, 1.0);
  if (lmp == 0) return w;
  for (std::size_t i = 0; i < target.cells.size(); ++i) {
    if (target.cells[i] == 0 && rng.uniform() < lmp) w[i] = 0;
  }
  return w;
}

inline Var masked_bce_loss(Var logits, const OccupancyGrid& target, double lmp, Rng& rng) {
  const Shape expect{target.spec.dims[0], target.spec.dims[1], target.spec.dims[2]};
  if (logits.shape() != expect) {
    fail(ErrorCode::shape_mismatch, "logits " + shape_str(logits.shape()) + " vs grid " + shape_str(expect));
  }
  return ad::bce_with_logits(logits, occupancy_tensor(target), loss_mask(target, lmp, rng));
}

struct TrainState {
  ParameterStore params;
  std::vector<Tensor> adam_m;
  std::vector<Tensor> adam_v;
  std::uint64_t step = 0;
  Rng rng;
  std::vector<std::size_t> order;  // current epoch's sample order
  std::size_t cursor = 0;
  std::vector<double> loss_history;
  std::vector<std::pair<std::uint64_t, double>> iou_history;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

inline TrainState init_train_state(const OctranConfig& cfg) {
  TrainState s;
  s.params = init_parameters(cfg);
  for (const auto& v : s.params.values()) {
    s.adam_m.emplace_back(v.shape());
    s.adam_v.emplace_back(v.shape());
  }
  s.rng = Rng(derive_seed(cfg.seed, 0x7261696eull));
  return s;
}

/// Indices of the next `bs` samples; reshuffles (Fisher-Yates on the state
/// RNG) whenever an epoch is exhausted.
inline std::vector<std::size_t> next_batch(TrainState& s, std::size_t dataset_size, std::size_t bs) {
  if (dataset_size == 0) fail(ErrorCode::invalid_argument, "empty dataset");
  std::vector<std::size_t> out;
  while (out.size() < bs) {
    if (s.order.size() != dataset_size || s.cursor >= s.order.size()) {
      s.order.resize(dataset_size);
      for (std::size_t i = 0; i < dataset_size; ++i) s.order[i] = i;
      for (std::size_t i = dataset_size; i-- > 1;) std::swap(s.order[i], s.order[s.rng.below(i + 1)]);
      s.cursor = 0;
    }
    out.push_back(s.order[s.cursor++]);
  }
  return out;
}

struct LossAndGrads {
  double loss = 0;
  std::vector<Tensor> grads;
};

/// Mean masked loss over `batch` and its gradient for every parameter.
inline LossAndGrads loss_and_gradients(const OctranConfig& cfg, const ParameterStore& params,
                                       std::span<const Example* const> batch, std::span<const Tensor> masks) {
  Tape tape;
  BoundParameters p(tape, params);
  std::vector<Var> losses;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto logits = forward(p, cfg, tape.constant(batch[b]->image));
    losses.push_back(ad::bce_with_logits(logits, occupancy_tensor(batch[b]->target), masks[b]));
  }
  Var total = losses[0];
  for (std::size_t b = 1; b < losses.size(); ++b) total = ad::add(total, losses[b]);
  total = ad::scale(total, 1.0 / double(losses.size()));
  tape.backward(total);
  return {total.value().item(), p.gradients()};
}

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One Adam step on the masked loss of `batch` (size must equal cfg.bs).
inline TrainState train_step(TrainState state, std::span<const Example* const> batch, const OctranConfig& cfg) {
  if (batch.size() != cfg.bs) {
    fail(ErrorCode::invalid_argument, "batch of " + std::to_string(batch.size()) + " vs bs=" + std::to_string(cfg.bs));
  }
  std::vector<Tensor> masks;
  for (const auto* ex : batch) masks.push_back(loss_mask(ex->target, cfg.lmp, state.rng));
  auto lg = loss_and_gradients(cfg, state.params, batch, masks);
  if (!std::isfinite(lg.loss)) {
    fail(ErrorCode::diverged, "non-finite loss at step " + std::to_string(state.step + 1));
  }
  const double t = double(state.step + 1);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  auto& values = state.params.values();
  for (std::size_t n = 0; n < values.size(); ++n) {
    auto& w = values[n];
    auto& m = state.adam_m[n];
    auto& v = state.adam_v[n];
    const auto& g = lg.grads[n];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = kAdamBeta1 * m[i] + (1 - kAdamBeta1) * g[i];
      v[i] = kAdamBeta2 * v[i] + (1 - kAdamBeta2) * g[i] * g[i];
      w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
    }
  }
  state.step += 1;
  state.loss_history.push_back(lg.loss);
  return state;
}

inline OccupancyGrid binarize(const Tensor& logits, const VoxelGridSpec& spec, double threshold = 0.5) {
  OccupancyGrid g(spec);
  if (logits.numel() != g.cells.size()) fail(ErrorCode::shape_mismatch, "logits vs grid cell count");
  for (std::size_t i = 0; i < logits.numel(); ++i) g.cells[i] = 1.0 / (1.0 + std::exp(-logits[i])) > threshold;
  return g;
}

/// Mean per-sample IoU of thresholded predictions against the targets.
inline double evaluate(const OctranConfig& cfg, const ParameterStore& params, std::span<const Example> dataset,
                       double threshold = 0.5) {
  if (dataset.empty()) fail(ErrorCode::invalid_argument, "empty evaluation set");
  double acc = 0;
  for (const auto& ex : dataset) acc += iou(binarize(predict_logits(cfg, params, ex.image), cfg.grid, threshold), ex.target);
  return acc / double(dataset.size());
}

/// Mean masked loss over the whole set with a mask stream seeded by `mask_seed`.
inline double dataset_loss(const OctranConfig& cfg, const ParameterStore& params, std::span<const Example> dataset,
                           std::uint64_t mask_seed) {
  if (dataset.empty()) fail(ErrorCode::invalid_argument, "empty evaluation set");
  Rng rng(mask_seed);
  double acc = 0;
  for (const auto& ex : dataset) {
    Tape tape;
    BoundParameters p(tape, params);
    acc += masked_bce_loss(forward(p, cfg, tape.constant(ex.image)), ex.target, cfg.lmp, rng).value().item();
  }
  return acc / double(dataset.size());
}

/// Runs train_step until `state.step == until_step`. IoU over `data` is
/// recorded at every multiple of `eval_every` (0 disables), so a resumed run
/// records the same history as an uninterrupted one.
inline TrainState train_until(TrainState state, const OctranConfig& cfg, std::span<const Example> data,
                              std::uint64_t until_step, std::uint64_t eval_every = 0) {
  std::vector<const Example*> batch;
  while (state.step < until_step) {
    batch.clear();
    for (auto i : next_batch(state, data.size(), cfg.bs)) batch.push_back(&data[i]);
    state = train_step(std::move(state), batch, cfg);
    if (eval_every != 0 && state.step % eval_every == 0) {
      state.iou_history.emplace_back(state.step, evaluate(cfg, state.params, data));
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// Config text

inline std::string config_to_text(const OctranConfig& c) {
  std::string out;
  auto line = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  line("variant", to_string(c.variant));
  line("ch", std::to_string(c.ch));
  line("cdh", std::to_string(c.cdh));
  line("lmp", format_real(c.lmp));
  line("lr", format_real(c.lr));
  line("bs", std::to_string(c.bs));
  line("mf", format_real(c.mf));
  line("d", std::to_string(c.d));
  line("lh", std::to_string(c.lh));
  line("ldh", std::to_string(c.ldh));
  line("chunks", std::to_string(c.chunks));
  line("shared_chunk_weights", c.shared_chunk_weights ? "1" : "0");
  line("input_h", std::to_string(c.input_h));
  line("input_w", std::to_string(c.input_w));
  out += grid_to_text(c.grid);
  line("latent_count", std::to_string(c.latent_count));
  line("latent_dim", std::to_string(c.latent_dim));
  line("channels", std::to_string(c.channels));
  line("decoder_stages", std::to_string(c.decoder_stages));
  line("num_bands", std::to_string(c.num_bands));
  line("seed", std::to_string(c.seed));
  return out;
}

/// Missing keys fall back to the reference row of the named variant.
inline OctranConfig config_from_kv(const KeyValues& kv) {
  OctranConfig c = reference_config(parse_variant(kv.str_or("variant", "V0")));
  auto size = [&](const std::string& k, std::size_t fallback) {
    const auto v = kv.integer_or(k, static_cast<long long>(fallback));
    if (v < 0) fail(ErrorCode::invalid_config, "key '" + k + "' must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.ch = size("ch", c.ch);
  c.cdh = size("cdh", c.cdh);
  c.lmp = kv.real_or("lmp", c.lmp);
  c.lr = kv.real_or("lr", c.lr);
  c.bs = size("bs", c.bs);
  c.mf = kv.real_or("mf", c.mf);
  c.d = size("d", c.d);
  c.lh = size("lh", c.lh);
  c.ldh = size("ldh", c.ldh);
  c.chunks = size("chunks", c.chunks);
  c.shared_chunk_weights = size("shared_chunk_weights", c.shared_chunk_weights ? 1 : 0) != 0;
  c.input_h = size("input_h", c.input_h);
  c.input_w = size("input_w", c.input_w);
  c.grid = grid_from_kv(kv, c.grid);
  c.latent_count = size("latent_count", c.latent_count);
  c.latent_dim = size("latent_dim", c.latent_dim);
  c.channels = size("channels", c.channels);
  c.decoder_stages = size("decoder_stages", c.decoder_stages);
  c.num_bands = size("num_bands", c.num_bands);
  c.seed = static_cast<std::uint64_t>(kv.integer_or("seed", static_cast<long long>(c.seed)));
  kv.reject_unused();
  c.validate();
  return c;
}

inline OctranConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  return config_from_kv(KeyValues::parse(text, origin));
}

}  // namespace octran
