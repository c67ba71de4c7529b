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

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <optional>
#include <set>

#include "gradcheck.hpp"
#include "octran/attention.hpp"

using namespace octran;
using namespace octran::testing;

namespace {

Tensor rows(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

/// Tokens (M x dim) with rows reordered by `perm`.
Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  const auto w = t.dim(1);
  Tensor out(t.shape());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < w; ++c) out[i * w + c] = t[perm[i] * w + c];
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i-- > 1;) std::swap(p[i], p[rng.below(i + 1)]);
  return p;
}

}  // namespace

TEST(QkvAttention, SingleKeyReturnsValueRow) {
  const auto v = rows(1, 3, {0.5, -2, 7});
  const auto out = qkv_attention(random_input({4, 2}, 1), random_input({1, 2}, 2), v);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.at({i, c}), v[c]);
}

TEST(QkvAttention, EqualScoresAverageValues) {
  const auto out = qkv_attention(rows(1, 2, {1, 1}), rows(2, 2, {1, 0, 0, 1}), rows(2, 2, {2, 4, 6, 8}));
  EXPECT_DOUBLE_EQ(out[0], 4);
  EXPECT_DOUBLE_EQ(out[1], 6);
}

TEST(QkvAttention, HandComputedTwoKeyExample) {
  const auto out = qkv_attention(rows(1, 2, {1, 0}), rows(2, 2, {1, 0, 0, 1}), rows(2, 2, {1, 0, 0, 1}));
  const double e = std::exp(1 / std::sqrt(2.0));
  const double sigma = e / (e + 1);
  EXPECT_NEAR(out[0], sigma, 1e-12);
  EXPECT_NEAR(out[1], 1 - sigma, 1e-12);
  EXPECT_NEAR(out[0], 0.6698, 5e-5);
}

TEST(QkvAttention, HeadsAreIndependentSlices) {
  const auto q = random_input({3, 4}, 3), k = random_input({5, 4}, 4), v = random_input({5, 6}, 5);
  const auto both = qkv_attention(q, k, v, 2);
  auto cols = [](const Tensor& t, std::size_t b, std::size_t e) {
    Tensor out({t.dim(0), e - b});
    for (std::size_t i = 0; i < t.dim(0); ++i)
      for (std::size_t c = b; c < e; ++c) out.at({i, c - b}) = t.at({i, c});
    return out;
  };
  const auto h0 = qkv_attention(cols(q, 0, 2), cols(k, 0, 2), cols(v, 0, 3));
  const auto h1 = qkv_attention(cols(q, 2, 4), cols(k, 2, 4), cols(v, 3, 6));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(both.at({i, c}), h0.at({i, c}), 1e-14);
      EXPECT_NEAR(both.at({i, c + 3}), h1.at({i, c}), 1e-14);
    }
}

TEST(QkvAttention, WeightRowsSumToOne) {
  const auto r = scaled_dot_product_attention(random_input({7, 6}, 6, 3.0), random_input({11, 6}, 7, 3.0),
                                              random_input({11, 6}, 8), 3);
  for (std::size_t row = 0; row < 3 * 7; ++row) {
    double acc = 0;
    for (std::size_t j = 0; j < 11; ++j) acc += r.weights[row * 11 + j];
    EXPECT_NEAR(acc, 1.0, 1e-12);
  }
}

TEST(QkvAttention, DimensionMismatch) {
  EXPECT_THROW((void)qkv_attention(Tensor({2, 3}), Tensor({2, 4}), Tensor({2, 4})), Error);
  EXPECT_THROW((void)qkv_attention(Tensor({2, 4}), Tensor({2, 4}), Tensor({3, 4})), Error);
}

TEST(AttentionLedger, CrossVersusSelfScoreMacs) {
  const std::size_t m = 64, n = 8, d = 16;
  const auto latents = random_input({n, d}, 9), inputs = random_input({m, d}, 10);
  FlopLedger ledger;
  {
    FlopRecording rec(ledger);
    (void)qkv_attention(latents, inputs, inputs, 1, "cross");
    (void)qkv_attention(inputs, inputs, inputs, 1, "self");
  }
  EXPECT_EQ(ledger.macs("cross.scores"), 8192u);
  EXPECT_EQ(ledger.macs("self.scores"), 65536u);
  EXPECT_EQ(ledger.macs("cross.scores"), cross_attention_score_macs(n, m, d));
  EXPECT_EQ(ledger.macs("self.scores"), self_attention_score_macs(m, d));
}

TEST(Fourier, ZeroPosition) {
  const FourierEncoding enc{64, 5, false};
  const double p = 0;
  const auto f = fourier_encode(std::span(&p, 1), enc);
  ASSERT_EQ(f.size(), 10u);
  for (std::size_t b = 0; b < 5; ++b) {
    EXPECT_EQ(f[b], 0.0);
    EXPECT_EQ(f[5 + b], 1.0);
  }
}

TEST(Fourier, SingleBand) {
  const FourierEncoding enc{2, 1, false};
  EXPECT_EQ(enc.bands(), std::vector<double>{1.0});
  const double p = 0.3;
  const auto f = fourier_encode(std::span(&p, 1), enc);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_DOUBLE_EQ(f[0], std::sin(std::numbers::pi * 0.3));
  EXPECT_DOUBLE_EQ(f[1], std::cos(std::numbers::pi * 0.3));
}

TEST(Fourier, GeometricBandsAndLength) {
  const FourierEncoding enc{500000, 6, true};
  const auto b = enc.bands();
  EXPECT_EQ(b.front(), 1.0);
  EXPECT_NEAR(b.back(), 250000, 1e-6);
  for (std::size_t i = 1; i + 1 < b.size(); ++i) EXPECT_NEAR(b[i] * b[i], b[i - 1] * b[i + 1], 1e-6 * b[i] * b[i]);
  const std::vector<double> pos{0.1, -0.7, 1.0};
  const auto f = fourier_encode(pos, enc);
  EXPECT_EQ(f.size(), 3u * 12 + 3);
  EXPECT_EQ(f.size(), enc.feature_count(3));
  EXPECT_EQ(f[36], 0.1);
  EXPECT_EQ(f[38], 1.0);
  EXPECT_EQ(FourierEncoding({10, 4, false}).feature_count(2), 16u);
}

TEST(Fourier, RejectsOutOfRange) {
  const double p = 1.5;
  EXPECT_THROW((void)fourier_encode(std::span(&p, 1), FourierEncoding{}), Error);
}

TEST(Pyramid, ShapeLawAtReferenceInput) {
  for (std::size_t j = 0; j < kPyramidLevels; ++j) {
    const auto s = pyramid_level_shape(128, 512, j);
    EXPECT_EQ(s[0], std::size_t{1} << (j + 1));
    EXPECT_EQ(s[1], std::size_t{1} << (j + 3));
  }
  const auto l1 = pyramid_level_shape(128, 512, 1);
  EXPECT_EQ(l1[0], 4u);
  EXPECT_EQ(l1[1], 16u);
}

TEST(Pyramid, DeskInput) {
  const std::array<std::array<std::size_t, 2>, 5> expect{{{1, 2}, {1, 4}, {2, 8}, {4, 16}, {8, 32}}};
  for (std::size_t j = 0; j < kPyramidLevels; ++j) EXPECT_EQ(pyramid_level_shape(32, 128, j), expect[j]);
}

TEST(Chunking, SubstitutedExample) {
  EXPECT_EQ(chunk_columns(16, 4, 1), (std::array<std::size_t, 2>{4, 8}));
  FeaturePyramid p;
  for (std::size_t j = 0; j < kPyramidLevels; ++j) {
    const auto s = pyramid_level_shape(128, 512, j);
    p.levels.push_back(random_input({3, s[0], s[1]}, 20 + j));
  }
  const auto chunks = chunk_features(p, 4);
  const auto& c = chunks[1][1];
  EXPECT_EQ(c.shape(), (Shape{3, 4, 4}));
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(c.at({ch, a, b}), p.levels[1].at({ch, a, 4 + b}));
}

TEST(Chunking, SingleChunkIsWholeLayer) {
  FeaturePyramid p{{random_input({2, 2, 8}, 30), random_input({2, 4, 16}, 31)}};
  const auto chunks = chunk_features(p, 1);
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0][0], p.levels[0]);
  EXPECT_EQ(chunks[0][1], p.levels[1]);
}

TEST(Chunking, ReassemblyAndPartition) {
  FeaturePyramid p;
  for (std::size_t j = 0; j < kPyramidLevels; ++j) {
    const auto s = pyramid_level_shape(128, 512, j);
    p.levels.push_back(random_input({2, s[0], s[1]}, 40 + j));
  }
  for (std::size_t C : {1u, 2u, 4u, 8u}) {
    const auto chunks = chunk_features(p, C);
    for (std::size_t j = 0; j < kPyramidLevels; ++j) {
      std::vector<Tensor> parts;
      std::multiset<std::size_t> seen;
      for (std::size_t i = 0; i < C; ++i) {
        parts.push_back(chunks[i][j]);
        for (auto idx : chunk_gather_indices(p.levels[j].shape(), C, i)) seen.insert(idx);
      }
      EXPECT_EQ(concat(parts, 2), p.levels[j]) << "C=" << C << " j=" << j;
      EXPECT_EQ(seen.size(), p.levels[j].numel());
      for (std::size_t idx = 0; idx < p.levels[j].numel(); ++idx) EXPECT_EQ(seen.count(idx), 1u);
    }
  }
}

TEST(Chunking, NonDividingCountIsAnError) {
  FeaturePyramid p{{random_input({2, 2, 8}, 50)}};
  EXPECT_THROW((void)chunk_features(p, 3), Error);
  EXPECT_THROW((void)chunk_features(p, 16), Error);
}

namespace {

struct PerceiverFixture {
  ParameterStore params;
  AttentionConfig cfg{2, 4, 2, 4, 2};
  std::size_t input_dim = 5;

  PerceiverFixture() {
    Rng rng(7);
    init_perceiver(params, "p", {4, 6, input_dim, 2, cfg}, rng);
  }

  Tensor run(const Tensor& inputs, FlopLedger* ledger = nullptr) const {
    Tape t;
    BoundParameters p(t, params);
    std::optional<FlopRecording> rec;
    if (ledger) rec.emplace(*ledger);
    return perceiver_block(p, "p", t.constant(inputs), cfg).value();
  }
};

}  // namespace

TEST(Perceiver, OutputShapeAndLatentInit) {
  PerceiverFixture f;
  EXPECT_EQ(f.run(random_input({9, 5}, 60)).shape(), (Shape{4, 6}));
  const auto& lat = f.params.get("p.latents");
  double ss = 0;
  for (auto v : lat.data()) ss += v * v;
  EXPECT_LT(std::sqrt(ss / double(lat.numel())), 0.05);
}

TEST(Perceiver, InputPermutationInvariance) {
  PerceiverFixture f;
  const auto x = random_input({13, 5}, 61);
  const auto px = permute_rows(x, shuffled(13, 62));
  {
    CanonicalReductions canon;
    EXPECT_EQ(f.run(x), f.run(px));
  }
  const auto a = f.run(x), b = f.run(px);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Perceiver, CrossScoreMacsAreLinearInInputs) {
  PerceiverFixture f;
  for (std::size_t m : {8u, 16u, 32u}) {
    FlopLedger ledger;
    (void)f.run(random_input({m, 5}, 63 + m), &ledger);
    EXPECT_EQ(ledger.macs("perceiver.cross.scores"), 4 * m * f.cfg.cross_width());
    EXPECT_EQ(ledger.macs("perceiver.latent.scores"), f.cfg.depth * 4 * 4 * f.cfg.latent_width());
  }
}

TEST(Perceiver, ZeroDepthIsOneCrossAttention) {
  ParameterStore ps;
  Rng rng(8);
  const AttentionConfig cfg{1, 4, 1, 4, 0};
  init_perceiver(ps, "p", {3, 4, 5, 2, cfg}, rng);
  for (const auto& n : ps.names()) EXPECT_EQ(n.find(".self"), std::string::npos) << n;
  Tape t;
  BoundParameters p(t, ps);
  FlopLedger ledger;
  {
    FlopRecording rec(ledger);
    (void)perceiver_block(p, "p", t.constant(random_input({7, 5}, 70)), cfg);
  }
  EXPECT_EQ(ledger.macs("perceiver.latent.scores"), 0u);
  EXPECT_EQ(ledger.macs("perceiver.cross.scores"), 3u * 7 * 4);
}

TEST(Perceiver, GradientsMatchFiniteDifferences) {
  ParameterStore ps;
  Rng rng(9);
  const AttentionConfig cfg{2, 2, 1, 3, 1};
  init_perceiver(ps, "p", {2, 3, 3, 2, cfg}, rng);
  // spread the latents so layer norm is well conditioned
  for (auto& v : ps.get("p.latents").data()) v *= 50;
  const auto inputs = random_input({4, 3}, 71);

  auto loss = [&](const ParameterStore& store, std::vector<Tensor>* grads) {
    Tape t;
    BoundParameters p(t, store);
    auto l = random_projection(t, perceiver_block(p, "p", t.constant(inputs), cfg));
    if (grads) {
      t.backward(l);
      *grads = p.gradients();
    }
    return l.value().item();
  };
  std::vector<Tensor> analytic;
  (void)loss(ps, &analytic);

  double worst = 0;
  std::string where;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const auto numeric = finite_difference_grad(
        [&](const Tensor& probe) {
          ParameterStore s = ps;
          s.values()[k] = probe;
          return loss(s, nullptr);
        },
        ps.values()[k]);
    for (std::size_t i = 0; i < numeric.numel(); ++i) {
      const double e = relative_error(analytic[k][i], numeric[i]);
      if (e > worst) {
        worst = e;
        where = ps.names()[k] + "[" + std::to_string(i) + "]";
      }
    }
  }
  EXPECT_LT(worst, 1e-4) << where;
}
