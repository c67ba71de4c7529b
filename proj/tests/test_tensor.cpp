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
#include <limits>
#include <numbers>

#include "octran/parameters.hpp"
#include "octran/tensor.hpp"

using namespace octran;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian(std::move(shape), 1.0, rng);
}

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::io;
}

// Gather-form reference: out[o][y][x] = sum_c,i,j x[c][y*s+i-p][x*s+j-p] k[o][c][i][j].
Tensor naive_conv2d(const Tensor& x, const Tensor& k, std::size_t s, std::size_t p) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t Ho = (H + 2 * p - kh) / s + 1, Wo = (W + 2 * p - kw) / s + 1;
  Tensor out({O, Ho, Wo});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xo = 0; xo < Wo; ++xo) {
        double acc = 0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long yy = long(y * s + i) - long(p), xx = long(xo * s + j) - long(p);
              if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
              acc += x.at({c, std::size_t(yy), std::size_t(xx)}) * k.at({o, c, i, j});
            }
        out.at({o, y, xo}) = acc;
      }
  return out;
}

// Gather-form reference for the transposed convolution: an output cell
// collects every input cell whose stride-scaled position plus a kernel
// offset lands on it.
Tensor naive_conv_transpose3d(const Tensor& x, const Tensor& k, Index3 s, Index3 p) {
  const std::size_t C = x.dim(0), O = k.dim(1);
  const Index3 in{x.dim(1), x.dim(2), x.dim(3)}, kk{k.dim(2), k.dim(3), k.dim(4)};
  Index3 od{};
  for (int a = 0; a < 3; ++a) od[a] = (in[a] - 1) * s[a] - 2 * p[a] + kk[a];
  Tensor out({O, od[0], od[1], od[2]});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t z0 = 0; z0 < od[0]; ++z0)
      for (std::size_t z1 = 0; z1 < od[1]; ++z1)
        for (std::size_t z2 = 0; z2 < od[2]; ++z2) {
          double acc = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t a = 0; a < in[0]; ++a)
              for (std::size_t b = 0; b < in[1]; ++b)
                for (std::size_t e = 0; e < in[2]; ++e) {
                  const long i0 = long(z0 + p[0]) - long(a * s[0]);
                  const long i1 = long(z1 + p[1]) - long(b * s[1]);
                  const long i2 = long(z2 + p[2]) - long(e * s[2]);
                  if (i0 < 0 || i1 < 0 || i2 < 0 || i0 >= long(kk[0]) || i1 >= long(kk[1]) || i2 >= long(kk[2])) continue;
                  acc += x.at({c, a, b, e}) * k.at({c, o, std::size_t(i0), std::size_t(i1), std::size_t(i2)});
                }
          out.at({o, z0, z1, z2}) = acc;
        }
  return out;
}

void expect_close(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(Tensor, ConstructionAndIndexing) {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at({1, 0}), 4);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(Tensor().rank(), 0u);
  EXPECT_EQ(code_of([] { Tensor({2, 0}); }), ErrorCode::shape_mismatch);
  EXPECT_EQ(code_of([] { Tensor({2, 2}, std::vector<double>{1, 2, 3}); }), ErrorCode::shape_mismatch);
}

TEST(Matmul, IdentityAndLedger) {
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1;
  const auto x = random_tensor({3, 5}, 1);
  EXPECT_EQ(matmul(eye, x), x);

  FlopLedger ledger;
  {
    FlopRecording rec(ledger);
    (void)matmul(random_tensor({2, 3}, 2), random_tensor({3, 4}, 3));
  }
  EXPECT_EQ(ledger.macs("matmul"), 24u);
  EXPECT_EQ(ledger.total(), 24u);
}

TEST(Matmul, AgainstTripleLoop) {
  const auto a = random_tensor({4, 7}, 4), b = random_tensor({7, 3}, 5);
  Tensor expect({4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 7; ++k) expect.at({i, j}) += a.at({i, k}) * b.at({k, j});
  expect_close(matmul(a, b), expect, 1e-13);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    (void)matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x5"), std::string::npos) << msg;
  }
}

TEST(Permute, InverseRestores) {
  const auto x = random_tensor({2, 3, 4}, 6);
  const auto y = permute(x, {2, 0, 1});
  EXPECT_EQ(y.shape(), (Shape{4, 2, 3}));
  EXPECT_EQ(y.at({3, 1, 2}), x.at({1, 2, 3}));
  EXPECT_EQ(permute(y, {1, 2, 0}), x);
}

TEST(Concat, AlongMiddleAxis) {
  Tensor a({2, 1, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor b({2, 2, 2}, std::vector<double>{5, 6, 7, 8, 9, 10, 11, 12});
  const auto c = concat<double>({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 3, 2}));
  EXPECT_EQ(c.storage(), (std::vector<double>{1, 2, 5, 6, 7, 8, 3, 4, 9, 10, 11, 12}));
}

TEST(Reductions, SumAndMean) {
  Tensor t({4}, std::vector<double>{1, 2, 3, 6});
  EXPECT_EQ(sum(t), 12);
  EXPECT_EQ(mean(t).item(), 3);
}

TEST(Softmax, UniformRow) {
  const auto s = softmax(Tensor({1, 5}, 2.5), 1);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(s[i], 0.2);
}

TEST(Softmax, HandComputedPair) {
  const auto s = softmax(Tensor({2}, std::vector<double>{0, std::log(3.0)}), 0);
  EXPECT_NEAR(s[0], 0.25, 1e-15);
  EXPECT_NEAR(s[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvarianceAndRowSums) {
  const auto x = random_tensor({3, 4, 5}, 7);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const auto s = softmax(x, axis);
    const auto t = softmax(map(x, [](double v) { return v + 1234.5; }), axis);
    expect_close(s, t, 1e-12);
  }
  const auto s = softmax(x, 2);
  for (std::size_t r = 0; r < 12; ++r) {
    double acc = 0;
    for (std::size_t j = 0; j < 5; ++j) acc += s[r * 5 + j];
    EXPECT_NEAR(acc, 1.0, 1e-12);
  }
}

TEST(Softmax, LargeInputsStayFinite) {
  const auto s = softmax(Tensor({3}, std::vector<double>{1000, 1001, -1000}), 0);
  for (auto v : s.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(s[1] / s[0], std::numbers::e, 1e-12);
}

TEST(Conv2d, OutputSizeFormula) {
  EXPECT_EQ(conv_out_size(32, 3, 2, 1), 16u);
  EXPECT_EQ(conv_out_size(7, 3, 2, 0), 3u);
  EXPECT_EQ(code_of([] { conv_out_size(2, 5, 1, 1); }), ErrorCode::invalid_geometry);
}

TEST(Conv2d, OneByOneIsChannelMatmul) {
  const auto x = random_tensor({3, 4, 5}, 8), k = random_tensor({2, 3, 1, 1}, 9);
  const auto y = conv2d(x, k, 1, 0);
  const auto expect = matmul(k.reshaped({2, 3}), x.reshaped({3, 20})).reshaped({2, 4, 5});
  expect_close(y, expect, 1e-13);
}

TEST(Conv2d, CenteredDeltaIsIdentity) {
  const auto x = random_tensor({2, 5, 6}, 10);
  Tensor k({2, 2, 3, 3});
  k.at({0, 0, 1, 1}) = 1;
  k.at({1, 1, 1, 1}) = 1;
  EXPECT_EQ(conv2d(x, k, 1, 1), x);
}

TEST(Conv2d, MatchesGatherReference) {
  for (auto [s, p] : {std::pair<std::size_t, std::size_t>{1, 0}, {2, 1}, {2, 0}, {3, 2}}) {
    const auto x = random_tensor({3, 7, 9}, 11 + s), k = random_tensor({4, 3, 3, 3}, 12 + p);
    expect_close(conv2d(x, k, s, p), naive_conv2d(x, k, s, p), 1e-12);
  }
}

TEST(ConvTranspose3d, DoublesGrid) {
  const auto x = random_tensor({2, 4, 4, 2}, 13), k = random_tensor({2, 3, 2, 2, 2}, 14);
  const auto y = conv_transpose3d(x, k, {2, 2, 2}, {0, 0, 0});
  EXPECT_EQ(y.shape(), (Shape{3, 8, 8, 4}));
  FlopLedger ledger;
  {
    FlopRecording rec(ledger);
    (void)conv_transpose3d(x, k, {2, 2, 2}, {0, 0, 0});
  }
  EXPECT_EQ(ledger.macs("conv_transpose3d"), 2u * 32 * 3 * 8);
}

TEST(ConvTranspose3d, MatchesGatherReference) {
  const auto x = random_tensor({2, 3, 2, 4}, 15), k = random_tensor({2, 3, 3, 2, 4}, 16);
  for (Index3 s : {Index3{1, 1, 1}, Index3{2, 1, 2}, Index3{2, 2, 3}}) {
    for (Index3 p : {Index3{0, 0, 0}, Index3{1, 0, 1}}) {
      expect_close(conv_transpose3d(x, k, s, p), naive_conv_transpose3d(x, k, s, p), 1e-12);
    }
  }
}

TEST(ConvTranspose3d, InvalidGeometry) {
  EXPECT_EQ(code_of([] { conv_transpose_out_size(1, 1, 1, 1); }), ErrorCode::invalid_geometry);
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  const auto x = random_tensor({4, 9}, 17);
  const auto y = layer_norm(x, Tensor({9}, 1.0), Tensor({9}), 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 9; ++j) mu += y.at({i, j});
    mu /= 9;
    for (std::size_t j = 0; j < 9; ++j) var += (y.at({i, j}) - mu) * (y.at({i, j}) - mu);
    EXPECT_NEAR(mu, 0, 1e-14);
    EXPECT_NEAR(var / 9, 1, 1e-12);
  }
}

TEST(CheckedMode, FlagsNonFinite) {
  const Tensor big({2}, std::vector<double>{1e308, 1e308});
  EXPECT_NO_THROW((void)add(big, big));
  CheckedMode on;
  EXPECT_EQ(code_of([&] { (void)add(big, big); }), ErrorCode::non_finite);
  EXPECT_EQ(code_of([&] { (void)scale(big, 10.0); }), ErrorCode::non_finite);
}

TEST(Determinism, RepeatedOpsAreBitIdentical) {
  const auto x = random_tensor({3, 9, 11}, 18), k = random_tensor({4, 3, 3, 3}, 19);
  EXPECT_EQ(conv2d(x, k, 2, 1), conv2d(x, k, 2, 1));
  const auto q = random_tensor({6, 8}, 20), kv = random_tensor({10, 8}, 21);
  EXPECT_EQ(scaled_dot_product_attention(q, kv, kv, 2).output, scaled_dot_product_attention(q, kv, kv, 2).output);
}

TEST(FloatTensor, SinglePrecisionKernels) {
  TensorF a({2, 2}, std::vector<float>{1, 2, 3, 4});
  const auto b = matmul(a, a);
  EXPECT_EQ(b.storage(), (std::vector<float>{7, 10, 15, 22}));
  const auto s = softmax(a, 1);
  EXPECT_NEAR(s[0] + s[1], 1.0f, 1e-6f);
}
