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
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "octran/error.hpp"

namespace octran {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array. A rank-0 tensor (empty shape) holds one scalar.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : data_(1, T(0)) {}

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_dims();
    data_.assign(shape_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_numel(shape_)) {
      fail(ErrorCode::shape_mismatch, "data length " + std::to_string(data_.size()) + " for shape " +
                                          shape_str(shape_));
    }
  }

  static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T item() const {
    if (data_.size() != 1) fail(ErrorCode::shape_mismatch, "item() on shape " + shape_str(shape_));
    return data_[0];
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) fail(ErrorCode::shape_mismatch, "index rank vs " + shape_str(shape_));
    std::size_t off = 0;
    std::size_t a = 0;
    for (auto i : idx) off = off * shape_[a++] + i;
    return off;
  }
  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  BasicTensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      fail(ErrorCode::shape_mismatch, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  void check_dims() const {
    for (auto d : shape_) {
      if (d == 0) fail(ErrorCode::shape_mismatch, "zero dimension in " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

// ---------------------------------------------------------------------------
// FLOP ledger

/// Multiply-accumulate counts per named op for one recording session.
class FlopLedger {
 public:
  void record(std::string_view op, std::uint64_t macs) {
    entries_[std::string(op)] += macs;
    total_ += macs;
  }
  std::uint64_t macs(std::string_view op) const {
    auto it = entries_.find(std::string(op));
    return it == entries_.end() ? 0 : it->second;
  }
  std::uint64_t total() const { return total_; }
  const std::map<std::string, std::uint64_t>& entries() const { return entries_; }
  void reset() {
    entries_.clear();
    total_ = 0;
  }

 private:
  std::map<std::string, std::uint64_t> entries_;
  std::uint64_t total_ = 0;
};

namespace detail {
inline FlopLedger*& active_ledger_slot() {
  thread_local FlopLedger* ledger = nullptr;
  return ledger;
}
inline bool& checked_slot() {
  thread_local bool checked = false;
  return checked;
}
inline bool& canonical_slot() {
  thread_local bool canonical = false;
  return canonical;
}
}  // namespace detail

/// Routes forward-op MAC counts on this thread into `ledger` while alive.
class FlopRecording {
 public:
  explicit FlopRecording(FlopLedger& ledger) : previous_(detail::active_ledger_slot()) {
    detail::active_ledger_slot() = &ledger;
  }
  ~FlopRecording() { detail::active_ledger_slot() = previous_; }
  FlopRecording(const FlopRecording&) = delete;
  FlopRecording& operator=(const FlopRecording&) = delete;

 private:
  FlopLedger* previous_;
};

inline void record_macs(std::string_view op, std::uint64_t macs) {
  if (auto* ledger = detail::active_ledger_slot()) ledger->record(op, macs);
}

/// While alive, every op output on this thread is scanned for NaN/Inf.
class CheckedMode {
 public:
  explicit CheckedMode(bool on = true) : previous_(detail::checked_slot()) { detail::checked_slot() = on; }
  ~CheckedMode() { detail::checked_slot() = previous_; }
  CheckedMode(const CheckedMode&) = delete;
  CheckedMode& operator=(const CheckedMode&) = delete;

 private:
  bool previous_;
};

/// While alive, reductions over the attention key axis sum their terms in
/// sorted order, so results do not depend on the order of input tokens.
class CanonicalReductions {
 public:
  explicit CanonicalReductions(bool on = true) : previous_(detail::canonical_slot()) {
    detail::canonical_slot() = on;
  }
  ~CanonicalReductions() { detail::canonical_slot() = previous_; }
  CanonicalReductions(const CanonicalReductions&) = delete;
  CanonicalReductions& operator=(const CanonicalReductions&) = delete;

 private:
  bool previous_;
};

inline bool canonical_reductions() { return detail::canonical_slot(); }

template <typename T>
const BasicTensor<T>& checked(const BasicTensor<T>& t, std::string_view op) {
  if (detail::checked_slot()) {
    for (const auto& v : t.data()) {
      if (!std::isfinite(v)) fail(ErrorCode::non_finite, std::string(op) + " produced a non-finite value");
    }
  }
  return t;
}

/// Sum of `terms` that depends only on their multiset when canonical
/// reductions are on. Sorts in place.
template <typename T>
T reduce_sum(std::span<T> terms) {
  if (canonical_reductions()) std::sort(terms.begin(), terms.end());
  T acc = 0;
  for (auto v : terms) acc += v;
  return acc;
}

// ---------------------------------------------------------------------------
// Kernels

namespace detail {

inline void require(bool ok, std::string_view op, const Shape& a, const Shape& b, std::string_view why = {}) {
  if (!ok) {
    fail(ErrorCode::shape_mismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b) +
                                        (why.empty() ? "" : " (" + std::string(why) + ")"));
  }
}

/// c (p x r) += a (p x q) * b (q x r), fixed i-k-j order.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    T* crow = c + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = a[i * q + k];
      const T* brow = b + k * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
}

/// c (p x r) += a^T * b, with a stored (q x p).
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t k = 0; k < q; ++k) {
    const T* arow = a + k * p;
    const T* brow = b + k * r;
    for (std::size_t i = 0; i < p; ++i) {
      const T aki = arow[i];
      T* crow = c + i * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aki * brow[j];
    }
  }
}

/// c (p x r) += a * b^T, with b stored (r x q).
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    const T* arow = a + i * q;
    for (std::size_t j = 0; j < r; ++j) {
      const T* brow = b + j * q;
      T acc = 0;
      for (std::size_t k = 0; k < q; ++k) acc += arow[k] * brow[k];
      c[i * r + j] += acc;
    }
  }
}

}  // namespace detail

/// (p x q) * (q x r). Records p*q*r MACs under "matmul".
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul", a.shape(), b.shape());
  const auto p = a.dim(0), q = a.dim(1), r = b.dim(1);
  BasicTensor<T> c({p, r});
  detail::gemm_acc(a.data().data(), b.data().data(), c.data().data(), p, q, r);
  record_macs("matmul", std::uint64_t(p) * q * r);
  return checked(c, "matmul");
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  detail::require(a.rank() == 2, "transpose", a.shape(), {2});
  BasicTensor<T> out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out[j * a.dim(0) + i] = a[i * a.dim(1) + j];
  return out;
}

template <typename T, typename F>
BasicTensor<T> zip_with(const BasicTensor<T>& a, const BasicTensor<T>& b, std::string_view op, F f) {
  detail::require(a.shape() == b.shape(), op, a.shape(), b.shape());
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  return checked(out, op);
}

template <typename T, typename F>
BasicTensor<T> map(const BasicTensor<T>& a, F f) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return zip_with(a, b, "add", [](T x, T y) { return x + y; });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return zip_with(a, b, "mul", [](T x, T y) { return x * y; });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  return checked(map(a, [s](T x) { return x * s; }), "scale");
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  return map(a, [](T x) { return x > 0 ? x : T(0); });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  return a.reshaped(std::move(shape));
}

/// Source flat index for every output element of permute(shape, perm).
inline std::vector<std::size_t> permute_indices(const Shape& shape, const std::vector<std::size_t>& perm,
                                                Shape* out_shape = nullptr) {
  const auto r = shape.size();
  std::vector<bool> seen(r, false);
  detail::require(perm.size() == r, "permute", shape, Shape(perm.begin(), perm.end()), "rank");
  for (auto p : perm) {
    detail::require(p < r && !seen[p], "permute", shape, Shape(perm.begin(), perm.end()), "not a permutation");
    seen[p] = true;
  }
  Shape os(r);
  for (std::size_t a = 0; a < r; ++a) os[a] = shape[perm[a]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t a = r; a-- > 1;) in_strides[a - 1] = in_strides[a] * shape[a];
  const auto n = shape_numel(shape);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t src = 0;
    for (std::size_t a = 0; a < r; ++a) src += counter[a] * in_strides[perm[a]];
    idx[o] = src;
    for (std::size_t a = r; a-- > 0;) {
      if (++counter[a] < os[a]) break;
      counter[a] = 0;
    }
  }
  if (out_shape) *out_shape = os;
  return idx;
}

template <typename T>
BasicTensor<T> gather(const BasicTensor<T>& a, const std::vector<std::size_t>& index, Shape shape) {
  detail::require(index.size() == shape_numel(shape), "gather", a.shape(), shape, "index count");
  BasicTensor<T> out(std::move(shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.numel()) fail(ErrorCode::shape_mismatch, "gather index out of range");
    out[i] = a[index[i]];
  }
  return out;
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<std::size_t>& perm) {
  Shape os;
  auto idx = permute_indices(a.shape(), perm, &os);
  return gather(a, idx, os);
}

/// Concatenates along `axis`; all other dims must agree.
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorCode::shape_mismatch, "concat of zero tensors");
  Shape os = parts[0].shape();
  detail::require(axis < os.size(), "concat", os, {axis}, "axis");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    detail::require(s.size() == os.size(), "concat", os, s, "rank");
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (a != axis) detail::require(s[a] == os[a], "concat", os, s);
    }
    total += s[axis];
  }
  os[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= os[a];
  for (std::size_t a = axis + 1; a < os.size(); ++a) inner *= os[a];
  BasicTensor<T> out(os);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const auto w = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * w, w, out.data().data() + o * total * inner + col);
    col += w;
  }
  return out;
}

template <typename T>
T sum(const BasicTensor<T>& a) {
  T acc = 0;
  for (auto v : a.data()) acc += v;
  return acc;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  return BasicTensor<T>::scalar(sum(a) / T(a.numel()));
}

/// Softmax along `axis` with max subtraction.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a, std::size_t axis) {
  detail::require(axis < a.rank(), "softmax", a.shape(), {axis}, "axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const auto n = a.dim(axis);
  BasicTensor<T> out(a.shape());
  std::vector<T> row(n);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const auto base = o * n * inner + in;
      T mx = a[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, a[base + k * inner]);
      for (std::size_t k = 0; k < n; ++k) row[k] = std::exp(a[base + k * inner] - mx);
      std::vector<T> terms = row;
      const T z = reduce_sum<T>(terms);
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] = row[k] / z;
    }
  return checked(out, "softmax");
}

/// Output length of a strided window: floor((n + 2 pad - k) / stride) + 1.
inline std::size_t conv_out_size(std::size_t n, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride < 1) fail(ErrorCode::invalid_geometry, "stride must be >= 1");
  if (n + 2 * pad < k) {
    fail(ErrorCode::invalid_geometry, "window " + std::to_string(k) + " exceeds padded input " +
                                          std::to_string(n + 2 * pad));
  }
  return (n + 2 * pad - k) / stride + 1;
}

/// Transpose-conv output length: (n - 1) stride - 2 pad + k.
inline std::size_t conv_transpose_out_size(std::size_t n, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride < 1) fail(ErrorCode::invalid_geometry, "stride must be >= 1");
  const auto full = (n - 1) * stride + k;
  if (full <= 2 * pad) {
    fail(ErrorCode::invalid_geometry, "padding " + std::to_string(pad) + " consumes output of size " +
                                          std::to_string(full));
  }
  return full - 2 * pad;
}

/// Cross-correlation. x: (C, H, W), kernel: (O, C, kh, kw) -> (O, H', W').
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, std::size_t stride, std::size_t pad) {
  detail::require(x.rank() == 3 && kernel.rank() == 4, "conv2d", x.shape(), kernel.shape(), "rank");
  detail::require(x.dim(0) == kernel.dim(1), "conv2d", x.shape(), kernel.shape(), "input channels");
  const auto C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const auto O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  const auto HO = conv_out_size(H, KH, stride, pad), WO = conv_out_size(W, KW, stride, pad);
  BasicTensor<T> out({O, HO, WO});
  const T* xp = x.data().data();
  const T* kp = kernel.data().data();
  T* op = out.data().data();
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ky = 0; ky < KH; ++ky)
        for (std::size_t kx = 0; kx < KW; ++kx) {
          const T w = kp[((o * C + c) * KH + ky) * KW + kx];
          for (std::size_t oy = 0; oy < HO; ++oy) {
            const auto iy = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
            if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
            const T* xrow = xp + (c * H + std::size_t(iy)) * W;
            T* orow = op + (o * HO + oy) * WO;
            for (std::size_t ox = 0; ox < WO; ++ox) {
              const auto ix = std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
              if (ix < 0 || ix >= std::ptrdiff_t(W)) continue;
              orow[ox] += w * xrow[ix];
            }
          }
        }
  record_macs("conv2d", std::uint64_t(O) * HO * WO * C * KH * KW);
  return checked(out, "conv2d");
}

using Index3 = std::array<std::size_t, 3>;

/// Transposed 3-D convolution (scatter form). x: (C, D0, D1, D2),
/// kernel: (C, O, k0, k1, k2) -> (O, D0', D1', D2') with
/// D' = (D - 1) stride - 2 pad + k per axis.
template <typename T>
BasicTensor<T> conv_transpose3d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, Index3 stride, Index3 pad) {
  detail::require(x.rank() == 4 && kernel.rank() == 5, "conv_transpose3d", x.shape(), kernel.shape(), "rank");
  detail::require(x.dim(0) == kernel.dim(0), "conv_transpose3d", x.shape(), kernel.shape(), "input channels");
  const auto C = x.dim(0), O = kernel.dim(1);
  const Index3 in{x.dim(1), x.dim(2), x.dim(3)};
  const Index3 k{kernel.dim(2), kernel.dim(3), kernel.dim(4)};
  Index3 out_dims{};
  for (int a = 0; a < 3; ++a) out_dims[a] = conv_transpose_out_size(in[a], k[a], stride[a], pad[a]);
  BasicTensor<T> out({O, out_dims[0], out_dims[1], out_dims[2]});
  const T* xp = x.data().data();
  const T* kp = kernel.data().data();
  T* op = out.data().data();
  const auto in_vol = in[0] * in[1] * in[2];
  const auto out_vol = out_dims[0] * out_dims[1] * out_dims[2];
  const auto k_vol = k[0] * k[1] * k[2];
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t a = 0; a < k[0]; ++a)
        for (std::size_t b = 0; b < k[1]; ++b)
          for (std::size_t e = 0; e < k[2]; ++e) {
            const T w = kp[(c * O + o) * k_vol + (a * k[1] + b) * k[2] + e];
            for (std::size_t i0 = 0; i0 < in[0]; ++i0) {
              const auto o0 = std::ptrdiff_t(i0 * stride[0] + a) - std::ptrdiff_t(pad[0]);
              if (o0 < 0 || o0 >= std::ptrdiff_t(out_dims[0])) continue;
              for (std::size_t i1 = 0; i1 < in[1]; ++i1) {
                const auto o1 = std::ptrdiff_t(i1 * stride[1] + b) - std::ptrdiff_t(pad[1]);
                if (o1 < 0 || o1 >= std::ptrdiff_t(out_dims[1])) continue;
                const T* xrow = xp + c * in_vol + (i0 * in[1] + i1) * in[2];
                T* orow = op + o * out_vol + (std::size_t(o0) * out_dims[1] + std::size_t(o1)) * out_dims[2];
                for (std::size_t i2 = 0; i2 < in[2]; ++i2) {
                  const auto o2 = std::ptrdiff_t(i2 * stride[2] + e) - std::ptrdiff_t(pad[2]);
                  if (o2 < 0 || o2 >= std::ptrdiff_t(out_dims[2])) continue;
                  orow[o2] += w * xrow[i2];
                }
              }
            }
          }
  record_macs("conv_transpose3d", std::uint64_t(C) * in_vol * O * k_vol);
  return checked(out, "conv_transpose3d");
}

/// Adds bias[c] to every element of channel c (axis 0).
template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  detail::require(x.rank() >= 1 && bias.rank() == 1 && bias.dim(0) == x.dim(0), "add_channel_bias", x.shape(),
                  bias.shape());
  BasicTensor<T> out = x;
  const auto inner = x.numel() / x.dim(0);
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += bias[c];
  return out;
}

/// Adds a length-n row vector to every row of an (m x n) matrix.
template <typename T>
BasicTensor<T> add_row_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  detail::require(x.rank() == 2 && bias.rank() == 1 && bias.dim(0) == x.dim(1), "add_row_bias", x.shape(),
                  bias.shape());
  BasicTensor<T> out = x;
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < x.dim(1); ++j) out[i * x.dim(1) + j] += bias[j];
  return out;
}

/// Per-row normalization of an (m x n) matrix, then gamma * xhat + beta.
/// Also returns the per-row inverse standard deviations for the backward pass.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps,
                          std::vector<T>* inv_std = nullptr) {
  detail::require(x.rank() == 2 && gamma.rank() == 1 && gamma.dim(0) == x.dim(1) && beta.shape() == gamma.shape(),
                  "layer_norm", x.shape(), gamma.shape());
  const auto m = x.dim(0), n = x.dim(1);
  BasicTensor<T> out(x.shape());
  if (inv_std) inv_std->assign(m, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.data().data() + i * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(n);
    const T r = T(1) / std::sqrt(var + eps);
    if (inv_std) (*inv_std)[i] = r;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = gamma[j] * (row[j] - mu) * r + beta[j];
  }
  return checked(out, "layer_norm");
}

/// Result of multi-head scaled dot-product attention.
template <typename T>
struct AttentionResult {
  BasicTensor<T> output;   // (Mq, heads * dv)
  BasicTensor<T> weights;  // (heads, Mq, Mk), rows sum to 1
};

/// Per head h: softmax(Q_h K_h^T / sqrt(dk)) V_h, heads concatenated.
/// Q: (Mq, heads*dk), K: (Mk, heads*dk), V: (Mk, heads*dv). Records
/// Mq*Mk*heads*dk MACs under "<label>.scores" and Mq*Mk*heads*dv under
/// "<label>.values".
template <typename T>
AttentionResult<T> scaled_dot_product_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                                const BasicTensor<T>& v, std::size_t heads,
                                                std::string_view label = "attention") {
  detail::require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention", q.shape(), k.shape(), "rank");
  detail::require(heads >= 1 && q.dim(1) == k.dim(1) && q.dim(1) % heads == 0, "attention", q.shape(), k.shape(),
                  "query/key width");
  detail::require(k.dim(0) == v.dim(0), "attention", k.shape(), v.shape(), "key/value rows");
  detail::require(v.dim(1) % heads == 0, "attention", k.shape(), v.shape(), "value width per head");
  const auto mq = q.dim(0), mk = k.dim(0);
  const auto dk = q.dim(1) / heads, dv = v.dim(1) / heads;
  const auto qw = q.dim(1), vw = v.dim(1);
  const T inv_sqrt = T(1) / std::sqrt(T(dk));
  AttentionResult<T> r{BasicTensor<T>({mq, heads * dv}), BasicTensor<T>({heads, mq, mk})};
  std::vector<T> scores(mk), terms(mk);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < mq; ++i) {
      const T* qrow = q.data().data() + i * qw + h * dk;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < mk; ++j) {
        const T* krow = k.data().data() + j * qw + h * dk;
        T s = 0;
        for (std::size_t c = 0; c < dk; ++c) s += qrow[c] * krow[c];
        scores[j] = s * inv_sqrt;
        mx = std::max(mx, scores[j]);
      }
      for (std::size_t j = 0; j < mk; ++j) scores[j] = std::exp(scores[j] - mx);
      terms = scores;
      const T z = reduce_sum<T>(terms);
      T* wrow = r.weights.data().data() + (h * mq + i) * mk;
      for (std::size_t j = 0; j < mk; ++j) wrow[j] = scores[j] / z;
      T* orow = r.output.data().data() + i * (heads * dv) + h * dv;
      if (canonical_reductions()) {
        for (std::size_t c = 0; c < dv; ++c) {
          for (std::size_t j = 0; j < mk; ++j) terms[j] = wrow[j] * v[j * vw + h * dv + c];
          orow[c] = reduce_sum<T>(terms);
        }
      } else {
        for (std::size_t j = 0; j < mk; ++j) {
          const T w = wrow[j];
          const T* vrow = v.data().data() + j * vw + h * dv;
          for (std::size_t c = 0; c < dv; ++c) orow[c] += w * vrow[c];
        }
      }
    }
  record_macs(std::string(label) + ".scores", std::uint64_t(mq) * mk * heads * dk);
  record_macs(std::string(label) + ".values", std::uint64_t(mq) * mk * heads * dv);
  checked(r.output, "attention");
  return r;
}

}  // namespace octran
