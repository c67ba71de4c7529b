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
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "octran/autodiff.hpp"

namespace octran {

/// Seeded 64-bit Mersenne Twister with library-independent real draws
/// (std:: distributions differ between standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) fail(ErrorCode::invalid_argument, "below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller; no cached second value.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::string state() const {
    std::ostringstream out;
    out << engine_;
    return out.str();
  }

  void restore(const std::string& state) {
    std::istringstream in(state);
    in >> engine_;
    if (!in) fail(ErrorCode::manifest_mismatch, "unreadable RNG state");
  }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::mt19937_64 engine_;
};

/// Per-sample stream derived from a base seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = stddev * rng.normal();
  return t;
}

/// Named parameter tensors in insertion order.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor value) {
    if (index_.count(name)) fail(ErrorCode::invalid_config, "duplicate parameter '" + name + "'");
    index_[name] = values_.size();
    names_.push_back(name);
    values_.push_back(std::move(value));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& get(const std::string& name) const { return values_[position(name)]; }
  Tensor& get(const std::string& name) { return values_[position(name)]; }

  std::size_t position(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::invalid_config, "unknown parameter '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& values() { return values_; }
  const std::vector<Tensor>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.numel();
    return n;
  }

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
  std::vector<Tensor> values_;
};

/// Every parameter of a store registered as a leaf on one tape.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterStore& store) : tape_(&tape), store_(&store) {
    for (const auto& v : store.values()) vars_.push_back(tape.leaf(v));
  }

  Var operator[](const std::string& name) const { return vars_[store_->position(name)]; }
  Tape& tape() const { return *tape_; }

  /// Gradients in store order, after `tape().backward(...)`.
  std::vector<Tensor> gradients() const {
    std::vector<Tensor> out;
    out.reserve(vars_.size());
    for (auto v : vars_) out.push_back(tape_->grad(v));
    return out;
  }

 private:
  Tape* tape_;
  const ParameterStore* store_;
  std::vector<Var> vars_;
};

namespace nn {

inline void init_linear(ParameterStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  ps.add(name + ".w", gaussian({in, out}, 1.0 / std::sqrt(double(in)), rng));
  ps.add(name + ".b", Tensor({out}));
}

inline Var linear(const BoundParameters& p, const std::string& name, Var x) {
  return ad::add_row_bias(ad::matmul(x, p[name + ".w"]), p[name + ".b"]);
}

inline void init_layer_norm(ParameterStore& ps, const std::string& name, std::size_t dim) {
  ps.add(name + ".g", Tensor({dim}, 1.0));
  ps.add(name + ".b", Tensor({dim}));
}

inline Var layer_norm(const BoundParameters& p, const std::string& name, Var x) {
  return ad::layer_norm(x, p[name + ".g"], p[name + ".b"]);
}

}  // namespace nn

}  // namespace octran
