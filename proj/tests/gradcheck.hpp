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
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "octran/autodiff.hpp"
#include "octran/parameters.hpp"

namespace octran::testing {

using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradReport {
  double max_rel = 0;       // worst elementwise relative error
  std::string where;        // "input k, element i" of the worst element
  std::size_t checked = 0;  // number of elements compared
};

/// Elementwise |a - n| / max(|a|, |n|, floor). The floor keeps elements whose
/// true gradient is ~0 from turning round-off into a large ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Analytic gradients of `build` (which must return a scalar) against
/// central differences, for every element of every input.
inline GradReport grad_check(const GraphFn& build, const std::vector<Tensor>& inputs, double h = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
  tape.backward(build(tape, leaves));

  GradReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = tape.grad(leaves[k]);
    auto f = [&](const Tensor& probe) {
      Tape t;
      std::vector<Var> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j) vs.push_back(t.leaf(j == k ? probe : inputs[j]));
      return build(t, vs).value().item();
    };
    const auto numeric = finite_difference_grad(f, inputs[k], h);
    for (std::size_t i = 0; i < numeric.numel(); ++i) {
      const double e = relative_error(analytic[i], numeric[i]);
      ++report.checked;
      if (e > report.max_rel) {
        report.max_rel = e;
        report.where = "input " + std::to_string(k) + ", element " + std::to_string(i) + ": analytic " +
                       std::to_string(analytic[i]) + " numeric " + std::to_string(numeric[i]);
      }
    }
  }
  return report;
}

/// <out, R> for a fixed pseudo-random R, turning any output into a scalar
/// whose gradient exercises every output element.
inline Var random_projection(Tape& tape, Var out, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ad::sum(ad::mul(out, tape.constant(gaussian(out.shape(), 1.0, rng))));
}

inline Tensor random_input(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return gaussian(std::move(shape), stddev, rng);
}

/// Values bounded away from zero so relu kinks stay out of the
/// finite-difference stencil.
inline Tensor away_from_zero(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.1, 1.5);
  return t;
}

}  // namespace octran::testing
