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

#include <stdexcept>
#include <string>
#include <string_view>

namespace octran {

enum class ErrorCode {
  no_depth,
  out_of_frame,
  behind_camera,
  invalid_depth,
  invalid_argument,
  dimension_mismatch,
  spec_mismatch,
  shape_mismatch,
  invalid_geometry,
  unrecorded_op,
  non_finite,
  empty_loss,
  diverged,
  placement_failed,
  inconsistent,
  bad_magic,
  bad_version,
  unsupported_channels,
  bad_dims,
  truncated,
  manifest_mismatch,
  invalid_config,
  io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::no_depth: return "no-depth";
    case ErrorCode::out_of_frame: return "out-of-frame";
    case ErrorCode::behind_camera: return "behind-camera";
    case ErrorCode::invalid_depth: return "invalid-depth";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::spec_mismatch: return "spec-mismatch";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::invalid_geometry: return "invalid-geometry";
    case ErrorCode::unrecorded_op: return "unrecorded-op";
    case ErrorCode::non_finite: return "non-finite";
    case ErrorCode::empty_loss: return "empty-loss";
    case ErrorCode::diverged: return "diverged";
    case ErrorCode::placement_failed: return "placement-failed";
    case ErrorCode::inconsistent: return "inconsistent";
    case ErrorCode::bad_magic: return "bad-magic";
    case ErrorCode::bad_version: return "bad-version";
    case ErrorCode::unsupported_channels: return "unsupported-channels";
    case ErrorCode::bad_dims: return "bad-dims";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::manifest_mismatch: return "manifest-mismatch";
    case ErrorCode::invalid_config: return "invalid-config";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

/// Every failure in the library surfaces as this exception. `code()` is the
/// stable machine-readable variant; `what()` is "<code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

}  // namespace octran
