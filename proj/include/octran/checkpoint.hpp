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

#include <filesystem>
#include <string>
#include <vector>

#include "octran/binary_io.hpp"
#include "octran/kv.hpp"
#include "octran/model.hpp"
#include "octran/tensor_io.hpp"

namespace octran {

inline constexpr std::string_view kCheckpointFormat = "octran-checkpoint 1";

/// A training run frozen between steps: config plus the full TrainState.
struct Checkpoint {
  OctranConfig config;
  TrainState state;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline io::Bytes concat_tnsr(const std::vector<Tensor>& ts) {
  io::Bytes out;
  for (const auto& t : ts) encode_tnsr(out, t);
  return out;
}

inline std::vector<Tensor> split_tnsr(const io::Bytes& bytes, std::size_t count, const std::string& what) {
  io::Reader in(bytes);
  std::vector<Tensor> out;
  for (std::size_t n = 0; n < count; ++n) out.push_back(decode_tnsr(in));
  if (!in.done()) fail(ErrorCode::manifest_mismatch, what + " holds more tensors than the manifest lists");
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + fmt(xs[i]);
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t b = 0;
  while (true) {
    const auto e = s.find(sep, b);
    out.push_back(s.substr(b, e - b));
    if (e == std::string::npos) return out;
    b = e + 1;
  }
}

template <class T>
T parse_number(const std::string& s, const std::string& what) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) fail(ErrorCode::manifest_mismatch, "bad " + what + " '" + s + "'");
  return v;
}

}  // namespace detail

/// Writes config.txt, manifest.txt, params.bin, adam_m.bin and adam_v.bin
/// into `dir` (created if needed). Every file is replaced atomically.
inline void save_checkpoint(const Checkpoint& ck, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto& s = ck.state;
  std::string m = "format=" + std::string(kCheckpointFormat) + "\n";
  m += "step=" + std::to_string(s.step) + "\n";
  m += "rng=" + s.rng.state() + "\n";
  m += "order=" + detail::join(s.order, [](std::size_t v) { return std::to_string(v); }) + "\n";
  m += "cursor=" + std::to_string(s.cursor) + "\n";
  m += "loss_history=" + detail::join(s.loss_history, [](double v) { return format_real(v); }) + "\n";
  m += "iou_history=" +
       detail::join(s.iou_history, [](const auto& p) { return std::to_string(p.first) + ":" + format_real(p.second); }) +
       "\n";
  m += "param_count=" + std::to_string(s.params.size()) + "\n";
  for (std::size_t n = 0; n < s.params.size(); ++n) {
    m += "param." + std::to_string(n) + "=" + s.params.names()[n] + " " + shape_str(s.params.values()[n].shape()) + "\n";
  }
  const std::filesystem::path d(dir);
  io::write_file_atomic((d / "config.txt").string(), config_to_text(ck.config));
  io::write_file_atomic((d / "params.bin").string(), detail::concat_tnsr(s.params.values()));
  io::write_file_atomic((d / "adam_m.bin").string(), detail::concat_tnsr(s.adam_m));
  io::write_file_atomic((d / "adam_v.bin").string(), detail::concat_tnsr(s.adam_v));
  io::write_file_atomic((d / "manifest.txt").string(), m);
}

/// Parameter names and shapes must match what the stored config builds.
inline Checkpoint load_checkpoint(const std::string& dir) {
  const std::filesystem::path d(dir);
  if (!std::filesystem::is_directory(d)) fail(ErrorCode::io, "checkpoint directory '" + dir + "' not found");
  Checkpoint ck;
  ck.config = config_from_kv(KeyValues::load((d / "config.txt").string()));
  const auto kv = KeyValues::load((d / "manifest.txt").string());
  if (kv.str("format") != kCheckpointFormat) fail(ErrorCode::manifest_mismatch, "unknown checkpoint format");

  auto& s = ck.state;
  s = init_train_state(ck.config);
  s.step = detail::parse_number<std::uint64_t>(kv.str("step"), "step");
  s.rng.restore(kv.str("rng"));
  for (const auto& t : detail::split(kv.str("order"), ',')) s.order.push_back(detail::parse_number<std::size_t>(t, "order"));
  s.cursor = detail::parse_number<std::size_t>(kv.str("cursor"), "cursor");
  if (s.cursor > s.order.size()) fail(ErrorCode::manifest_mismatch, "cursor past the sample order");
  for (const auto& t : detail::split(kv.str("loss_history"), ',')) {
    s.loss_history.push_back(detail::parse_number<double>(t, "loss"));
  }
  for (const auto& t : detail::split(kv.str("iou_history"), ',')) {
    const auto colon = t.find(':');
    if (colon == std::string::npos) fail(ErrorCode::manifest_mismatch, "bad iou entry '" + t + "'");
    s.iou_history.emplace_back(detail::parse_number<std::uint64_t>(t.substr(0, colon), "iou step"),
                               detail::parse_number<double>(t.substr(colon + 1), "iou"));
  }
  if (s.loss_history.size() != s.step) fail(ErrorCode::manifest_mismatch, "loss history length differs from step");

  const auto count = detail::parse_number<std::size_t>(kv.str("param_count"), "param_count");
  if (count != s.params.size()) {
    fail(ErrorCode::manifest_mismatch, "checkpoint has " + std::to_string(count) + " parameters, config builds " +
                                           std::to_string(s.params.size()));
  }
  for (std::size_t n = 0; n < count; ++n) {
    const auto expect = s.params.names()[n] + " " + shape_str(s.params.values()[n].shape());
    const auto got = kv.str("param." + std::to_string(n));
    if (got != expect) fail(ErrorCode::manifest_mismatch, "parameter " + std::to_string(n) + ": '" + got + "' vs '" + expect + "'");
  }
  kv.reject_unused();

  auto load = [&](const char* file) {
    auto ts = detail::split_tnsr(io::read_file((d / file).string()), count, file);
    for (std::size_t n = 0; n < count; ++n) {
      if (ts[n].shape() != s.params.values()[n].shape()) {
        fail(ErrorCode::manifest_mismatch, std::string(file) + ": shape of '" + s.params.names()[n] + "'");
      }
    }
    return ts;
  };
  s.params.values() = load("params.bin");
  s.adam_m = load("adam_m.bin");
  s.adam_v = load("adam_v.bin");
  return ck;
}

}  // namespace octran
