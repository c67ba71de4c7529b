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

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "octran/attention.hpp"
#include "octran/checkpoint.hpp"
#include "octran/geometry_config.hpp"
#include "octran/geometry_io.hpp"
#include "octran/model.hpp"
#include "octran/scenes_io.hpp"

namespace octran::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Process exit codes.
enum Exit : int { ok = 0, usage = 2, numerical = 3 };

inline int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::non_finite:
    case ErrorCode::diverged:
    case ErrorCode::inconsistent: return numerical;
    default: return usage;
  }
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Record of one command invocation, written atomically when it finishes.
struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  std::uint64_t seed = 0;
  std::string started = utc_now();
  std::string finished;
  std::string config;  // key=value snapshot
  std::vector<std::string> outputs;
  std::vector<std::pair<std::string, std::string>> metrics;

  std::string to_text() const {
    std::string out = "command=" + command + "\nargs=";
    for (std::size_t i = 0; i < args.size(); ++i) out += (i ? " " : "") + args[i];
    out += "\ntool_version=" + std::string(kToolVersion) + "\nseed=" + std::to_string(seed) + "\nstarted=" + started +
           "\nfinished=" + finished + "\n";
    for (std::size_t i = 0; i < outputs.size(); ++i) out += "output." + std::to_string(i) + "=" + outputs[i] + "\n";
    for (const auto& [k, v] : metrics) out += "metric." + k + "=" + v + "\n";
    std::istringstream cfg(config);
    for (std::string line; std::getline(cfg, line);) {
      if (!line.empty()) out += "config." + line + "\n";
    }
    return out;
  }

  void write(const std::string& path) {
    finished = utc_now();
    io::write_file_atomic(path, to_text());
  }
};

/// Seed precedence: explicit flag, then OCTRAN_SEED, then the file value.
inline std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t file_value) {
  if (flag) return *flag;
  if (const char* env = std::getenv("OCTRAN_SEED"); env && *env) {
    std::uint64_t v = 0;
    const std::string s(env);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) fail(ErrorCode::invalid_config, "OCTRAN_SEED='" + s + "' is not an integer");
    return v;
  }
  return file_value;
}

inline std::vector<Example> examples_of(const Shard& shard) {
  std::vector<Example> out;
  for (const auto& s : shard.samples) out.push_back({s.image, s.gt});
  return out;
}

inline void check_compatible(const OctranConfig& cfg, const Shard& shard) {
  if (!(cfg.grid == shard.grid)) fail(ErrorCode::invalid_config, "config grid differs from the shard grid");
  const auto& img = shard.samples.front().image;
  if (img.shape() != Shape{3, cfg.input_h, cfg.input_w}) {
    fail(ErrorCode::invalid_config, "shard images are " + shape_str(img.shape()) + ", config expects 3x" +
                                        std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w));
  }
}

/// Per-step loss with the IoU of the steps where it was measured.
inline std::string history_csv(const TrainState& s) {
  std::string out = "step,loss,iou\n";
  std::size_t e = 0;
  for (std::size_t n = 0; n < s.loss_history.size(); ++n) {
    out += std::to_string(n + 1) + "," + format_real(s.loss_history[n]) + ",";
    while (e < s.iou_history.size() && s.iou_history[e].first < n + 1) ++e;
    if (e < s.iou_history.size() && s.iou_history[e].first == n + 1) out += format_real(s.iou_history[e].second);
    out += "\n";
  }
  return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& t : detail::split(text, ',')) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || v == 0) {
      fail(ErrorCode::invalid_argument, "'" + t + "' is not a positive integer");
    }
    out.push_back(v);
  }
  if (out.empty()) fail(ErrorCode::invalid_argument, "empty list");
  return out;
}

/// Runs one command line (args exclude the program name). Metrics go to
/// `out` as key=value lines, diagnostics to `err`.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale monocular occupancy pipeline", "octran"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  std::string manifest_path;
  app.add_option("--manifest", manifest_path, "Also write a run manifest here");

  RunManifest run;
  run.args = args;
  std::function<void()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render a seeded synthetic dataset shard");
  std::string gen_spec, gen_out;
  std::size_t gen_count = 8;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--spec", gen_spec, "Scene spec file (key=value)")->required();
  gen->add_option("--out", gen_out, "Shard path")->required();
  gen->add_option("--count", gen_count, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Base seed (overrides OCTRAN_SEED and the spec)");
  gen->callback([&] {
    action = [&] {
      auto spec = scene_spec_from_kv(KeyValues::load(gen_spec));
      spec.seed = resolve_seed(gen_seed, spec.seed);
      std::vector<RenderedSample> samples;
      std::size_t boxes = 0, occupied = 0;
      for (std::size_t i = 0; i < gen_count; ++i) {
        samples.push_back(render_dataset_sample(spec, i));
        boxes += samples.back().scene.boxes.size();
        occupied += samples.back().gt.count();
      }
      write_shard(samples, spec.camera, spec.grid, gen_out);
      run.command = "gen-data";
      run.seed = spec.seed;
      run.config = scene_spec_to_text(spec);
      run.outputs = {gen_out};
      run.metrics = {{"samples", std::to_string(gen_count)}, {"boxes", std::to_string(boxes)},
                     {"occupied_voxels", std::to_string(occupied)}};
      for (const auto& [k, v] : run.metrics) out << k << "=" << v << "\n";
      if (manifest_path.empty()) manifest_path = gen_out + ".run.txt";
    };
  });

  // train
  auto* train = app.add_subcommand("train", "Train a model on a shard, writing a checkpoint directory");
  std::string tr_config, tr_data, tr_out, tr_resume;
  std::uint64_t tr_steps = 200, tr_eval_every = 50;
  train->add_option("--config", tr_config, "Model config file (key=value)");
  train->add_option("--data", tr_data, "Training shard")->required();
  train->add_option("--out", tr_out, "Checkpoint directory")->required();
  train->add_option("--steps", tr_steps, "Total step count to reach");
  train->add_option("--resume", tr_resume, "Continue from this checkpoint directory");
  train->add_option("--eval-every", tr_eval_every, "Record IoU every N steps (0 = never)");
  train->callback([&] {
    action = [&] {
      if (tr_config.empty() && tr_resume.empty()) fail(ErrorCode::invalid_config, "train needs --config or --resume");
      Checkpoint ck;
      if (!tr_resume.empty()) {
        ck = load_checkpoint(tr_resume);
        if (!tr_config.empty()) {
          auto cfg = config_from_kv(KeyValues::load(tr_config));
          cfg.seed = resolve_seed(std::nullopt, cfg.seed);
          if (!(cfg == ck.config)) fail(ErrorCode::invalid_config, "--config differs from the resumed checkpoint");
        }
      } else {
        ck.config = config_from_kv(KeyValues::load(tr_config));
        ck.config.seed = resolve_seed(std::nullopt, ck.config.seed);
        ck.state = init_train_state(ck.config);
      }
      const auto shard = read_shard(tr_data);
      check_compatible(ck.config, shard);
      const auto data = examples_of(shard);
      ck.state = train_until(std::move(ck.state), ck.config, data, tr_steps, tr_eval_every);
      save_checkpoint(ck, tr_out);
      io::write_file_atomic((std::filesystem::path(tr_out) / "history.csv").string(), history_csv(ck.state));

      const double iou_now = evaluate(ck.config, ck.state.params, data);
      out << "step=" << ck.state.step << "\n";
      if (!ck.state.loss_history.empty()) {
        out << "loss_first=" << format_real(ck.state.loss_history.front()) << "\n";
        out << "loss_last=" << format_real(ck.state.loss_history.back()) << "\n";
      }
      out << "iou=" << format_real(iou_now) << "\n";
      run.command = "train";
      run.seed = ck.config.seed;
      run.config = config_to_text(ck.config);
      run.outputs = {tr_out};
      run.metrics = {{"step", std::to_string(ck.state.step)}, {"iou", format_real(iou_now)}};
      if (manifest_path.empty()) manifest_path = (std::filesystem::path(tr_out) / "run.txt").string();
    };
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Mean IoU of a checkpoint on a shard");
  std::string ev_ckpt, ev_data;
  double ev_threshold = 0.5;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", ev_data, "Evaluation shard")->required();
  ev->add_option("--threshold", ev_threshold, "Occupancy probability threshold");
  ev->callback([&] {
    action = [&] {
      const auto ck = load_checkpoint(ev_ckpt);
      const auto shard = read_shard(ev_data);
      check_compatible(ck.config, shard);
      const auto data = examples_of(shard);
      const double score = evaluate(ck.config, ck.state.params, data, ev_threshold);
      double empty = 0, full = 0;
      for (const auto& ex : data) {
        OccupancyGrid none(ex.target.spec), all(ex.target.spec);
        std::fill(all.cells.begin(), all.cells.end(), std::uint8_t(1));
        empty += iou(none, ex.target);
        full += iou(all, ex.target);
      }
      out << "iou=" << format_real(score) << "\n";
      out << "iou_all_empty=" << format_real(empty / double(data.size())) << "\n";
      out << "iou_all_occupied=" << format_real(full / double(data.size())) << "\n";
      run.command = "eval";
      run.seed = ck.config.seed;
      run.config = config_to_text(ck.config);
      run.metrics = {{"iou", format_real(score)}};
    };
  });

  // project
  auto* proj = app.add_subcommand("project", "Back-project a PFM disparity map to a PLY cloud or OCGR grid");
  std::string pj_pfm, pj_cam, pj_out, pj_grid;
  proj->add_option("--pfm", pj_pfm, "Disparity map")->required();
  proj->add_option("--cam", pj_cam, "Camera file (key=value)")->required();
  proj->add_option("--out", pj_out, "Output path ending in .ply or .ocgr")->required();
  proj->add_option("--grid", pj_grid, "Grid file for .ocgr output (default: desk reference grid)");
  proj->callback([&] {
    action = [&] {
      const auto cam = camera_from_kv(KeyValues::load(pj_cam));
      const auto dm = load_pfm(pj_pfm);
      const auto cloud = disparity_to_pointcloud(cam, dm);
      const auto ext = std::filesystem::path(pj_out).extension().string();
      run.metrics = {{"points", std::to_string(cloud.size())}};
      if (ext == ".ply") {
        save_ply(cloud, pj_out);
      } else if (ext == ".ocgr") {
        VoxelGridSpec grid = SceneSpec{}.grid;
        if (!pj_grid.empty()) grid = grid_from_kv(KeyValues::load(pj_grid), grid);
        const auto vox = voxelize(cloud, grid);
        save_ocgr(vox.grid, pj_out);
        run.metrics.emplace_back("occupied", std::to_string(vox.grid.count()));
        run.metrics.emplace_back("dropped", std::to_string(vox.dropped));
        run.config = grid_to_text(grid);
      } else {
        fail(ErrorCode::invalid_argument, "--out must end in .ply or .ocgr, got '" + pj_out + "'");
      }
      for (const auto& [k, v] : run.metrics) out << k << "=" << v << "\n";
      run.command = "project";
      run.config = camera_to_text(cam) + run.config;
      run.outputs = {pj_out};
      if (manifest_path.empty()) manifest_path = pj_out + ".run.txt";
    };
  });

  // depth-error-table
  auto* det = app.add_subcommand("depth-error-table", "CSV of depth uncertainty z,dz for a disparity error");
  std::string de_cam;
  double de_zmin = 0, de_zmax = 0, de_dd = 1, de_zstep = 1;
  det->add_option("--cam", de_cam, "Camera file (key=value)")->required();
  det->add_option("--zmin", de_zmin, "First depth (m)")->required();
  det->add_option("--zmax", de_zmax, "Last depth (m)")->required();
  det->add_option("--dd", de_dd, "Disparity error (px)");
  det->add_option("--zstep", de_zstep, "Depth increment (m)");
  det->callback([&] {
    action = [&] {
      const auto cam = camera_from_kv(KeyValues::load(de_cam));
      if (!(de_zstep > 0) || !(de_zmin <= de_zmax)) fail(ErrorCode::invalid_argument, "need zmin <= zmax and zstep > 0");
      out << "z,dz\n";
      for (std::size_t i = 0;; ++i) {
        const double z = de_zmin + double(i) * de_zstep;
        if (z > de_zmax * (1 + 1e-12)) break;
        out << format_real(z) << "," << format_real(depth_error(cam, z, de_dd)) << "\n";
      }
      run.command = "depth-error-table";
      run.config = camera_to_text(cam);
    };
  });

  // bench-attention
  auto* bench = app.add_subcommand("bench-attention", "Measured attention MACs versus input length");
  std::string be_m = "32,64,128,256";
  std::size_t be_n = 8, be_d = 16;
  bench->add_option("--m-list", be_m, "Comma-separated input lengths");
  bench->add_option("--n", be_n, "Latent count")->check(CLI::PositiveNumber);
  bench->add_option("--d", be_d, "Channel width")->check(CLI::PositiveNumber);
  bench->callback([&] {
    action = [&] {
      Rng rng(0);
      const auto latents = gaussian({be_n, be_d}, 1.0, rng);
      out << "M,cross_macs,self_macs\n";
      for (auto m : parse_size_list(be_m)) {
        const auto inputs = gaussian({m, be_d}, 1.0, rng);
        FlopLedger ledger;
        {
          FlopRecording rec(ledger);
          (void)scaled_dot_product_attention(latents, inputs, inputs, 1, "cross");
          (void)scaled_dot_product_attention(inputs, inputs, inputs, 1, "self");
        }
        out << m << "," << ledger.macs("cross.scores") << "," << ledger.macs("self.scores") << "\n";
      }
      run.command = "bench-attention";
    };
  });

  // pipeline-check
  auto* pc = app.add_subcommand("pipeline-check", "Back-projection versus ground-truth consistency of a shard");
  std::string pc_data;
  pc->add_option("--data", pc_data, "Shard")->required();
  pc->callback([&] {
    action = [&] {
      const auto shard = read_shard(pc_data);
      std::size_t violations = 0, occupied = 0;
      for (const auto& s : shard.samples) {
        const auto r = pipeline_consistency(s, shard.camera, shard.grid);
        violations += r.violations;
        occupied += r.occupied;
      }
      out << "samples=" << shard.samples.size() << "\noccupied=" << occupied << "\nviolations=" << violations << "\n";
      run.command = "pipeline-check";
      run.metrics = {{"violations", std::to_string(violations)}};
      if (violations != 0) fail(ErrorCode::inconsistent, std::to_string(violations) + " consistency violations");
    };
  });

  std::vector<const char*> argv{"octran"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::CallForVersion& e) {
    out << kToolVersion << "\n";
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "octran: " << e.what() << "\n";
    return usage;
  }

  try {
    action();
    if (!manifest_path.empty()) run.write(manifest_path);
  } catch (const Error& e) {
    err << "octran: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "octran: " << e.what() << "\n";
    return usage;
  }
  return ok;
}

}  // namespace octran::cli
