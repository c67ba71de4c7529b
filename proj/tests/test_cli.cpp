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

#include <cstdlib>
#include <map>
#include <sstream>

#include "octran/cli.hpp"
#include "temp_dir.hpp"

using namespace octran;
using namespace octran::testing;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;

  /// key=value stdout lines.
  std::map<std::string, std::string> metrics() const {
    std::map<std::string, std::string> m;
    std::istringstream in(out);
    for (std::string line; std::getline(in, line);) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) m[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return m;
  }
};

Run octran_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  const auto b = io::read_file(path);
  return {b.begin(), b.end()};
}

void write_text(const std::string& path, const std::string& text) { io::write_file_atomic(path, text); }

/// Runs with OCTRAN_SEED set for the duration of the scope.
class SeedEnv {
 public:
  explicit SeedEnv(const char* value) { ::setenv("OCTRAN_SEED", value, 1); }
  ~SeedEnv() { ::unsetenv("OCTRAN_SEED"); }
};

OctranConfig tiny_config() {
  OctranConfig c = reference_config(Variant::V0);
  c.latent_count = 2;
  c.latent_dim = 4;
  c.channels = 2;
  c.num_bands = 2;
  c.ch = 1, c.cdh = 4, c.lh = 1, c.ldh = 4, c.d = 1;
  c.lr = 0.01;
  return c;
}

class CliData : public ::testing::Test {
 protected:
  void SetUp() override {
    ::unsetenv("OCTRAN_SEED");
    SceneSpec spec;
    spec.seed = 9;
    write_text(dir / "spec.txt", scene_spec_to_text(spec));
    write_text(dir / "tiny.txt", config_to_text(tiny_config()));
  }

  std::string gen(const std::string& name, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"gen-data", "--spec", dir / "spec.txt", "--out", dir / name, "--count", "3"};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = octran_cli(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return dir / name;
  }

  TempDir dir;
};

}  // namespace

TEST(CliUsage, ExitCodes) {
  EXPECT_EQ(octran_cli({}).code, 2);
  EXPECT_EQ(octran_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(octran_cli({"gen-data"}).code, 2);
  const auto v = octran_cli({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_EQ(v.out, "0.1.0\n");
  EXPECT_EQ(octran_cli({"--help"}).code, 0);
  EXPECT_EQ(cli::exit_code(ErrorCode::diverged), 3);
  EXPECT_EQ(cli::exit_code(ErrorCode::non_finite), 3);
  EXPECT_EQ(cli::exit_code(ErrorCode::bad_magic), 2);
}

TEST_F(CliData, MissingSpecNamesThePath) {
  const auto missing = dir / "nope.txt";
  const auto r = octran_cli({"gen-data", "--spec", missing, "--out", dir / "x.shard"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(dir / "x.shard"));
}

TEST_F(CliData, GenDataIsByteDeterministic) {
  const auto a = gen("a.shard");
  const auto b = gen("b.shard");
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(read_shard(a).samples.size(), 3u);

  const auto manifest = slurp(a + ".run.txt");
  EXPECT_NE(manifest.find("command=gen-data\n"), std::string::npos);
  EXPECT_NE(manifest.find("seed=9\n"), std::string::npos);
  EXPECT_NE(manifest.find("tool_version=0.1.0\n"), std::string::npos);
  EXPECT_NE(manifest.find("output.0=" + a + "\n"), std::string::npos);
  EXPECT_NE(manifest.find("config.seed=9\n"), std::string::npos);

  const auto c = gen("c.shard", {"--seed", "10"});
  EXPECT_NE(slurp(a), slurp(c));
}

TEST_F(CliData, ManifestReproducesTheRun) {
  const auto a = gen("a.shard", {"--seed", "31"});
  const auto manifest = slurp(a + ".run.txt");
  const auto line = manifest.substr(manifest.find("args=") + 5);
  std::istringstream in(line.substr(0, line.find('\n')));
  std::vector<std::string> args;
  for (std::string t; in >> t;) args.push_back(t == a ? dir / "again.shard" : t);
  ASSERT_EQ(octran_cli(args).code, 0);
  EXPECT_EQ(slurp(a), slurp(dir / "again.shard"));
}

TEST_F(CliData, SeedPrecedence) {
  const auto five = gen("five.shard", {"--seed", "5"});
  const auto nine = gen("nine.shard", {"--seed", "9"});
  EXPECT_EQ(slurp(gen("file.shard")), slurp(nine));
  {
    SeedEnv env("5");
    EXPECT_EQ(slurp(gen("env.shard")), slurp(five));
    EXPECT_EQ(slurp(gen("flag.shard", {"--seed", "9"})), slurp(nine));
  }
  SeedEnv bad("abc");
  EXPECT_EQ(octran_cli({"gen-data", "--spec", dir / "spec.txt", "--out", dir / "bad.shard"}).code, 2);
}

TEST_F(CliData, PipelineCheck) {
  const auto shard = gen("a.shard");
  const auto r = octran_cli({"pipeline-check", "--data", shard});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.metrics().at("violations"), "0");
  EXPECT_EQ(r.metrics().at("samples"), "3");

  auto s = read_shard(shard);
  for (auto& v : s.samples[0].disparity.values) {
    if (v > 0) {
      v += 50;
      break;
    }
  }
  write_shard(s.samples, s.camera, s.grid, dir / "bad.shard");
  const auto bad = octran_cli({"pipeline-check", "--data", dir / "bad.shard"});
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.metrics().at("violations"), "0");

  write_text(dir / "junk.shard", "not a shard\n");
  EXPECT_EQ(octran_cli({"pipeline-check", "--data", dir / "junk.shard"}).code, 2);
}

TEST_F(CliData, ProjectConstantDisparity) {
  const StereoCamera cam{1000, 1000, 10, 5, 0.5, 20, 10};
  write_text(dir / "cam.txt", camera_to_text(cam));
  DisparityMap dm(20, 10);
  std::fill(dm.values.begin(), dm.values.end(), 100.0f);
  save_pfm(dm, dir / "d.pfm");
  const auto r = octran_cli({"project", "--pfm", dir / "d.pfm", "--cam", dir / "cam.txt", "--out", dir / "d.ply"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.metrics().at("points"), "200");
  const auto cloud = parse_ply(slurp(dir / "d.ply"));
  ASSERT_EQ(cloud.size(), 200u);
  for (const auto& p : cloud) EXPECT_EQ(p.z, 5.0);

  const auto g = octran_cli({"project", "--pfm", dir / "d.pfm", "--cam", dir / "cam.txt", "--out", dir / "d.ocgr"});
  ASSERT_EQ(g.code, 0) << g.err;
  const auto grid = load_ocgr(dir / "d.ocgr");
  EXPECT_EQ(grid.spec, SceneSpec{}.grid);
  EXPECT_GT(grid.count(), 0u);

  EXPECT_EQ(octran_cli({"project", "--pfm", dir / "d.pfm", "--cam", dir / "cam.txt", "--out", dir / "d.xyz"}).code, 2);
}

TEST_F(CliData, ProjectEmptyMap) {
  write_text(dir / "cam.txt", camera_to_text({1000, 1000, 10, 5, 0.5, 20, 10}));
  save_pfm(DisparityMap(20, 10), dir / "z.pfm");
  const auto r = octran_cli({"project", "--pfm", dir / "z.pfm", "--cam", dir / "cam.txt", "--out", dir / "z.ply"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(parse_ply(slurp(dir / "z.ply")).empty());
  EXPECT_NE(slurp(dir / "z.ply").find("element vertex 0\n"), std::string::npos);
}

TEST_F(CliData, DepthErrorTable) {
  write_text(dir / "cam.txt", camera_to_text({1000, 1000, 960, 540, 0.5, 1920, 1080}));
  const auto r = octran_cli(
      {"depth-error-table", "--cam", dir / "cam.txt", "--zmin", "5", "--zmax", "10", "--zstep", "5", "--dd", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "z,dz\n5,0.05\n10,0.2\n");
  EXPECT_EQ(octran_cli({"depth-error-table", "--cam", dir / "cam.txt", "--zmin", "5", "--zmax", "1"}).code, 2);
  write_text(dir / "bad.txt", "fx=0\n");
  EXPECT_EQ(octran_cli({"depth-error-table", "--cam", dir / "bad.txt", "--zmin", "5", "--zmax", "6"}).code, 2);
}

TEST(CliBench, AttentionRows) {
  const auto r = octran_cli({"bench-attention", "--m-list", "32,64,128,256", "--n", "8", "--d", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "M,cross_macs,self_macs");
  std::vector<std::array<std::uint64_t, 3>> rows;
  for (std::string line; std::getline(in, line);) {
    std::array<std::uint64_t, 3> row{};
    char c1, c2;
    std::istringstream ls(line);
    ls >> row[0] >> c1 >> row[1] >> c2 >> row[2];
    rows.push_back(row);
  }
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& row : rows) {
    EXPECT_EQ(row[1], 8 * row[0] * 16);
    EXPECT_EQ(row[2], row[0] * row[0] * 16);
  }
  EXPECT_EQ(rows[1][1], 8192u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][1], 2 * rows[i - 1][1]);
    EXPECT_EQ(rows[i][2], 4 * rows[i - 1][2]);
  }
  EXPECT_EQ(octran_cli({"bench-attention", "--m-list", "3,x"}).code, 2);
}

TEST_F(CliData, TrainEvalAndResume) {
  const auto shard = gen("t.shard");
  const auto cfg = dir / "tiny.txt";
  const auto full = octran_cli({"train", "--config", cfg, "--data", shard, "--out", dir / "full", "--steps", "4",
                                "--eval-every", "2"});
  ASSERT_EQ(full.code, 0) << full.err;
  EXPECT_EQ(full.metrics().at("step"), "4");
  EXPECT_TRUE(full.metrics().count("loss_first"));
  const auto history = slurp(dir / "full/history.csv");
  EXPECT_EQ(history.rfind("step,loss,iou\n", 0), 0u);
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 5);

  const auto again = octran_cli({"train", "--config", cfg, "--data", shard, "--out", dir / "again", "--steps", "4",
                                 "--eval-every", "2"});
  ASSERT_EQ(again.code, 0) << again.err;
  const auto half = octran_cli({"train", "--config", cfg, "--data", shard, "--out", dir / "half", "--steps", "2",
                                "--eval-every", "2"});
  ASSERT_EQ(half.code, 0) << half.err;
  const auto resumed = octran_cli({"train", "--resume", dir / "half", "--data", shard, "--out", dir / "resumed",
                                   "--steps", "4", "--eval-every", "2"});
  ASSERT_EQ(resumed.code, 0) << resumed.err;
  for (const char* f : {"config.txt", "manifest.txt", "params.bin", "adam_m.bin", "adam_v.bin", "history.csv"}) {
    EXPECT_EQ(slurp(dir / ("full/" + std::string(f))), slurp(dir / ("again/" + std::string(f)))) << f;
    EXPECT_EQ(slurp(dir / ("full/" + std::string(f))), slurp(dir / ("resumed/" + std::string(f)))) << f;
  }

  const auto ev = octran_cli({"eval", "--ckpt", dir / "full", "--data", shard});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const double iou = std::stod(ev.metrics().at("iou"));
  EXPECT_GE(iou, 0.0);
  EXPECT_LE(iou, 1.0);
  EXPECT_EQ(ev.metrics().at("iou_all_empty"), "0");

  auto other = tiny_config();
  other.lr = 0.5;
  write_text(dir / "other.txt", config_to_text(other));
  EXPECT_EQ(octran_cli({"train", "--config", dir / "other.txt", "--resume", dir / "half", "--data", shard, "--out",
                        dir / "x"})
                .code,
            2);
  EXPECT_EQ(octran_cli({"train", "--data", shard, "--out", dir / "x"}).code, 2);
  EXPECT_EQ(octran_cli({"eval", "--ckpt", dir / "missing", "--data", shard}).code, 2);
}

TEST_F(CliData, IncompatibleConfigIsUsageError) {
  const auto shard = gen("t.shard");
  auto c = tiny_config();
  c.input_w = 64;
  write_text(dir / "wide.txt", config_to_text(c));
  const auto r = octran_cli({"train", "--config", dir / "wide.txt", "--data", shard, "--out", dir / "x", "--steps", "1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("invalid-config"), std::string::npos) << r.err;
}

TEST_F(CliData, DivergenceExitsNumerical) {
  const auto shard = gen("t.shard");
  auto c = tiny_config();
  c.lr = 1e308;
  write_text(dir / "hot.txt", config_to_text(c));
  const auto r = octran_cli({"train", "--config", dir / "hot.txt", "--data", shard, "--out", dir / "x", "--steps", "5"});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("diverged"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}
