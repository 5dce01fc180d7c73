// Copyright 2026 The STRM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int status = -1;
  std::string output;  // stdout and stderr
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(STRM_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  CliRun r;
  if (!p) return r;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), int(buf.size()), p)) r.output += buf.data();
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("strm_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.cfg") << "seed = 3\n"
                                        "[model]\nbase_width = 8\nencoder_blocks = 2\ndecoder_blocks = 2\n"
                                        "downsample = 4\nk_slots = 4\n"
                                        "[synthetic]\nobjects = 1\nheight = 16\nwidth = 16\nlength = 10\nswitches = 5\n"
                                        "occlusions = 2-4\n"
                                        "[train]\nsteps = 2\nclip_length = 3\nsequences = 1\n"
                                        "[eval]\nsequences = 2\n";
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }
  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("frobnicate").status, 2);
  EXPECT_EQ(run("bench --no-such-flag").status, 2);
  const CliRun r = run("train --config " + path("missing.cfg"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("missing.cfg"), std::string::npos) << r.output;
}

TEST_F(CliTest, RuntimeErrorsExitWithOne) {
  const CliRun r = run("train --config " + path("tiny.cfg") + " --set model.nonsense=1 -o " + path("o"));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("nonsense"), std::string::npos) << r.output;
}

TEST_F(CliTest, HelpListsSubcommands) {
  const CliRun r = run("--help");
  EXPECT_EQ(r.status, 0);
  for (const char* s : {"train", "eval", "predict", "bench", "analyze-memory", "gen-data", "gradcheck"})
    EXPECT_NE(r.output.find(s), std::string::npos) << s;
}

TEST_F(CliTest, GenDataIsDeterministic) {
  const std::string common = "gen-data --set synthetic.length=4 --set synthetic.switches=2 "
                             "--set synthetic.occlusions=1-2 --count 2 --seed 5 -o ";
  ASSERT_EQ(run(common + path("a")).status, 0);
  ASSERT_EQ(run(common + path("b")).status, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(path("a"))) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path twin = path("b") / fs::relative(e.path(), path("a"));
    EXPECT_EQ(slurp(e.path()), slurp(twin)) << twin;
  }
  EXPECT_EQ(files, 16u);  // 2 sequences x 4 frames x (frame + mask)
}

TEST_F(CliTest, TrainEvalAnalyzePipeline) {
  const CliRun t = run("train --config " + path("tiny.cfg") + " -o " + path("run"));
  ASSERT_EQ(t.status, 0) << t.output;
  EXPECT_TRUE(fs::exists(path("run/loss.csv")));
  const std::string ckpt = path("run/checkpoints/final.strm");
  ASSERT_TRUE(fs::exists(ckpt));

  const CliRun e = run("eval --config " + path("tiny.cfg") + " --checkpoint " + ckpt + " -o " + path("ev"));
  ASSERT_EQ(e.status, 0) << e.output;
  EXPECT_NE(e.output.find("J "), std::string::npos);
  for (const char* f : {"ev/report.csv", "ev/report.json", "ev/rollout.json", "ev/banks/eval_0.strm",
                        "ev/banks/eval_0.strm.json"})
    EXPECT_TRUE(fs::exists(path(f))) << f;

  const CliRun a = run("analyze-memory --log " + path("ev/rollout.json") + " --bank " + path("ev/banks/eval_0.strm") +
                    " -o " + path("hist.json"));
  ASSERT_EQ(a.status, 0) << a.output;
  EXPECT_NE(a.output.find("final bank eval_0"), std::string::npos) << a.output;
  EXPECT_NE(slurp(path("hist.json")).find("\"normalized\""), std::string::npos);

  const CliRun p = run("predict --config " + path("tiny.cfg") + " --checkpoint " + ckpt + " -o " + path("pred"));
  ASSERT_EQ(p.status, 0) << p.output;
}

TEST_F(CliTest, BenchWritesJson) {
  const CliRun r = run("bench --T 10,20 --reps 1 -o " + path("bench.json"));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(slurp(path("bench.json")).find("\"linear\""), std::string::npos);
}

TEST_F(CliTest, Gradcheck) {
  const CliRun r = run("gradcheck");
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("all passed"), std::string::npos);
  EXPECT_EQ(run("gradcheck --precision 32").status, 1);
}
