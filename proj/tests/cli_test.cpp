// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "stylecomp/config.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;  // stdout and stderr
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + STYLECOMP_CLI + std::string(" ") + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("stylecomp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string p(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

const std::string kTiny =
    " --set model.d_model=12 --set model.n_heads=2 --set model.n_layers=1 --set model.lora_rank=2"
    " --set model.patch_size=8 --set train.heldout=2 --set train.accumulation=1";

}  // namespace

TEST_F(Cli, NoSubcommandIsAUsageError) {
  const auto r = run("");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("stylecomp:"), std::string::npos);
}

TEST_F(Cli, VersionFlag) {
  const auto r = run("--version");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(stylecomp::kVersion), std::string::npos);
}

TEST_F(Cli, HelpListsSubcommands) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"gen-data", "calibrate", "filter", "train", "compose", "evaluate", "ablate"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
}

TEST_F(Cli, RejectionCapIsRequiredAndBounded) {
  EXPECT_EQ(run("calibrate --manifest " + p("m.jsonl") + " --out " + p("c")).code, 2);
  std::ofstream(p("m.jsonl")) << "";
  EXPECT_EQ(run("calibrate --manifest " + p("m.jsonl") + " --rejection-cap 1.5 --out " + p("c")).code, 2);
}

TEST_F(Cli, StageThreeNeedsCheckpoints) {
  std::ofstream(p("m.jsonl")) << "";
  const auto r = run("train --stage 3 --data " + p("m.jsonl") + " --out " + p("t"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("--ckpt1"), std::string::npos);
  EXPECT_NE(r.out.find("--ckpt2"), std::string::npos);
}

TEST_F(Cli, MissingInputIsARuntimeError) {
  const auto r = run("filter --manifest " + p("absent.jsonl") + " --thresholds " + p("t.json") + " --out " + p("f"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("stylecomp: error:"), std::string::npos);
}

TEST_F(Cli, SeedPrecedence) {
  ASSERT_EQ(run("gen-data --out " + p("a") + " --count 2", "MC_SEED=11").code, 0);
  EXPECT_EQ(stylecomp::Config::load(p("a/run.cfg")).u64("seed"), 11u);
  ASSERT_EQ(run("gen-data --out " + p("b") + " --count 2 --seed 12", "MC_SEED=11").code, 0);
  EXPECT_EQ(stylecomp::Config::load(p("b/run.cfg")).u64("seed"), 12u);
  std::ofstream(p("s.cfg")) << "seed = 13\n";
  ASSERT_EQ(run("gen-data --out " + p("c") + " --count 2 --config " + p("s.cfg"), "MC_SEED=").code, 0);
  EXPECT_EQ(stylecomp::Config::load(p("c/run.cfg")).u64("seed"), 13u);
  EXPECT_NE(slurp(p("a/manifest.jsonl")), slurp(p("b/manifest.jsonl")));
}

TEST_F(Cli, EndToEndPipeline) {
  auto ok = [](const Result& r) {
    EXPECT_EQ(r.code, 0) << r.out;
    return r.code == 0;
  };
  ASSERT_TRUE(ok(run("gen-data --out " + p("val") + " --count 16 --corruption-rate 0.5 --seed 3")));
  ASSERT_TRUE(ok(run("gen-data --out " + p("data") + " --count 24 --corruption-rate 0.25 --seed 4")));
  ASSERT_TRUE(ok(run("calibrate --manifest " + p("val/manifest.jsonl") + " --rejection-cap 0.3 --out " + p("cal"))));
  ASSERT_TRUE(ok(run("filter --manifest " + p("data/manifest.jsonl") + " --thresholds " + p("cal/thresholds.json") +
                     " --out " + p("flt"))));
  const auto acc = p("flt/accepted.jsonl");
  const std::string common = kTiny + " --seed 1 --steps 2 --data " + acc;
  ASSERT_TRUE(ok(run("train --stage 0 --out " + p("s0") + common)));
  const auto base = p("s0/model.ckpt");
  ASSERT_TRUE(ok(run("train --stage 1 --base " + base + " --out " + p("s1") + common)));
  ASSERT_TRUE(ok(run("train --stage 2 --base " + base + " --out " + p("s2") + common)));
  ASSERT_TRUE(ok(run("train --stage 3 --ckpt1 " + p("s1/model.ckpt") + " --ckpt2 " + p("s2/model.ckpt") + " --out " +
                     p("s3") + common)));
  EXPECT_EQ(stylecomp::Config::load(p("s3/run.cfg")).str("train.variant"), "full");
  const auto loss = slurp(p("s3/loss.csv"));
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 3);

  ASSERT_TRUE(ok(run("compose --ckpt " + p("s3/model.ckpt") + " --reference " + p("data/images/s00000_f.png") +
                     " --background " + p("data/images/s00000_b.png") + " --mask " + p("data/images/s00000_m.png") +
                     " --out " + p("out/x.png") + " --steps 2")));
  EXPECT_TRUE(fs::exists(p("out/x.png")));

  ASSERT_TRUE(ok(run("evaluate --manifest " + acc + " --method copy-paste --method oracle --method full=" +
                     p("s3/model.ckpt") + " --steps 1 --limit 3 --out " + p("ev"))));
  const auto table = slurp(p("ev/report.txt"));
  for (const char* m : {"copy-paste", "oracle", "full"}) EXPECT_NE(table.find(m), std::string::npos) << m;
  const auto jsonl = slurp(p("ev/report.jsonl"));
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 1 + 9 + 3);  // header, records, summaries

  ASSERT_TRUE(ok(run("ablate --variant no-style --data " + acc + " --out " + p("ab"))));
  const auto script = slurp(p("ab/commands.sh"));
  EXPECT_NE(script.find("--stage 1"), std::string::npos);
  EXPECT_EQ(script.find("--stage 2"), std::string::npos);
  EXPECT_NE(script.find("--variant no-style"), std::string::npos);
}
