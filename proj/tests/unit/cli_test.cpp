/* Copyright 2026 The DMSN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmsn/cli.hpp"

namespace dmsn {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dmsn_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    lines.push_back(l);
  }
  return lines;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string x; std::getline(ss, x, sep);) f.push_back(x);
  return f;
}

TEST(CliTest, SubcommandIsRequired) {
  EXPECT_NE(run({}).code, 0);
  EXPECT_NE(run({"frobnicate"}).code, 0);
  const CliRun help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  for (const char* sub : {"describe", "count", "gradcheck", "synth", "train", "eval"}) {
    EXPECT_NE(help.out.find(sub), std::string::npos) << sub;
  }
}

TEST(CliTest, DescribeDefaultMatchesArchitectureTable) {
  const CliRun r = run({"describe", "--model", "dmsn"});
  ASSERT_EQ(r.code, 0) << r.err;
  int blocks = 0;
  for (const auto& l : lines_of(r.out)) blocks += l.rfind("  res", 0) == 0;
  EXPECT_EQ(blocks, 17);
  for (const char* extent : {"16x56x56", "8x28x28", "8x14x14", "8x7x7", "8x4x4"}) {
    EXPECT_NE(r.out.find(extent), std::string::npos) << extent;
  }
  EXPECT_EQ(r.out, run({"describe", "--model", "dmsn"}).out);
}

TEST(CliTest, DescribeShortClip) {
  const CliRun r = run({"describe", "--model", "dmsn-a", "--frames", "8", "--format", "csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = lines_of(r.out);
  ASSERT_GT(lines.size(), 4u);
  EXPECT_EQ(lines[0], "layer,channels,t,h,w");
  EXPECT_EQ(lines[2], "conv1,64,8,56,56");
  EXPECT_EQ(lines[3], "pool,64,4,28,28");
  for (std::size_t i = 3; i < lines.size(); ++i) {
    const auto f = split(lines[i], ',');
    if (f[0] != "head") {
      EXPECT_EQ(f[2], "4") << lines[i];
    }
  }
}

TEST(CliTest, UnknownModelListsValidNames) {
  const CliRun r = run({"describe", "--model", "resnet50"});
  EXPECT_NE(r.code, 0);
  for (const char* name : {"dmsn", "dmsn-a", "dmsn-b", "dmsn-c"}) {
    EXPECT_NE(r.err.find(name), std::string::npos) << r.err;
  }
}

TEST(CliTest, CountComparesModelsInOrder) {
  const CliRun r = run({"count", "--model", "dmsn-a,dmsn-b,dmsn-c,dmsn", "--frames", "16",
                     "--format", "csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = lines_of(r.out);
  ASSERT_EQ(lines.size(), 5u);
  const char* names[] = {"dmsn-a", "dmsn-b", "dmsn-c", "dmsn"};
  std::vector<double> params;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto f = split(lines[i + 1], ',');
    EXPECT_EQ(f[0], names[i]);
    params.push_back(std::stod(f[1]));
  }
  EXPECT_LT(params[0], params[3]);
  EXPECT_LT(params[3], params[1]);
  EXPECT_LT(params[1], params[2]);
}

TEST(CliTest, CountFrameAndBranchSweeps) {
  const CliRun frames = run({"count", "--model", "dmsn", "--frames", "8,16,24,32",
                          "--format", "csv"});
  ASSERT_EQ(frames.code, 0) << frames.err;
  const auto fl = lines_of(frames.out);
  ASSERT_EQ(fl.size(), 5u);
  const double base = std::stod(split(fl[1], ',')[2]);
  for (std::size_t k = 1; k <= 4; ++k) {
    EXPECT_NEAR(std::stod(split(fl[k], ',')[2]) / base, static_cast<double>(k), 1e-5);
  }
  const CliRun branches = run({"count", "--branches", "2,3,4", "--format", "csv"});
  ASSERT_EQ(branches.code, 0) << branches.err;
  const auto bl = lines_of(branches.out);
  ASSERT_EQ(bl.size(), 4u);
  EXPECT_LT(std::stod(split(bl[1], ',')[1]), std::stod(split(bl[2], ',')[1]));
  EXPECT_LT(std::stod(split(bl[2], ',')[1]), std::stod(split(bl[3], ',')[1]));
  EXPECT_NE(run({"count", "--convention", "MAC=3"}).code, 0);
}

TEST(CliTest, OutWritesFileInsteadOfStdout) {
  const fs::path dir = scratch("out");
  const CliRun r = run({"count", "--model", "dmsn", "--out", (dir / "t.csv").string(),
                     "--format", "csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines_of(slurp(dir / "t.csv"))[0], "model,params_M,flops_G,convention,clip_len");
}

TEST(CliTest, ConfigFileIsOverriddenByFlags) {
  const fs::path dir = scratch("config");
  {
    std::ofstream os(dir / "run.ini");
    os << "format=csv\n[count]\nmodel=dmsn-b\n";
  }
  const std::string ini = (dir / "run.ini").string();
  const CliRun from_file = run({"count", "--config", ini});
  ASSERT_EQ(from_file.code, 0) << from_file.err;
  EXPECT_EQ(split(lines_of(from_file.out)[1], ',')[0], "dmsn-b");
  const CliRun flag = run({"count", "--config", ini, "--model", "dmsn-c"});
  ASSERT_EQ(flag.code, 0) << flag.err;
  EXPECT_EQ(split(lines_of(flag.out)[1], ',')[0], "dmsn-c");
  {
    std::ofstream os(dir / "bad.ini");
    os << "[count]\nmodel=dmsn\nlayers=12\n";
  }
  EXPECT_NE(run({"count", "--config", (dir / "bad.ini").string()}).code, 0);
}

TEST(CliTest, SynthIsDeterministic) {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  for (const fs::path& d : {a, b}) {
    const CliRun r = run({"synth", "--clips", "4", "--frames", "4", "--height", "8", "--width", "8",
                       "--seed", "7", "--out", d.string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 4u + 2u);
  EXPECT_NE(run({"synth", "--clips", "4"}).code, 0);
}

class CliWorkflowTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("workflow"));
    const CliRun r = run({"synth", "--clips", "6", "--subjects", "3", "--frames", "8", "--height",
                       "16", "--width", "16", "--seed", "2", "--out", (*dir_ / "data").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string manifest() { return (*dir_ / "data" / "manifest.tsv").string(); }
  static fs::path* dir_;
};

fs::path* CliWorkflowTest::dir_ = nullptr;

TEST_F(CliWorkflowTest, TrainDepressionScheduleAndEval) {
  const std::string ckpt = (*dir_ / "m.ckpt").string();
  const CliRun t = run({"train", "--data", manifest(), "--schedule", "depression",
                     "--width-multiplier", "1/8", "--out", ckpt});
  ASSERT_EQ(t.code, 0) << t.err;
  const auto history = lines_of(slurp(ckpt + ".history.tsv"));
  ASSERT_EQ(history.size(), 2u + 3u);
  EXPECT_NE(history[0].find("epochs=3"), std::string::npos) << history[0];
  EXPECT_EQ(history[1], "step\tepoch\tlr\tloss");
  EXPECT_DOUBLE_EQ(std::stod(split(history[2], '\t')[2]), 0.005);
  EXPECT_DOUBLE_EQ(std::stod(split(history[3], '\t')[2]), 0.0005);
  EXPECT_DOUBLE_EQ(std::stod(split(history[4], '\t')[2]), 0.0005);

  const CliRun e = run({"eval", "--data", manifest(), "--checkpoint", ckpt, "--aggregate",
                     "median", "--format", "csv"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto lines = lines_of(e.out);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], "scope,test_subject,count,mae,rmse,mse");
  const auto f = split(lines[1], ',');
  EXPECT_EQ(f[2], "3");
  EXPECT_GE(std::stod(f[4]) + 1e-9, std::stod(f[3]));
}

TEST_F(CliWorkflowTest, LosoReportsEveryFoldAndPooled) {
  const std::string ckpt = (*dir_ / "loso.ckpt").string();
  ASSERT_EQ(run({"train", "--data", manifest(), "--epochs", "1", "--width-multiplier", "1/8",
                 "--out", ckpt})
                .code,
            0);
  const CliRun e = run({"eval", "--data", manifest(), "--checkpoint", ckpt, "--loso", "--epochs",
                     "1", "--format", "csv"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto lines = lines_of(e.out);
  ASSERT_EQ(lines.size(), 5u);
  for (std::size_t i = 1; i <= 3; ++i) {
    EXPECT_EQ(split(lines[i], ',')[1], "s" + std::to_string(i - 1)) << lines[i];
  }
  EXPECT_EQ(split(lines[4], ',')[0], "pooled");
  EXPECT_EQ(e.out, run({"eval", "--data", manifest(), "--checkpoint", ckpt, "--loso",
                        "--epochs", "1", "--format", "csv"})
                       .out);
}

TEST_F(CliWorkflowTest, MissingFilesAndGeometryMismatchFail) {
  const CliRun missing = run({"train", "--data", (*dir_ / "nope.tsv").string()});
  EXPECT_NE(missing.code, 0);
  EXPECT_NE(missing.err.find("nope.tsv"), std::string::npos) << missing.err;
  const CliRun geometry = run({"train", "--data", manifest(), "--frames", "16",
                            "--width-multiplier", "1/8", "--out",
                            (*dir_ / "g.ckpt").string()});
  EXPECT_NE(geometry.code, 0);
  EXPECT_NE(run({"eval", "--data", manifest(), "--checkpoint",
                 (*dir_ / "absent.ckpt").string()})
                .code,
            0);
}

TEST(CliTest, GradcheckNegativeControl) {
  const CliRun r = run({"gradcheck", "--scale", "micro", "--inject-fault"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE((r.out + r.err).find("worst"), std::string::npos) << r.out << r.err;
  for (const char* v : {"block-A", "block-B", "block-C"}) {
    EXPECT_NE(r.out.find(v), std::string::npos) << v;
  }
}

}  // namespace
}  // namespace dmsn
