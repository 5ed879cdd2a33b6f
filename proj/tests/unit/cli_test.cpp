// Copyright 2026 The fedmark Authors. All Rights Reserved.
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

#include "fedmark/cli.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

namespace fedmark {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Runs the installed binary in a subprocess so exit codes are real.
Outcome run_cli(const std::string& args) {
  const char* bin = std::getenv("FEDMARK_CLI");
  if (!bin) throw std::runtime_error("FEDMARK_CLI not set");
  static int n = 0;
  const fs::path dir = testing::temp_dir("cli_io");
  const fs::path o = dir / ("out" + std::to_string(n)), e = dir / ("err" + std::to_string(n));
  ++n;
  const std::string cmd =
      std::string("'") + bin + "' " + args + " >'" + o.string() + "' 2>'" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  Outcome r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(testing::temp_dir("cli_run"));
    ExperimentConfig cfg = testing::tiny_experiment();
    cfg.train.lr = 0.05;
    std::ofstream(*dir_ / "cfg.json") << cfg.to_json().dump(2);
    const Outcome r = run_cli("train --config '" + (*dir_ / "cfg.json").string() + "' --run-dir '" +
                              (*dir_ / "run").string() + "'");
    train_code_ = r.code;
    train_out_ = new std::string(r.out);
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete train_out_;
  }
  static fs::path run() { return *dir_ / "run"; }
  static std::string ckpt() { return "'" + (run() / "checkpoints" / "round_2").string() + "'"; }
  static std::string key(int c) {
    return "'" + (run() / "keys" / ("client_" + std::to_string(c) + ".key")).string() + "'";
  }

  static fs::path* dir_;
  static int train_code_;
  static std::string* train_out_;
};
fs::path* CliRun::dir_ = nullptr;
int CliRun::train_code_ = -1;
std::string* CliRun::train_out_ = nullptr;

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_cli("").code, kExitUsage);
  EXPECT_EQ(run_cli("train --bogus 1").code, kExitUsage);
  EXPECT_EQ(run_cli("dance").code, kExitUsage);
  const Outcome missing = run_cli("train --config /nonexistent/cfg.json");
  EXPECT_EQ(missing.code, kExitUsage);
  const auto j = nlohmann::json::parse(missing.err.substr(missing.err.rfind('{')));
  EXPECT_EQ(j["kind"], "usage");
  EXPECT_NE(j["error"].get<std::string>().find("does not exist"), std::string::npos);
  EXPECT_EQ(run_cli("verify --checkpoint x").code, kExitUsage);
  EXPECT_EQ(run_cli("verify --checkpoint x --key y --tau 3").code, kExitUsage);
}

TEST(Cli, HelpExitsZero) {
  const Outcome r = run_cli("--help");
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("verify"), std::string::npos);
}

TEST(Cli, InProcessEntryPoint) {
  std::vector<std::string> args{"fedmark", "capacity", "--dataset", "nope"};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  EXPECT_EQ(cli_main(static_cast<int>(argv.size()), argv.data()), kExitUsage);
}

TEST_F(CliRun, TrainWritesRun) {
  ASSERT_EQ(train_code_, kExitOk);
  const auto j = nlohmann::json::parse(*train_out_);
  EXPECT_EQ(j["ssim"].size(), 2u);
  EXPECT_TRUE(fs::exists(run() / "checkpoints" / "round_2"));
  EXPECT_TRUE(fs::exists(run() / "keys" / "client_1.key"));
}

TEST_F(CliRun, VerifyExitCodesFollowVerdict) {
  ASSERT_EQ(train_code_, kExitOk);
  const std::string img = (*dir_ / "v.png").string(), rep = (*dir_ / "v.json").string();
  const Outcome pass = run_cli("verify --checkpoint " + ckpt() + " --key " + key(0) +
                               " --tau -1 --image '" + img + "' --report '" + rep + "'");
  EXPECT_EQ(pass.code, kExitOk);
  const auto j = nlohmann::json::parse(slurp(rep));
  EXPECT_EQ(j["verdict"], "pass");
  EXPECT_TRUE(fs::exists(img));
  EXPECT_EQ(nlohmann::json::parse(pass.out)["ssim"], j["ssim"]);
  const Outcome fail = run_cli("verify --checkpoint " + ckpt() + " --key " + key(0) + " --tau 1");
  EXPECT_EQ(fail.code, kExitVerifyFail);
  EXPECT_EQ(nlohmann::json::parse(fail.out)["verdict"], "fail");
}

TEST_F(CliRun, CorruptInputsExitOne) {
  ASSERT_EQ(train_code_, kExitOk);
  std::ofstream(*dir_ / "junk.key") << "junk";
  const Outcome r = run_cli("verify --checkpoint " + ckpt() + " --key '" +
                            (*dir_ / "junk.key").string() + "'");
  EXPECT_EQ(r.code, kExitError);
  EXPECT_NE(r.err.find("\"format\""), std::string::npos);
  EXPECT_EQ(run_cli("verify --checkpoint '" + (*dir_ / "junk.key").string() + "' --key " + key(0))
                .code,
            kExitError);
}

TEST_F(CliRun, AttackAndReport) {
  ASSERT_EQ(train_code_, kExitOk);
  const Outcome p = run_cli("attack --checkpoint " + ckpt() + " --kind prune --ratio 0.5 --run-dir '" +
                            run().string() + "' --key " + key(1));
  ASSERT_EQ(p.code, kExitOk) << p.err;
  const auto rec = nlohmann::json::parse(slurp(run() / "attacks" / "prune.json"));
  EXPECT_EQ(rec["ratio"], 0.5);
  EXPECT_TRUE(rec["ssim_after"].is_number());
  EXPECT_TRUE(fs::exists(run() / "attacks" / "prune.ckpt"));
  EXPECT_EQ(run_cli("attack --checkpoint " + ckpt() + " --kind distill").code, kExitUsage);
  EXPECT_EQ(run_cli("attack --checkpoint " + ckpt() + " --kind quantize --bits 5").code,
            kExitUsage);
  const Outcome rep = run_cli("report --run-dir '" + run().string() + "'");
  ASSERT_EQ(rep.code, kExitOk) << rep.err;
  const auto summary = nlohmann::json::parse(rep.out);
  EXPECT_EQ(summary["rounds"], 2);
  EXPECT_EQ(summary["attacks"].size(), 1u);
  EXPECT_TRUE(fs::exists(run() / "report" / "sheet.png"));
}

}  // namespace
}  // namespace fedmark
