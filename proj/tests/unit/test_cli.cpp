// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "advlora/binary_io.hpp"
#include "advlora/cli.hpp"
#include "advlora/error.hpp"

namespace cli = advlora::cli;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "advlora");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("advlora_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string dir(const std::string& name) const { return (root_ / name).string(); }

  // A tiny dataset and base model.
  void recipe() {
    ASSERT_EQ(run({"gen-data", "--out", dir("data"), "--seed", "3", "--classes", "4", "--latent-dim", "3", "--vision-dim",
                   "6", "--text-dim", "5", "--n-train", "64", "--n-val", "16", "--n-test", "16"})
                  .code,
              0);
    ASSERT_EQ(run({"pretrain", "--data", dir("data"), "--out", dir("base"), "--seed", "3", "--epochs", "3",
                   "--hidden-dim", "8", "--embed-dim", "4"})
                  .code,
              0);
  }

  fs::path root_;
};

}  // namespace

TEST(CliConfig, ParsesFlatKeyValue) {
  const auto m = cli::parse_config("# comment\nlr = 0.1\n\nrank=4  # trailing\n");
  EXPECT_EQ(m.at("lr"), "0.1");
  EXPECT_EQ(m.at("rank"), "4");
  EXPECT_THROW(cli::parse_config("novalue\n"), advlora::UsageError);
  EXPECT_THROW(cli::parse_config("a=1\na=2\n"), advlora::UsageError);
}

TEST(CliConfig, Sha256KnownVector) {
  EXPECT_EQ(cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_F(CliTest, UnknownFlagIsUsageError) {
  EXPECT_EQ(run({"adapt", "--bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
}

TEST_F(CliTest, InvalidCombinationsAreUsageErrors) {
  recipe();
  const std::string model = dir("base") + "/base.advm";
  EXPECT_EQ(run({"adapt", "--data", dir("data"), "--model", model, "--method", "lora", "--pc", "--out", dir("x")}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"eval", "--data", dir("data"), "--model", model, "--eps", "0.1", "--out", dir("x")}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"adapt", "--data", dir("data"), "--model", model, "--method", "nope", "--out", dir("x")}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"adapt", "--model", model, "--out", dir("x")}).code, cli::kExitUsage);
}

TEST_F(CliTest, MissingFileIsRuntimeError) {
  recipe();
  const CliRun r = run({"eval", "--data", dir("data"), "--model", dir("nowhere.advm"), "--out", dir("x")});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("nowhere"), std::string::npos);
}

TEST_F(CliTest, FullRecipeIsReproducible) {
  recipe();
  const std::string model = dir("base") + "/base.advm";
  for (const char* out : {"a1", "a2"}) {
    ASSERT_EQ(run({"adapt", "--data", dir("data"), "--model", model, "--rank", "2", "--epochs", "1", "--batch-size", "16",
                   "--seed", "5", "--out", dir(out)})
                  .code,
              0);
    ASSERT_EQ(run({"eval", "--data", dir("data"), "--model", dir(out) + "/adapted.advm", "--attack", "pgd", "--out",
                   dir(out)})
                  .code,
              0);
  }
  EXPECT_EQ(slurp(dir("a1") + "/report.csv"), slurp(dir("a2") + "/report.csv"));
  EXPECT_EQ(slurp(dir("a1") + "/trainlog.jsonl"), slurp(dir("a2") + "/trainlog.jsonl"));
  EXPECT_EQ(slurp(dir("a1") + "/adapted.advm"), slurp(dir("a2") + "/adapted.advm"));

  // The manifest records the config and hashes of what it read and wrote.
  const auto manifest = nlohmann::json::parse(slurp(dir("a1") + "/manifest_adapt.json"));
  EXPECT_EQ(manifest["config"]["rank"], "2");
  EXPECT_EQ(manifest["inputs"].size(), 3u);
  EXPECT_EQ(manifest["outputs"][0]["sha256"], cli::sha256_hex(slurp(dir("a1") + "/adapted.advm")));

  // Replaying the written config reproduces the adapter bit for bit.
  ASSERT_EQ(run({"adapt", "--config", dir("a1") + "/adapt.cfg", "--out", dir("a3")}).code, 0);
  EXPECT_EQ(slurp(dir("a1") + "/adapted.advm"), slurp(dir("a3") + "/adapted.advm"));
}

TEST_F(CliTest, FlagsOverrideConfigFile) {
  recipe();
  std::ofstream(dir("run.cfg")) << "rank=3\nepochs=1\nbatch-size=16\npu=false\ndata=" << dir("data")
                                << "\nmodel=" << dir("base") << "/base.advm\n";
  ASSERT_EQ(run({"adapt", "--config", dir("run.cfg"), "--rank", "2", "--out", dir("o")}).code, 0);
  const std::string cfg = slurp(dir("o") + "/adapt.cfg");
  EXPECT_NE(cfg.find("rank=2\n"), std::string::npos);
  EXPECT_NE(cfg.find("pu=false\n"), std::string::npos);
  std::ofstream(dir("bad.cfg")) << "no-such-key=1\n";
  EXPECT_EQ(run({"adapt", "--config", dir("bad.cfg")}).code, cli::kExitUsage);
}

TEST_F(CliTest, AblateHasTheFourRowsWithToggleColumns) {
  recipe();
  const CliRun r = run({"ablate", "--data", dir("data"), "--model", dir("base") + "/base.advm", "--rank", "2", "--epochs",
                     "1", "--batch-size", "16", "--seeds", "1", "--out", dir("ab")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(slurp(dir("ab") + "/ablation.csv"));
  std::vector<std::string> rows;
  for (std::string l; std::getline(lines, l);) rows.push_back(l);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0].substr(0, 15), "setting,pc,pa,p");
  EXPECT_EQ(rows[1].substr(0, 15), "baseline,0,0,0,");
  EXPECT_EQ(rows[2].substr(0, 9), "PC,1,0,0,");
  EXPECT_EQ(rows[3].substr(0, 12), "PC+PA,1,1,0,");
  EXPECT_EQ(rows[4].substr(0, 15), "PC+PA+PU,1,1,1,");
}

TEST_F(CliTest, RankSweepAndOutputEnvironment) {
  recipe();
  setenv(cli::kOutputEnv, dir("env").c_str(), 1);
  const CliRun r = run({"rank-sweep", "--data", dir("data"), "--model", dir("base") + "/base.advm", "--ranks", "1,2",
                     "--epochs", "1", "--batch-size", "16", "--seeds", "1,2"});
  unsetenv(cli::kOutputEnv);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir("env") + "/rank_sweep.csv"));
  EXPECT_TRUE(fs::exists(dir("env") + "/manifest_rank-sweep.json"));
}
