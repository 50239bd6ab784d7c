#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mts3/checkpoint.hpp"
#include "mts3/config.hpp"
#include "mts3/dataset_io.hpp"

#ifdef MTS3_CLI_PATH

namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out;
};

Outcome run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(MTS3_CLI_PATH) + " " + args + " 2>&1";
  Outcome r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p) != nullptr) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "mts3_cli_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinyConfig =
    R"({"seed": 2, "model": {"d_z": 2, "d_l": 2, "d_alpha": 2, "window": 5, "enc_width": 4, "set_width": 4,)"
    R"( "dec_width": 4, "control_width": 4}, "train": {"epochs": 2, "batch_size": 2, "threads": 1,)"
    R"( "horizons": [1, 5], "variants": ["full", "no_task"], "h_sweep": [2, 3, 5]}})";

TEST(Cli, GenDataHeaderAndDeterminism) {
  const fs::path d = dir("gen");
  const Outcome a = run("gen-data --system springmass --out " + (d / "a.dat").string() + " --traj 4 --len 90 --seed 3");
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_NE(a.out.find("B=4"), std::string::npos);
  const mts3::TrajectoryBatch b = mts3::read_dataset((d / "a.dat").string());
  EXPECT_EQ(b.batch, 4);
  EXPECT_EQ(b.steps, 90);
  ASSERT_EQ(run("gen-data --out " + (d / "b.dat").string() + " --traj 4 --len 90 --seed 3").code, 0);
  EXPECT_EQ(slurp(d / "a.dat"), slurp(d / "b.dat"));
  ASSERT_EQ(run("gen-data --out " + (d / "c.dat").string() + " --traj 4 --len 90 --seed 1", "MTS3_SEED=3").code, 0);
  EXPECT_EQ(slurp(d / "a.dat"), slurp(d / "c.dat"));
  ASSERT_EQ(run("gen-data --system terrain --out " + (d / "t.dat").string() + " --traj 2 --len 20").code, 0);
  EXPECT_EQ(mts3::read_dataset((d / "t.dat").string()).obs_dim, 9);
}

TEST(Cli, UsageErrorsExitTwo) {
  const fs::path d = dir("usage");
  const Outcome bad = run("gen-data --system pendulum --out " + (d / "x.dat").string());
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("springmass"), std::string::npos);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("gen-data --out " + (d / "x.dat").string() + " --traj 0").code, 2);
  EXPECT_EQ(run("gen-data --out " + (d / "x.dat").string(), "MTS3_SEED=abc").code, 2);
}

TEST(Cli, DataErrorsExitThree) {
  const fs::path d = dir("data");
  const Outcome missing = run("train --data " + (d / "none.dat").string() + " --out " + (d / "o").string());
  EXPECT_EQ(missing.code, 3);
  EXPECT_NE(missing.out.find("none.dat"), std::string::npos);
  ASSERT_EQ(run("gen-data --out " + (d / "a.dat").string() + " --traj 4 --len 30").code, 0);
  write(d / "typo.json", R"({"train": {"epoch": 3}})");
  const Outcome typo =
      run("train --data " + (d / "a.dat").string() + " --config " + (d / "typo.json").string() + " --out " +
          (d / "o").string());
  EXPECT_EQ(typo.code, 3);
  EXPECT_NE(typo.out.find("train.epoch"), std::string::npos);
  EXPECT_EQ(run("eval --data " + (d / "a.dat").string() + " --ckpt " + (d / "none.ckpt").string() + " --out " +
                (d / "e.csv").string())
                .code,
            3);
}

TEST(Cli, TrainWithoutConfigEchoesDefaults) {
  const fs::path d = dir("defaults");
  ASSERT_EQ(run("gen-data --out " + (d / "a.dat").string() + " --traj 3 --len 30").code, 0);
  const Outcome r = run("train --data " + (d / "a.dat").string() + " --out " + (d / "o").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const mts3::Checkpoint ck = mts3::load_checkpoint((d / "o" / "last.ckpt").string());
  EXPECT_EQ(mts3::config_to_json(ck.config), mts3::config_to_json(mts3::RunConfig{}));
}

TEST(Cli, TrainResumeEvalAndDeterminism) {
  const fs::path d = dir("train");
  ASSERT_EQ(run("gen-data --out " + (d / "a.dat").string() + " --traj 6 --len 30").code, 0);
  write(d / "cfg.json", kTinyConfig);
  const std::string common = "--data " + (d / "a.dat").string() + " --config " + (d / "cfg.json").string();
  ASSERT_EQ(run("train " + common + " --out " + (d / "r1").string()).code, 0);
  ASSERT_EQ(run("train " + common + " --out " + (d / "r2").string()).code, 0);
  EXPECT_EQ(slurp(d / "r1" / "metrics.jsonl"), slurp(d / "r2" / "metrics.jsonl"));
  EXPECT_EQ(slurp(d / "r1" / "best.ckpt"), slurp(d / "r2" / "best.ckpt"));

  // Resuming a finished run does no further epochs.
  const Outcome again = run("train " + common + " --out " + (d / "r1").string() + " --resume");
  ASSERT_EQ(again.code, 0) << again.out;
  EXPECT_NE(again.out.find("epochs 2"), std::string::npos);
  EXPECT_EQ(slurp(d / "r1" / "metrics.jsonl"), slurp(d / "r2" / "metrics.jsonl"));

  const std::string ev = "eval --data " + (d / "a.dat").string() + " --ckpt " + (d / "r1" / "best.ckpt").string();
  const Outcome e = run(ev + " --horizons 1,3,500 --context 10 --out " + (d / "e1.csv").string());
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("warning"), std::string::npos);
  const std::string table = slurp(d / "e1.csv");
  EXPECT_EQ(table.rfind("variant,horizon,rmse,nll\nfull,1,", 0), 0u) << table;
  ASSERT_EQ(run(ev + " --horizons 1,3,500 --context 10 --out " + (d / "e2.csv").string()).code, 0);
  EXPECT_EQ(table, slurp(d / "e2.csv"));
  EXPECT_EQ(run(ev + " --horizons 0 --out " + (d / "e3.csv").string()).code, 2);
}

TEST(Cli, AblateLayoutAndRowCount) {
  const fs::path d = dir("ablate");
  ASSERT_EQ(run("gen-data --out " + (d / "a.dat").string() + " --traj 6 --len 30").code, 0);
  write(d / "cfg.json", kTinyConfig);
  const std::string args = "ablate --data " + (d / "a.dat").string() + " --config " + (d / "cfg.json").string();
  ASSERT_EQ(run(args + " --out " + (d / "x").string()).code, 0);
  for (const char* sub : {"full", "no_task", "H2", "H3", "H5"}) EXPECT_TRUE(fs::exists(d / "x" / sub / "eval.csv")) << sub;
  std::ifstream in(d / "x" / "comparison.csv");
  std::string line;
  int sweep_rows = 0;
  while (std::getline(in, line)) sweep_rows += line.rfind("H", 0) == 0;
  EXPECT_EQ(sweep_rows, 3 * 2);  // |H list| runs, two horizons each
  ASSERT_EQ(run(args + " --out " + (d / "y").string()).code, 0);
  EXPECT_EQ(slurp(d / "x" / "comparison.csv"), slurp(d / "y" / "comparison.csv"));
}

}  // namespace

#endif
