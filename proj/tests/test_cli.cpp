#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <string>

#include "test_util.hpp"
#include "xdt/encoder.hpp"
#include "xdt/io.hpp"
#include "xdt/model.hpp"

namespace xdt {
namespace {

using testing::scratch_dir;
using testing::write_text;

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string("'") + XDT_CLI_PATH + "' " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string quoted(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

const char* kConfig = R"(out_dir = out
losses = lc:0.001
head.num_layers = 1
head.model_dim = 16
head.ffn_dim = 32
train.optimizer = adam
train.max_epochs = 3

[dataset:a]
synthetic = name=a,dim=16,sep=2,n=25,seed=1

[dataset:b]
synthetic = name=b,dim=16,sep=2,n=25,axis=1,seed=2

[dataset:real]
manifest = missing/real.tsv
)";

TEST(Cli, HelpSucceeds) {
  const auto r = run_cli("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("matrix"), std::string::npos);
}

TEST(Cli, ExtractSynthetic) {
  const auto dir = scratch_dir();
  const auto r = run_cli("extract --synthetic dim=8,sep=2,n=10,seed=4 --out " + quoted(dir / "s.xdte"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("(20 x 8)"), std::string::npos) << r.output;
  const auto set = load_cache(dir / "s.xdte");
  EXPECT_EQ(set.size(), 20u);
  EXPECT_TRUE(std::filesystem::exists(dir / "s.xdte.provenance.txt"));
}

TEST(Cli, MissingManifestExitsWithDataError) {
  const auto dir = scratch_dir();
  write_text(dir / "x.cfg", kConfig);
  const auto r = run_cli("extract --config " + quoted(dir / "x.cfg") + " --dataset real");
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("missing/real.tsv"), std::string::npos) << r.output;
}

TEST(Cli, UsageErrorsExitWithOne) {
  const auto dir = scratch_dir();
  write_text(dir / "x.cfg", kConfig);
  const auto cfg = quoted(dir / "x.cfg");
  EXPECT_EQ(run_cli("train --config " + cfg + " --dataset a --loss foo").code, 1);
  EXPECT_EQ(run_cli("train --config " + cfg + " --dataset a --loss ce --lambda 0.1").code, 1);
  EXPECT_EQ(run_cli("train --config " + cfg + " --dataset nope").code, 1);
  EXPECT_EQ(run_cli("train --config " + cfg + " --dataset a --set bogus=1").code, 1);
  EXPECT_EQ(run_cli("matrix").code, 1);
  EXPECT_EQ(run_cli("frobnicate").code, 1);
}

TEST(Cli, TrainWritesCheckpointWithMetadata) {
  const auto dir = scratch_dir();
  write_text(dir / "x.cfg", kConfig);
  const auto r = run_cli("train --config " + quoted(dir / "x.cfg") + " --dataset a --loss lc --lambda 0.25");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto ckpt = load_checkpoint(dir / "out/a_lc-0.25.xdtm");
  EXPECT_EQ(ckpt.metadata.at("lambda"), "0.25");
  EXPECT_EQ(ckpt.metadata.at("loss"), "lc");
  EXPECT_EQ(ckpt.metadata.at("train_dataset"), "a");
  EXPECT_TRUE(std::filesystem::exists(dir / "out/a_lc-0.25.history.tsv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out/a_lc-0.25.provenance.txt"));
}

TEST(Cli, MatrixIsByteIdenticalOnRerun) {
  const auto dir = scratch_dir();
  write_text(dir / "x.cfg", std::string(kConfig).substr(0, std::string(kConfig).find("[dataset:real]")));
  const auto cmd = "matrix --config " + quoted(dir / "x.cfg");
  ASSERT_EQ(run_cli(cmd).code, 0);
  const auto t1 = io::read_text_file(dir / "out/results.tsv");
  const auto p1 = io::read_text_file(dir / "out/results.provenance.txt");
  std::filesystem::remove_all(dir / "out");
  ASSERT_EQ(run_cli(cmd).code, 0);
  EXPECT_EQ(std::count(t1.begin(), t1.end(), '\n'), 5);
  EXPECT_EQ(t1, io::read_text_file(dir / "out/results.tsv"));
  EXPECT_EQ(p1, io::read_text_file(dir / "out/results.provenance.txt"));
}

TEST(Cli, SeedOverrideChangesTheRun) {
  const auto dir = scratch_dir();
  write_text(dir / "x.cfg", std::string(kConfig).substr(0, std::string(kConfig).find("[dataset:real]")));
  const auto cfg = quoted(dir / "x.cfg");
  ASSERT_EQ(run_cli("matrix --config " + cfg + " --seed 1 --out " + quoted(dir / "r1")).code, 0);
  ASSERT_EQ(run_cli("matrix --config " + cfg + " --seed 2 --out " + quoted(dir / "r2")).code, 0);
  EXPECT_NE(io::read_text_file(dir / "r1/results.provenance.txt"),
            io::read_text_file(dir / "r2/results.provenance.txt"));
}

TEST(Cli, ReportOnReferenceGrid) {
  const auto dir = scratch_dir();
  const std::string data = std::string(XDT_SOURCE_DIR) + "/data/";
  const auto r = run_cli("report --results '" + data + "reference_grid.tsv' --baselines '" + data +
                         "reference_baselines.tsv' --out " + quoted(dir / "rep"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto mar = io::read_text_file(dir / "rep/mar.md");
  EXPECT_NE(mar.find("1.88"), std::string::npos) << mar;
  EXPECT_NE(mar.find("2.04"), std::string::npos) << mar;
  EXPECT_TRUE(std::filesystem::exists(dir / "rep/provenance.txt"));
}

TEST(Cli, ReportOnMalformedResultsExitsWithTwo) {
  const auto dir = scratch_dir();
  write_text(dir / "bad.tsv", "train_ds\teval_ds\na\tb\n");
  EXPECT_EQ(run_cli("report --results " + quoted(dir / "bad.tsv") + " --out " + quoted(dir / "r")).code, 2);
}

}  // namespace
}  // namespace xdt
