#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "cli_runner.hpp"

namespace faster {
namespace {

namespace fs = std::filesystem;
using testing::parse_csv;
using testing::run_cli;
using testing::slurp;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("faster_lab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  testing::CliRun run(const std::string& args) { return run_cli(FASTER_LAB_CLI, args, dir_); }

  double total_gflops(const std::string& csv) {
    const auto rows = parse_csv(csv);
    EXPECT_FALSE(rows.empty());
    EXPECT_EQ(rows.back().at(0), "total");
    return std::stod(rows.back().at(2));
  }

  fs::path dir_;
};

TEST_F(Cli, FlopsBackboneMatchesTableTwo) {
  const auto r = run("flops --backbone r21d50 --frames 32");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NEAR(total_gflops(r.out), 119.9, 0.10 * 119.9);
  const auto cheap = run("flops --backbone r2d26 --frames 8");
  ASSERT_EQ(cheap.exit_code, 0) << cheap.err;
  EXPECT_NEAR(total_gflops(cheap.out), 3.2, 0.10 * 3.2);
}

TEST_F(Cli, FlopsScheduleMatchesTableFour) {
  const auto r = run("flops --pattern 1:1 --frames 8 --clips 32 --method fast-gru");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NEAR(total_gflops(r.out), 553.6, 0.05 * 553.6);
}

TEST_F(Cli, FlopsInfeasiblePatternFails) {
  const auto r = run("flops --pattern 1:15 --clips 8");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("infeasible"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());
}

TEST_F(Cli, StdoutIsPureCsv) {
  const auto r = run("flops --backbone r2d26 --frames 8");
  ASSERT_EQ(r.exit_code, 0);
  const auto rows = parse_csv(r.out);
  ASSERT_GT(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"layer", "macs", "gflops"}));
  for (const auto& row : rows) EXPECT_EQ(row.size(), 3u);
  EXPECT_NE(r.err.find("[flops]"), std::string::npos);
}

TEST_F(Cli, PresetsSetClipLengthAndPattern) {
  const auto r16 = run("flops --preset faster16");
  ASSERT_EQ(r16.exit_code, 0) << r16.err;
  EXPECT_NE(r16.err.find("frames=16\nclips=16\npattern=\"1:7\""), std::string::npos) << r16.err;
  const auto r32 = run("flops --preset faster32");
  ASSERT_EQ(r32.exit_code, 0) << r32.err;
  EXPECT_NE(r32.err.find("frames=32\nclips=8\npattern=\"1:1\""), std::string::npos) << r32.err;
}

TEST_F(Cli, UnknownFlagExitsWithUsage) {
  const auto r = run("flops --no-such-flag");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("Usage:"), std::string::npos) << r.err;
  EXPECT_EQ(run("frobnicate").exit_code, 2);
}

TEST_F(Cli, GradcheckAllPasses) {
  const auto r = run("gradcheck --all");
  EXPECT_EQ(r.exit_code, 0) << r.err;
  const auto rows = parse_csv(r.out);
  ASSERT_GT(rows.size(), 1u);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i].back(), "1") << rows[i][0];
  EXPECT_EQ(run("gradcheck --op no-such-op").exit_code, 2);
}

TEST_F(Cli, ConfigFileLayersUnderCommandLine) {
  {
    std::ofstream cfg(dir_ / "run.ini");
    cfg << "[gen]\nn=6\nout=\"d.fvds\"\nnoise=4\n";
  }
  const auto from_file = run("--config run.ini gen");
  ASSERT_EQ(from_file.exit_code, 0) << from_file.err;
  EXPECT_NE(from_file.err.find("noise=4\n"), std::string::npos);
  EXPECT_NE(from_file.err.find("n=6\n"), std::string::npos);
  const auto overridden = run("gen --config run.ini --noise 5");
  ASSERT_EQ(overridden.exit_code, 0) << overridden.err;
  EXPECT_NE(overridden.err.find("noise=5\n"), std::string::npos);
  const auto defaults = run("gen -n 6 --out e.fvds");
  EXPECT_NE(defaults.err.find("noise=8\n"), std::string::npos);
  {
    std::ofstream cfg(dir_ / "bad.ini");
    cfg << "[gen]\nn=6\nout=\"d.fvds\"\nbogus=1\n";
  }
  EXPECT_EQ(run("--config bad.ini gen").exit_code, 2);
}

TEST_F(Cli, ErrorsMapToDistinctExitCodes) {
  ASSERT_EQ(run("gen --task order -n 8 --seed 1 --out d.fvds").exit_code, 0);
  EXPECT_EQ(run("train --data d.fvds --out m --lr -1").exit_code, 2);
  EXPECT_EQ(run("train --data d.fvds --out m --pattern 2:3").exit_code, 2);
  EXPECT_EQ(run("train --data missing.fvds --out m").exit_code, 3);
  {
    std::ofstream junk(dir_ / "junk.fvds");
    junk << "not a dataset";
  }
  EXPECT_EQ(run("train --data junk.fvds --out m").exit_code, 3);
  EXPECT_EQ(run("eval --checkpoint nowhere --data d.fvds").exit_code, 3);
  ASSERT_EQ(run("gen --task order -n 48 --seed 1 --out big.fvds").exit_code, 0);
  EXPECT_EQ(run("train --data big.fvds --out m --epochs 1 --lr 1e30").exit_code, 4);
}

TEST_F(Cli, PipelineWritesArtifactsAndReplaysFromDump) {
  ASSERT_EQ(run("gen --task order -n 16 --seed 1 --out train.fvds").exit_code, 0);
  ASSERT_EQ(run("gen --task order -n 8 --seed 2 --out test.fvds").exit_code, 0);
  ASSERT_EQ(run("train --stage backbone --backbone r21d50 --data train.fvds --out e --epochs 1").exit_code, 0);
  ASSERT_EQ(run("train --stage backbone --backbone r2d26 --data train.fvds --out c --epochs 1").exit_code, 0);
  const auto agg = run(
      "train --stage aggregator --method fast-gru --expensive e --cheap c --data train.fvds --val test.fvds "
      "--out a --epochs 1 --clips 4 --cache-features");
  ASSERT_EQ(agg.exit_code, 0) << agg.err;
  for (const char* d : {"e", "c", "a"}) {
    EXPECT_TRUE(fs::exists(dir_ / d / "config.ini")) << d;
    EXPECT_TRUE(fs::exists(dir_ / d / "metrics.csv")) << d;
  }
  const auto metrics = parse_csv(slurp(dir_ / "a" / "metrics.csv"));
  EXPECT_EQ(metrics.front(), (std::vector<std::string>{"epoch", "split", "loss", "top1"}));
  EXPECT_EQ(metrics.size(), 5u);

  const auto eval = run("eval --checkpoint a --data test.fvds");
  ASSERT_EQ(eval.exit_code, 0) << eval.err;
  const auto rows = parse_csv(eval.out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"videos", "k", "loss", "top1", "topk"}));
  EXPECT_EQ(rows[1][0], "8");
  EXPECT_DOUBLE_EQ(std::stod(rows[1][3]), std::stod(metrics.back()[3]));

  ASSERT_EQ(run("--config a/config.ini train --out replay").exit_code, 0);
  EXPECT_EQ(slurp(dir_ / "replay" / "metrics.csv"), slurp(dir_ / "a" / "metrics.csv"));
  EXPECT_EQ(slurp(dir_ / "replay" / "config.ini"), slurp(dir_ / "a" / "config.ini").replace(
                                                       slurp(dir_ / "a" / "config.ini").find("out=\"a\""), 7,
                                                       "out=\"replay\""));
}

TEST_F(Cli, SweepRowsSortedAndInfeasibleLogged) {
  ASSERT_EQ(run("gen --task order -n 8 --seed 1 --out train.fvds").exit_code, 0);
  ASSERT_EQ(run("gen --task order -n 4 --seed 2 --out test.fvds").exit_code, 0);
  const auto missing = run("sweep --dir ck --test test.fvds --patterns 1:1 --frames 8 --budget 64");
  EXPECT_EQ(missing.exit_code, 3);
  EXPECT_NE(missing.err.find("ck/fast-gru-L8-N8-1-1"), std::string::npos) << missing.err;

  const auto r = run(
      "sweep --dir ck --data train.fvds --test test.fvds --patterns 1:0,1:1,1:3,1:7 --frames 8,16 --budget 64 "
      "--train-inline --backbone-epochs 1 --epochs 1");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto rows = parse_csv(r.out);
  ASSERT_EQ(rows.front(), (std::vector<std::string>{"pattern", "frames", "clips", "gflops", "top1"}));
  // 4 patterns x 2 clip lengths, minus 1:7 at N=4.
  EXPECT_EQ(rows.size() - 1, 7u);
  EXPECT_NE(r.err.find("infeasible pattern 1:7 for 4 clips"), std::string::npos);
  for (std::size_t i = 2; i < rows.size(); ++i) EXPECT_LE(std::stod(rows[i - 1][3]), std::stod(rows[i][3]));

  std::vector<double> at_l8;  // in order of x = 0, 1, 3, 7
  for (const char* p : {"all-e", "1:1", "1:3", "1:7"})
    for (const auto& row : rows)
      if (row[0] == p && row[1] == "8") at_l8.push_back(std::stod(row[3]));
  ASSERT_EQ(at_l8.size(), 4u);
  for (std::size_t i = 1; i < at_l8.size(); ++i) EXPECT_LT(at_l8[i], at_l8[i - 1]);
}

}  // namespace
}  // namespace faster
