#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

#include "pdprog/csv.hpp"
#include "test_util.hpp"

using pdprog::testing::read_text;
using pdprog::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

/// Runs the CLI with `args`, capturing stdout and stderr.
Run run(const TempDir& dir, const std::string& args) {
  const std::string log = dir.file("cli.log");
  const std::string cmd = std::string("\"") + PDPROG_CLI_PATH + "\" " + args + " > \"" + log + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text(log);
  return r;
}

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

/// Small cohort plus fast training flags shared by the train tests.
class CliTrain : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto g = run(dir_, "generate --patients 40 --seed 3 --data-dir " + data());
    ASSERT_EQ(g.code, 0) << g.out;
  }
  std::string data() const { return dir_.file("data"); }
  std::string out(const std::string& name) const { return dir_.file(name); }

  TempDir dir_;
};

}  // namespace

TEST(CliUsage, HelpAndBadArguments) {
  TempDir d;
  EXPECT_EQ(run(d, "--help").code, 0);
  EXPECT_EQ(run(d, "").code, 1);
  EXPECT_EQ(run(d, "frobnicate").code, 1);
  EXPECT_EQ(run(d, "train --no-such-flag").code, 1);
  EXPECT_EQ(run(d, "train --model gru").code, 1);
}

TEST(CliGenerate, DefaultCohortHas248Patients) {
  TempDir d;
  const auto r = run(d, "generate --data-dir " + d.file("data"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(contains(r.out, "patients:            248")) << r.out;
  for (const char* f : {"train_peptides.csv", "train_proteins.csv", "train_clinical_data.csv",
                        "supplemental_clinical_data.csv"}) {
    EXPECT_TRUE(fs::exists(fs::path(d.file("data")) / f)) << f;
  }
}

TEST(CliGenerate, SameSeedGivesIdenticalFiles) {
  TempDir d;
  ASSERT_EQ(run(d, "generate --patients 30 --seed 7 --data-dir " + d.file("a")).code, 0);
  ASSERT_EQ(run(d, "generate --patients 30 --seed 7 --data-dir " + d.file("b")).code, 0);
  ASSERT_EQ(run(d, "generate --patients 30 --seed 8 --data-dir " + d.file("c")).code, 0);
  for (const char* f : {"train_peptides.csv", "train_proteins.csv", "train_clinical_data.csv"}) {
    EXPECT_EQ(read_text((fs::path(d.file("a")) / f).string()), read_text((fs::path(d.file("b")) / f).string())) << f;
  }
  EXPECT_NE(read_text(d.file("a/train_clinical_data.csv")), read_text(d.file("c/train_clinical_data.csv")));
}

TEST(CliGenerate, ZeroPatientsIsUsageError) {
  TempDir d;
  const auto r = run(d, "generate --patients 0 --data-dir " + d.file("data"));
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_TRUE(contains(r.out, "InvalidConfig")) << r.out;
}

TEST(CliData, MissingOrBrokenDataIsDataError) {
  TempDir d;
  EXPECT_EQ(run(d, "profile --data-dir " + d.file("nowhere")).code, 2);
  ASSERT_EQ(run(d, "generate --patients 20 --data-dir " + d.file("data")).code, 0);
  pdprog::testing::write_text(d.file("data/train_clinical_data.csv"), "visit_id,patient_id\nx,1\n");
  EXPECT_EQ(run(d, "profile --data-dir " + d.file("data")).code, 2);
}

TEST(CliConfig, BadConfigFileIsUsageError) {
  TempDir d;
  pdprog::testing::write_text(d.file("bad.json"), R"({"unknown_key": 1})");
  EXPECT_EQ(run(d, "profile --config " + d.file("bad.json")).code, 1);
  pdprog::testing::write_text(d.file("neg.json"), R"({"train": {"batch_size": 1}})");
  EXPECT_EQ(run(d, "train --config " + d.file("neg.json")).code, 1);
}

TEST_F(CliTrain, ProfileAndAnalyze) {
  const auto p = run(dir_, "profile --data-dir " + data());
  ASSERT_EQ(p.code, 0) << p.out;
  EXPECT_TRUE(contains(p.out, "patients:            40")) << p.out;
  EXPECT_TRUE(contains(p.out, "violations:")) << p.out;

  const auto a = run(dir_, "analyze --data-dir " + data() + " --out-dir " + out("an"));
  ASSERT_EQ(a.code, 0) << a.out;
  const auto corr = pdprog::csv::read_file(out("an/correlation.csv"));
  EXPECT_EQ(corr.rows.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(std::stod(corr.rows[i][i + 1]), 1.0);
  const auto kde = pdprog::csv::read_file(out("an/kde_curves.csv"));
  std::set<std::pair<std::string, std::string>> curves;
  std::set<std::string> peptides;
  for (const auto& row : kde.rows) {
    curves.insert({row[0], row[1]});
    peptides.insert(row[0]);
  }
  EXPECT_EQ(curves.size(), 2 * peptides.size());
  EXPECT_TRUE(fs::exists(out("an/config.json")));
}

TEST_F(CliTrain, TrainWritesReportAndHonoursEpochLimit) {
  const auto r = run(dir_, "train --model lstm --max-epochs 2 --data-dir " + data() + " --out-dir " + out("lstm"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto hist = pdprog::csv::read_file(out("lstm/history.csv"));
  EXPECT_EQ(hist.header, (std::vector<std::string>{"epoch", "train_loss", "val_loss"}));
  EXPECT_GE(hist.rows.size(), 1u);
  EXPECT_LE(hist.rows.size(), 2u);
  const auto rep = pdprog::csv::read_file(out("lstm/report.csv"));
  ASSERT_EQ(rep.rows.size(), 5u);
  EXPECT_EQ(rep.rows[0][0], "updrs_1");
  EXPECT_EQ(rep.rows[3][0], "updrs_4");
  EXPECT_EQ(rep.rows[4][0], "Average");
  for (const char* f : {"checkpoint.bin", "predictions.csv", "config.json", "summary.csv"}) {
    EXPECT_TRUE(fs::exists(fs::path(out("lstm")) / f)) << f;
  }
}

TEST_F(CliTrain, ConfigEchoReproducesReportAndEvaluateAgrees) {
  const std::string flags = " --model kan --max-epochs 3 --data-dir " + data();
  ASSERT_EQ(run(dir_, "train" + flags + " --out-dir " + out("r1")).code, 0);
  const auto again = run(dir_, "train --config " + out("r1/config.json") + " --out-dir " + out("r2"));
  ASSERT_EQ(again.code, 0) << again.out;
  EXPECT_EQ(read_text(out("r1/report.csv")), read_text(out("r2/report.csv")));
  EXPECT_EQ(read_text(out("r1/checkpoint.bin")), read_text(out("r2/checkpoint.bin")));

  const auto ev = run(dir_, "evaluate --data-dir " + data() + " --out-dir " + out("r1"));
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_EQ(read_text(out("r1/eval_report.csv")), read_text(out("r1/report.csv")));
}

TEST_F(CliTrain, EvaluateOnOtherDataIsDataError) {
  ASSERT_EQ(run(dir_, "train --model lstm --max-epochs 1 --data-dir " + data() + " --out-dir " + out("r")).code, 0);
  ASSERT_EQ(run(dir_, "generate --patients 40 --seed 4 --data-dir " + out("other")).code, 0);
  EXPECT_EQ(run(dir_, "evaluate --data-dir " + out("other") + " --out-dir " + out("r")).code, 2);
}

TEST_F(CliTrain, BenchmarkEmitsTwoRows) {
  const auto r = run(dir_, "benchmark --max-epochs 2 --data-dir " + data() + " --out-dir " + out("bm"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto t = pdprog::csv::read_file(out("bm/benchmark.csv"));
  EXPECT_EQ(t.header, (std::vector<std::string>{"model", "avg_smape", "avg_mse", "avg_rmse", "train_seconds"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "lstm");
  EXPECT_EQ(t.rows[1][0], "kan");
  EXPECT_TRUE(contains(r.out, "mean")) << r.out;
}

TEST(CliGradcheck, PassesAndReportsFailures) {
  TempDir d;
  const auto ok = run(d, "gradcheck --seeds 2");
  EXPECT_EQ(ok.code, 0) << ok.out;
  for (const char* f : {"linear", "batchnorm", "lstm", "attention", "kan"}) EXPECT_TRUE(contains(ok.out, f)) << f;
  EXPECT_EQ(run(d, "gradcheck --seeds 2 --eps 1e-3").code, 0);
  const auto bad = run(d, "gradcheck --seeds 1 --tol 1e-30");
  EXPECT_EQ(bad.code, 3) << bad.out;
  EXPECT_TRUE(contains(bad.out, "FAIL") || contains(bad.out, "fail")) << bad.out;
}
