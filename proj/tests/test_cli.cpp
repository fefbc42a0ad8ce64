#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <span>
#include <regex>
#include <string>
#include <vector>

#include "cli/cli.hpp"
#include "cli/manifest.hpp"
#include "cli/svg.hpp"
#include "tdir/io.hpp"

namespace fs = std::filesystem;
using tdir::read_file;
namespace cli = tdir::cli;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("tdir-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string p(const std::string& name) const { return (root_ / name).string(); }

  void make_data(const std::string& name = "data", const std::string& per_class = "8") {
    ASSERT_EQ(cli::run({"synth", "--out", p(name), "--subjects-per-class", per_class, "--seed", "1"}), 0);
  }

  fs::path root_;
};

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_F(Cli, SynthIsDeterministic) {
  make_data("a");
  make_data("b");
  for (const auto& e : fs::directory_iterator(p("a"))) {
    const auto name = e.path().filename().string();
    if (name == "run_manifest.json") continue;
    EXPECT_EQ(read_file(e.path()), read_file(fs::path(p("b")) / name)) << name;
  }
}

TEST_F(Cli, PretrainHistoryHasOneRowPerEpoch) {
  make_data();
  ASSERT_EQ(cli::run({"pretrain", "--data", p("data"), "--out", p("pre"), "--epochs", "3", "--patience", "3"}), 0);
  const auto hist = read_file(p("pre") + "/history.csv");
  EXPECT_EQ(hist.rfind("epoch,train_loss,val_auc\n", 0), 0u);
  EXPECT_EQ(line_count(hist), 4u);  // header plus three epochs
  EXPECT_TRUE(fs::exists(p("pre") + "/pretrain.ckpt"));
}

TEST_F(Cli, ManifestRecordsResolvedFlagsAndReplaysIdentically) {
  make_data();
  ASSERT_EQ(cli::run({"pretrain", "--data", p("data"), "--out", p("pre"), "--epochs", "2", "--patience", "2"}), 0);
  const auto m = cli::read_manifest(p("pre") + "/run_manifest.json");
  EXPECT_EQ(m.command, "pretrain");
  EXPECT_EQ(m.flags.at("epochs"), "2");
  EXPECT_EQ(m.flags.at("batch"), "32");  // defaults are recorded too
  ASSERT_EQ(cli::run({"replay", p("pre") + "/run_manifest.json", "--out", p("again")}), 0);
  EXPECT_EQ(read_file(p("pre") + "/pretrain.ckpt"), read_file(p("again") + "/pretrain.ckpt"));
  EXPECT_EQ(read_file(p("pre") + "/history.csv"), read_file(p("again") + "/history.csv"));
}

TEST_F(Cli, ValidationErrorsExitOne) {
  make_data();
  EXPECT_EQ(cli::run({"pretrain", "--data", p("missing"), "--out", p("o")}), cli::kExitValidation);
  EXPECT_EQ(cli::run({"pretrain", "--data", p("data"), "--out", p("o"), "--lr", "-1"}), cli::kExitValidation);
  EXPECT_EQ(cli::run({"pretrain", "--data", p("data"), "--out", p("data")}), cli::kExitValidation);
  EXPECT_EQ(cli::run({"pretrain", "--data", p("data")}), cli::kExitValidation);
  EXPECT_EQ(cli::run({"no-such-command"}), cli::kExitValidation);
  EXPECT_EQ(cli::run({"finetune", "--data", p("data"), "--out", p("o"), "--balance", "sideways"}),
            cli::kExitValidation);
  EXPECT_FALSE(fs::exists(p("o") + "/run_manifest.json"));
}

TEST_F(Cli, CheckpointShapeMismatchExitsOne) {
  make_data();
  ASSERT_EQ(cli::run({"synth", "--out", p("wide"), "--components", "20", "--subjects-per-class", "8"}), 0);
  ASSERT_EQ(cli::run({"pretrain", "--data", p("wide"), "--out", p("pre"), "--epochs", "1", "--patience", "1"}), 0);
  EXPECT_EQ(cli::run({"finetune", "--data", p("data"), "--out", p("ft"), "--init", p("pre") + "/pretrain.ckpt",
                      "--epochs", "1", "--patience", "1", "--folds", "2"}),
            cli::kExitValidation);
}

TEST_F(Cli, UnwritableOutputExitsTwo) {
  make_data();
  tdir::write_file_atomic(p("blocker"), "x");
  EXPECT_EQ(cli::run({"pretrain", "--data", p("data"), "--out", p("blocker") + "/sub", "--epochs", "1", "--patience",
                      "1"}),
            cli::kExitRuntime);
}

TEST_F(Cli, GradcheckCorruptionExitsTwoAndNamesTheOp) {
  ASSERT_EQ(cli::run({"gradcheck", "--out", p("ok"), "--points", "2"}), 0);
  EXPECT_EQ(cli::run({"gradcheck", "--out", p("bad"), "--points", "2", "--corrupt", "sigmoid"}), cli::kExitRuntime);
  const auto csv = read_file(p("bad") + "/gradcheck.csv");
  EXPECT_NE(csv.find("sigmoid"), std::string::npos);
  EXPECT_NE(csv.find("FAIL"), std::string::npos);
  EXPECT_TRUE(fs::exists(p("bad") + "/run_manifest.json"));
}

TEST_F(Cli, SweepWritesOneRowPerRun) {
  make_data("data", "12");
  ASSERT_EQ(cli::run({"pretrain", "--data", p("data"), "--out", p("pre"), "--epochs", "1", "--patience", "1"}), 0);
  ASSERT_EQ(cli::run({"sweep", "--data", p("data"), "--out", p("sw"), "--init", p("pre") + "/pretrain.ckpt",
                      "--sizes", "2,full", "--repeats", "3", "--epochs", "1", "--patience", "1", "--val-size", "4",
                      "--test-size", "4"}),
            0);
  // 2 sizes x 2 arms x 3 repeats plus the header.
  EXPECT_EQ(line_count(read_file(p("sw") + "/runs.csv")), 13u);
  EXPECT_EQ(line_count(read_file(p("sw") + "/comparison.csv")), 3u);
}

TEST_F(Cli, ReportMediansMatchTheSummary) {
  tdir::write_file_atomic(p("runs.csv"),
                          "dataset,arm,subjects_per_class,repeat,test_auc\n"
                          "toy,PTR,5,0,0.7\ntoy,PTR,5,1,0.9\ntoy,PTR,5,2,0.8\n"
                          "toy,NPT,5,0,0.6\ntoy,NPT,5,1,0.5\ntoy,NPT,5,2,0.65\n");
  ASSERT_EQ(cli::run({"report", "--runs", p("runs.csv"), "--out", p("rep")}), 0);
  const auto summary = read_file(p("rep") + "/summary.csv");
  EXPECT_TRUE(std::regex_search(summary, std::regex(R"(toy,PTR,5,[0-9.]+,0\.8,3\n)"))) << summary;
  EXPECT_TRUE(std::regex_search(summary, std::regex(R"(toy,NPT,5,[0-9.]+,0\.6,3\n)"))) << summary;

  std::string svg;
  for (const auto& e : fs::directory_iterator(p("rep"))) {
    if (e.path().extension() == ".svg") svg = read_file(e.path());
  }
  ASSERT_FALSE(svg.empty());
  const std::regex box(R"re(data-arm="(\w+)" data-n="(\d+)" data-median="([^"]+)")re");
  std::map<std::string, std::string> medians;
  for (std::sregex_iterator it(svg.begin(), svg.end(), box), end; it != end; ++it) medians[(*it)[1]] = (*it)[3];
  EXPECT_EQ(medians.at("PTR"), "0.8");
  EXPECT_EQ(medians.at("NPT"), "0.6");
}

TEST_F(Cli, ReportRejectsMalformedRuns) {
  tdir::write_file_atomic(p("runs.csv"), "dataset,arm,subjects_per_class,repeat,test_auc\ntoy,XYZ,5,0,0.7\n");
  EXPECT_EQ(cli::run({"report", "--runs", p("runs.csv"), "--out", p("rep")}), cli::kExitValidation);
}

TEST(Svg, DegenerateBoxCollapses) {
  const std::vector<double> one{0.7};
  const auto b = cli::box_stats(one);
  EXPECT_EQ(b.min, 0.7);
  EXPECT_EQ(b.q1, 0.7);
  EXPECT_EQ(b.median, 0.7);
  EXPECT_EQ(b.q3, 0.7);
  EXPECT_EQ(b.max, 0.7);
  const std::vector<double> four{0.1, 0.2, 0.3, 0.4};
  const auto q = cli::box_stats(four);
  EXPECT_NEAR(q.q1, 0.175, 1e-12);
  EXPECT_NEAR(q.median, 0.25, 1e-12);
  EXPECT_NEAR(q.q3, 0.325, 1e-12);
  EXPECT_THROW(cli::box_stats(std::span<const double>{}), std::invalid_argument);
}
