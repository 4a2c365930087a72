#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "alignmamba/bench.hpp"
#include "alignmamba/train.hpp"

namespace fs = std::filesystem;
using namespace alignmamba;

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr
};

Run cli(const std::string& args) {
  Run r;
  const std::string cmd = std::string(ALIGNMAMBA_CLI) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("alignmamba_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "small.json") << R"({
      "synth": {"modalities": [{"name": "a", "d_in": 4, "steps": 3},
                               {"name": "b", "d_in": 3, "steps": 4}],
                "samples_per_class": 10},
      "model": {"d_model": 6, "d_state": 4},
      "train": {"max_epochs": 2}
    })";
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(Cli, MissingConfigIsUsageError) {
  const auto r = cli("train --config " + path("nope.json") + " --out " + path("run"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find(path("nope.json")), std::string::npos) << r.out;
}

TEST_F(Cli, UnknownSubcommandIsUsageError) {
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("bench --kernels flash --csv " + path("b.csv")).code, 2);
}

TEST_F(Cli, BenchGridFromFlags) {
  const auto r = cli("bench --kernels mamba_fusion attention_fusion --lengths 1024 2048 --trials 3 "
                     "--d-model 8 --csv " + path("b.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto samples = bench::read_csv(path("b.csv"));
  std::set<std::pair<bench::Kernel, std::size_t>> cells;
  for (const auto& s : samples) cells.insert({s.kernel, s.length});
  EXPECT_EQ(cells.size(), 4u);
  EXPECT_EQ(samples.size(), 12u);
}

TEST_F(Cli, BenchDefaultLengths) {
  const auto r = cli("bench --kernels mamba_fusion --trials 3 --d-model 4 --csv " + path("b.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::set<std::size_t> lengths;
  for (const auto& s : bench::read_csv(path("b.csv"))) lengths.insert(s.length);
  EXPECT_EQ(lengths, (std::set<std::size_t>{1024, 2048, 4096, 8192, 16384}));
}

TEST_F(Cli, BenchAssertFailsOnWrongExpectation) {
  const auto r = cli("bench --kernels mamba_fusion attention_fusion --lengths 512 1024 2048 --trials 3 "
                     "--d-model 8 --expect attention_fusion=linear --assert --csv " + path("b.csv"));
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(cli("bench --expect attention_fusion=cubic --csv " + path("c.csv")).code, 2);
}

TEST_F(Cli, GenDataIsDeterministic) {
  ASSERT_EQ(cli("gen-data --config " + path("small.json") + " --out " + path("d1")).code, 0);
  ASSERT_EQ(cli("gen-data --config " + path("small.json") + " --out " + path("d2")).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir_ / "d1")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto other = dir_ / "d2" / fs::relative(e.path(), dir_ / "d1");
    EXPECT_EQ(slurp(e.path()), slurp(other)) << e.path();
  }
  EXPECT_GT(files, 1u);
  const auto again = cli("gen-data --config " + path("small.json") + " --out " + path("d1"));
  EXPECT_EQ(again.code, 2);
  EXPECT_EQ(cli("gen-data --config " + path("small.json") + " --out " + path("d1") + " --force").code, 0);
}

TEST_F(Cli, EvalOnTrainMatchesLoggedAccuracy) {
  ASSERT_EQ(cli("gen-data --config " + path("small.json") + " --out " + path("data")).code, 0);
  const auto t = cli("train --quiet --config " + path("small.json") + " --data " + path("data") +
                     " --out " + path("run"));
  ASSERT_EQ(t.code, 0) << t.out;
  const auto log = train::read_metrics_csv(dir_ / "run" / "metrics.csv");
  ASSERT_GE(log.size(), 2u);
  const auto& last_train = log[log.size() - 2];
  ASSERT_EQ(last_train.split, "train");

  const auto e = cli("eval --checkpoint " + path("run/checkpoint") + " --data " + path("data") +
                     " --split train");
  ASSERT_EQ(e.code, 0) << e.out;
  std::istringstream in(e.out);
  std::string word;
  double acc = -1.0;
  in >> word >> acc;
  EXPECT_EQ(word, "accuracy");
  EXPECT_EQ(acc, last_train.accuracy);

  EXPECT_EQ(cli("train --config " + path("small.json") + " --out " + path("run")).code, 2);
}

TEST_F(Cli, SweepWritesOneRowPerValue) {
  const auto r = cli("sweep --quiet --config " + path("small.json") +
                     " --param lambda_mmd --grid 0 0.001 0.01 0.1 --out " + path("sweep.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream in(path("sweep.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "param,value,accuracy,f1");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(line.rfind("lambda_mmd,", 0), 0u) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 4u);
  EXPECT_EQ(cli("sweep --config " + path("small.json") + " --param dropout --grid 0 --out " +
                path("x.csv")).code, 2);
}

}  // namespace
