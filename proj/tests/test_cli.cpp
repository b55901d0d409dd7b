#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "gnnfp/bench.hpp"
#include "gnnfp/training.hpp"

using namespace gnnfp;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "gnnfp_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

int run(const std::string& args) {
  const std::string cmd = std::string(GNNFP_CLI) + " " + args + " > " + at("stdout.txt") + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 3 samples of a 2-cell, 2-user, 2-antenna network plus a one-epoch model.
void ensure_fixture() {
  static const bool done = [] {
    EXPECT_EQ(run("gen --cells 2 --users 2 --tx 2 --samples 3 --seed 4 --out " + at("d.bin")), 0);
    EXPECT_EQ(run("harvest --data " + at("d.bin") + " --iters 2 --split all --out " + at("h.bin")), 0);
    EXPECT_EQ(run("train --harvest " + at("h.bin") + " --out " + at("m.gnfp") + " --epochs 1 --batch 4"), 0);
    return true;
  }();
  (void)done;
}

}  // namespace

TEST(Cli, GenIsDeterministic) {
  ensure_fixture();
  ASSERT_EQ(run("gen --cells 2 --users 2 --tx 2 --samples 3 --seed 4 --out " + at("d2.bin")), 0);
  EXPECT_EQ(slurp(at("d.bin")), slurp(at("d2.bin")));
  EXPECT_TRUE(fs::exists(at("d.bin") + ".json"));
  ASSERT_EQ(run("gen --samples 0 --out " + at("empty.bin")), 0);
  EXPECT_EQ(load_dataset(at("empty.bin")).samples.size(), 0u);
}

TEST(Cli, HarvestAndTrainOutputs) {
  ensure_fixture();
  EXPECT_EQ(load_subproblems(at("h.bin")).size(), 3u * 2u * 2u);
  EXPECT_EQ(load_model(at("m.gnfp")).parameter_count(), 7890u);
}

TEST(Cli, BenchAndPlot) {
  ensure_fixture();
  ASSERT_EQ(run("bench --data " + at("d.bin") + " --model " + at("m.gnfp") +
                " --iters 2 --fp-baseline-iters 4 --split all --timing-instances 1 --csv " + at("b.csv") +
                " --trace " + at("t.csv")),
            0);
  const auto rows = read_bench_csv(at("b.csv"));
  bool baseline = false;
  for (const auto& r : rows) baseline |= r.algorithm == "fp" && r.iteration == 4;
  EXPECT_TRUE(baseline);
  EXPECT_NE(slurp(at("stdout.txt")).find("not reproduced"), std::string::npos);
  ASSERT_EQ(run("plot --csv " + at("b.csv") + " --out " + at("p1.svg")), 0);
  ASSERT_EQ(run("plot --csv " + at("b.csv") + " --out " + at("p2.svg")), 0);
  EXPECT_EQ(slurp(at("p1.svg")), slurp(at("p2.svg")));
}

TEST(Cli, ExitCodes) {
  ensure_fixture();
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("gen --bogus"), 2);
  EXPECT_EQ(run("gen --cells 0 --out " + at("x.bin")), 2);
  EXPECT_EQ(run("harvest --data " + at("d.bin") + " --policy model --out " + at("x.bin")), 2);
  EXPECT_EQ(run("bench --data " + at("missing.bin") + " --csv " + at("x.csv")), 3);
  {
    const std::string bytes = slurp(at("d.bin"));
    std::ofstream(at("cut.bin"), std::ios::binary) << bytes.substr(0, 20);
  }
  EXPECT_EQ(run("bench --data " + at("cut.bin") + " --csv " + at("x.csv")), 3);
  EXPECT_EQ(run("bench --data " + at("d.bin") + " --model " + at("d.bin") + " --split all --csv " + at("x.csv")), 3);

  GnnModel poisoned = load_model(at("m.gnfp"));
  poisoned.decoder.weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  save_model(poisoned, at("nan.gnfp"));
  EXPECT_EQ(run("train --harvest " + at("h.bin") + " --init " + at("nan.gnfp") + " --out " + at("y.gnfp") +
                " --epochs 1 --batch 4"),
            4);

  GnnDims dims;
  dims.input = 3;
  save_model(init_model(dims, 1), at("wide.gnfp"));
  EXPECT_EQ(run("bench --data " + at("d.bin") + " --model " + at("wide.gnfp") +
                " --iters 1 --split all --timing-instances 1 --csv " + at("x.csv")),
            5);
}
