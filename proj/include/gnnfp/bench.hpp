#pragma once

// Benchmark harness: WSR-per-iteration curves, per-iteration timing, the
// users-per-cell sweep, and CSV / SVG emission.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gnnfp/channel.hpp"
#include "gnnfp/fp_solvers.hpp"
#include "gnnfp/gnn.hpp"

namespace gnnfp {

enum class Algorithm { kFp, kFastFp, kGnnFp };
std::string algorithm_name(Algorithm a);
Algorithm parse_algorithm(const std::string& name);
std::vector<Algorithm> parse_algorithms(const std::string& list);

enum class Precision { kDouble, kFloat };
Precision parse_precision(const std::string& name);

struct BenchOptions {
  std::vector<Algorithm> algorithms{Algorithm::kFp, Algorithm::kFastFp, Algorithm::kGnnFp};
  int iterations = 16;
  int baseline_iterations = 100;
  StepRule step_rule = StepRule::kEigen;
  Precision precision = Precision::kDouble;
  /// Instances (from the front of the list) used for wall-clock timing.
  std::size_t timing_instances = 10;
  int timing_repetitions = 5;
  int warmup_runs = 1;
  bool bits = false;
};

/// A solver trajectory for one instance.
using Runner = std::function<SolverTrace(const NetworkInstance&, int iterations)>;
Runner make_runner(Algorithm a, const BenchOptions& options, const GnnModel* model);

struct BenchRow {
  std::string algorithm;
  int iteration = 0;
  double mean_wsr = 0.0;
  double normalized_pct = 0.0;
  double elapsed_ms = 0.0;
};

struct TraceRow {
  std::string algorithm;
  std::size_t instance_id = 0;
  int iteration = 0;
  double wsr = 0.0;
  double elapsed_ms = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<TraceRow> traces;
  /// Mean WSR of classical FP after baseline_iterations.
  double baseline_wsr = 0.0;
  std::size_t parameter_count = 0;
  bool bits = false;
};

/// Runs every algorithm from the MRT initializer on the listed samples.
/// The FP row at baseline_iterations is 100 by construction. elapsed_ms is
/// the cumulative solver time at each iteration: per timing instance the
/// median over repetitions (after warm-up), then averaged over instances.
BenchReport run_bench(const Dataset& data, std::span<const std::size_t> samples, const BenchOptions& options,
                      const GnnModel* model);

/// Per-iteration wall time (ms) of each of `iterations` iterations on one
/// instance: the median over repetitions of each iteration's duration.
std::vector<double> per_iteration_ms(const Runner& runner, const NetworkInstance& inst, int iterations,
                                     int repetitions, int warmups);

void write_bench_csv(const BenchReport& report, const std::filesystem::path& path);
void write_trace_csv(const BenchReport& report, const std::filesystem::path& path);
/// Reads algorithm, iteration, mean_wsr columns of a bench CSV.
std::vector<BenchRow> read_bench_csv(const std::filesystem::path& path);

/// Self-contained line chart, one series per algorithm in first-seen order.
std::string render_svg(std::span<const BenchRow> rows, const std::string& y_label);

// ---------------------------------------------------------------------------
// Users-per-cell sweep

struct GeneralizeRow {
  int users = 0;
  std::string algorithm;
  int iterations = 0;
  double normalized_pct = 0.0;
  bool reported = false;  // constant quoted from the reference results
};

struct GeneralizeOptions {
  std::vector<int> users{3, 4, 5, 6, 7, 8};
  int iterations = 5;
  int baseline_iterations = 100;
  std::size_t samples = 200;
  std::uint64_t seed = 2024;
  StepRule step_rule = StepRule::kEigen;
  NetworkConfig base;
};

std::vector<GeneralizeRow> run_generalize(const GnnModel& model, const GeneralizeOptions& options);
void write_generalize_csv(std::span<const GeneralizeRow> rows, const std::filesystem::path& path);

/// Published DeepFP percentages (5 layers); nullopt where not applicable.
std::optional<double> reported_deepfp_pct(int users);

}  // namespace gnnfp
