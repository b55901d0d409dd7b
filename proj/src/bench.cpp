#include "gnnfp/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>

#include "gnnfp/binary_io.hpp"
#include "gnnfp/parallel.hpp"

namespace gnnfp {

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kFp:
      return "fp";
    case Algorithm::kFastFp:
      return "fastfp";
    case Algorithm::kGnnFp:
      return "gnnfp";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "fp") return Algorithm::kFp;
  if (name == "fastfp") return Algorithm::kFastFp;
  if (name == "gnnfp") return Algorithm::kGnnFp;
  throw InvalidConfig("unknown algorithm '" + name + "' (fp|fastfp|gnnfp)");
}

std::vector<Algorithm> parse_algorithms(const std::string& list) {
  std::vector<Algorithm> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const Algorithm a = parse_algorithm(item);
    if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
  }
  if (out.empty()) throw InvalidConfig("no algorithms given");
  return out;
}

Precision parse_precision(const std::string& name) {
  if (name == "double") return Precision::kDouble;
  if (name == "float") return Precision::kFloat;
  throw InvalidConfig("unknown precision '" + name + "' (double|float)");
}

Runner make_runner(Algorithm a, const BenchOptions& options, const GnnModel* model) {
  switch (a) {
    case Algorithm::kFp:
      return [](const NetworkInstance& inst, int iters) { return classical_fp(inst, mrt_initializer(inst), iters).second; };
    case Algorithm::kFastFp:
      return [rule = options.step_rule](const NetworkInstance& inst, int iters) {
        return fastfp(inst, mrt_initializer(inst), iters, rule).second;
      };
    case Algorithm::kGnnFp:
      if (model == nullptr) throw InvalidConfig("gnnfp needs a model checkpoint");
      if (options.precision == Precision::kFloat) {
        auto net = std::make_shared<const GnnInference<float>>(*model);
        return [net](const NetworkInstance& inst, int iters) {
          return gnnfp_solve(inst, mrt_initializer(inst), iters, *net).second;
        };
      } else {
        auto net = std::make_shared<const GnnInference<double>>(*model);
        return [net](const NetworkInstance& inst, int iters) {
          return gnnfp_solve(inst, mrt_initializer(inst), iters, *net).second;
        };
      }
  }
  throw InvalidConfig("unknown algorithm");
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Mean over instances of the WSR trace, plus the individual traces.
std::vector<SolverTrace> run_all(const Runner& runner, const Dataset& data, std::span<const std::size_t> samples,
                                 int iterations) {
  std::vector<SolverTrace> traces(samples.size());
  parallel_for(samples.size(), [&](std::size_t k) {
    if (samples[k] >= data.samples.size()) throw InvalidConfig("sample index out of range");
    traces[k] = runner(data.samples[samples[k]], iterations);
  });
  return traces;
}

double mean_at(const std::vector<SolverTrace>& traces, int iteration) {
  double s = 0.0;
  for (const auto& t : traces) s += t.wsr[static_cast<std::size_t>(iteration)];
  return traces.empty() ? 0.0 : s / static_cast<double>(traces.size());
}

std::string fmt(double x, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

}  // namespace

std::vector<double> per_iteration_ms(const Runner& runner, const NetworkInstance& inst, int iterations,
                                     int repetitions, int warmups) {
  for (int w = 0; w < warmups; ++w) runner(inst, iterations);
  std::vector<std::vector<double>> samples(static_cast<std::size_t>(iterations));
  for (int r = 0; r < std::max(repetitions, 1); ++r) {
    const SolverTrace t = runner(inst, iterations);
    for (int k = 0; k < iterations; ++k) {
      const auto i = static_cast<std::size_t>(k);
      samples[i].push_back(t.elapsed_ms[i + 1] - t.elapsed_ms[i]);
    }
  }
  std::vector<double> out;
  for (auto& s : samples) out.push_back(median(std::move(s)));
  return out;
}

BenchReport run_bench(const Dataset& data, std::span<const std::size_t> samples, const BenchOptions& options,
                      const GnnModel* model) {
  if (options.iterations < 0 || options.baseline_iterations < 1) throw InvalidConfig("bad iteration counts");
  if (samples.empty()) throw InvalidConfig("bench: no test samples");
  if (model != nullptr && model->dims.input != 2) throw DimensionMismatch("model feature width differs from graph features");
  BenchReport report;
  report.bits = options.bits;
  report.parameter_count = model != nullptr ? model->parameter_count() : 0;
  const double unit = options.bits ? 1.0 / std::numbers::ln2 : 1.0;

  const Runner fp = make_runner(Algorithm::kFp, options, model);
  const int fp_iters = std::max(options.iterations, options.baseline_iterations);
  const auto fp_traces = run_all(fp, data, samples, fp_iters);
  report.baseline_wsr = mean_at(fp_traces, options.baseline_iterations);

  const std::size_t timed = std::min(options.timing_instances, samples.size());
  for (Algorithm a : options.algorithms) {
    const Runner runner = a == Algorithm::kFp ? fp : make_runner(a, options, model);
    const std::string name = algorithm_name(a);
    const int max_iter = a == Algorithm::kFp ? fp_iters : options.iterations;
    const auto traces = a == Algorithm::kFp ? fp_traces : run_all(runner, data, samples, max_iter);

    std::vector<double> elapsed(static_cast<std::size_t>(max_iter) + 1, 0.0);
    for (std::size_t k = 0; k < timed; ++k) {
      const auto per = per_iteration_ms(runner, data.samples[samples[k]], max_iter, options.timing_repetitions,
                                        options.warmup_runs);
      double cum = 0.0;
      for (int i = 0; i < max_iter; ++i) {
        cum += per[static_cast<std::size_t>(i)];
        elapsed[static_cast<std::size_t>(i) + 1] += cum / static_cast<double>(timed);
      }
    }

    std::vector<int> iters;
    for (int i = 0; i <= options.iterations; ++i) iters.push_back(i);
    if (a == Algorithm::kFp && options.baseline_iterations > options.iterations) {
      iters.push_back(options.baseline_iterations);
    }
    for (int i : iters) {
      const double mean = mean_at(traces, i);
      report.rows.push_back(BenchRow{name, i, mean * unit, mean / report.baseline_wsr * 100.0,
                                     elapsed[static_cast<std::size_t>(i)]});
    }
    for (std::size_t k = 0; k < traces.size(); ++k) {
      for (int i = 0; i <= options.iterations; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        report.traces.push_back(TraceRow{name, samples[k], i, traces[k].wsr[ii] * unit, traces[k].elapsed_ms[ii]});
      }
    }
  }
  return report;
}

void write_bench_csv(const BenchReport& report, const std::filesystem::path& path) {
  io::write_atomically(path, [&](std::ostream& out) {
    out << "algorithm,iteration,mean_wsr,normalized_pct,elapsed_ms\n";
    for (const auto& r : report.rows) {
      out << r.algorithm << ',' << r.iteration << ',' << fmt(r.mean_wsr) << ',' << fmt(r.normalized_pct, 4) << ','
          << fmt(r.elapsed_ms, 4) << '\n';
    }
  });
}

void write_trace_csv(const BenchReport& report, const std::filesystem::path& path) {
  io::write_atomically(path, [&](std::ostream& out) {
    out << "algorithm,instance_id,iteration," << (report.bits ? "wsr_bits" : "wsr_nats") << ",elapsed_ms\n";
    for (const auto& r : report.traces) {
      out << r.algorithm << ',' << r.instance_id << ',' << r.iteration << ',' << fmt(r.wsr) << ','
          << fmt(r.elapsed_ms, 4) << '\n';
    }
  });
}

std::vector<BenchRow> read_bench_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<BenchRow> rows;
  std::string line;
  if (!std::getline(in, line)) return rows;
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  auto column = [&header](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw CorruptFile("bench CSV lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ca = column("algorithm"), ci = column("iteration"), cw = column("mean_wsr");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < header.size()) throw CorruptFile("short CSV row: " + line);
    BenchRow r;
    r.algorithm = cells[ca];
    try {
      r.iteration = std::stoi(cells[ci]);
      r.mean_wsr = std::stod(cells[cw]);
    } catch (const std::exception&) {
      throw CorruptFile("bad number in CSV row: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

std::string render_svg(std::span<const BenchRow> rows, const std::string& y_label) {
  constexpr double width = 720, height = 440, left = 70, right = 160, top = 30, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& r : rows) {
    if (!series.count(r.algorithm)) order.push_back(r.algorithm);
    series[r.algorithm].emplace_back(r.iteration, r.mean_wsr);
    if (first) {
      xmin = xmax = r.iteration;
      ymin = ymax = r.mean_wsr;
      first = false;
    }
    xmin = std::min<double>(xmin, r.iteration);
    xmax = std::max<double>(xmax, r.iteration);
    ymin = std::min(ymin, r.mean_wsr);
    ymax = std::max(ymax, r.mean_wsr);
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<g stroke=\"black\" fill=\"none\"><line x1=\"" << fmt(left, 2) << "\" y1=\"" << fmt(top + ph, 2)
      << "\" x2=\"" << fmt(left + pw, 2) << "\" y2=\"" << fmt(top + ph, 2) << "\"/><line x1=\"" << fmt(left, 2)
      << "\" y1=\"" << fmt(top, 2) << "\" x2=\"" << fmt(left, 2) << "\" y2=\"" << fmt(top + ph, 2) << "\"/></g>\n";
  for (int t = 0; t <= 5; ++t) {
    const double x = xmin + (xmax - xmin) * t / 5.0;
    const double y = ymin + (ymax - ymin) * t / 5.0;
    svg << "<text x=\"" << fmt(px(x), 2) << "\" y=\"" << fmt(top + ph + 18, 2) << "\" text-anchor=\"middle\">"
        << fmt(x, 1) << "</text>\n";
    svg << "<text x=\"" << fmt(left - 6, 2) << "\" y=\"" << fmt(py(y) + 4, 2) << "\" text-anchor=\"end\">"
        << fmt(y, 2) << "</text>\n";
  }
  svg << "<text x=\"" << fmt(left + pw / 2, 2) << "\" y=\"" << fmt(height - 10, 2)
      << "\" text-anchor=\"middle\">iteration</text>\n";
  svg << "<text transform=\"translate(16 " << fmt(top + ph / 2, 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << y_label << "</text>\n";
  for (std::size_t s = 0; s < order.size(); ++s) {
    const char* color = palette[s % std::size(palette)];
    auto pts = series[order[s]];
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    svg << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) {
      svg << (k ? " " : "") << fmt(px(pts[k].first), 2) << ',' << fmt(py(pts[k].second), 2);
    }
    svg << "\"/>\n";
    const double ly = top + 16 + 18.0 * static_cast<double>(s);
    svg << "<line x1=\"" << fmt(left + pw + 12, 2) << "\" y1=\"" << fmt(ly, 2) << "\" x2=\"" << fmt(left + pw + 36, 2)
        << "\" y2=\"" << fmt(ly, 2) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << fmt(left + pw + 42, 2) << "\" y=\"" << fmt(ly + 4, 2) << "\">" << order[s] << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------
// Users-per-cell sweep

std::optional<double> reported_deepfp_pct(int users) {
  switch (users) {
    case 3:
      return 91.01;
    case 4:
      return 88.54;
    case 5:
      return 88.20;
    case 6:
      return 91.12;
    default:
      return std::nullopt;
  }
}

std::vector<GeneralizeRow> run_generalize(const GnnModel& model, const GeneralizeOptions& options) {
  if (options.samples == 0 || options.iterations < 1) throw InvalidConfig("generalize: need samples and iterations");
  std::vector<GeneralizeRow> rows;
  BenchOptions bo;
  bo.step_rule = options.step_rule;
  for (int q : options.users) {
    NetworkConfig cfg = options.base;
    cfg.users = q;
    cfg.weights.clear();
    cfg.seed = derive_seed(options.seed, static_cast<std::uint64_t>(q));
    const Dataset data = generate_dataset(cfg, options.samples);
    std::vector<std::size_t> all(options.samples);
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;

    const int fp_iters = std::max(options.iterations, options.baseline_iterations);
    const auto fp = run_all(make_runner(Algorithm::kFp, bo, &model), data, all, fp_iters);
    const double base = mean_at(fp, options.baseline_iterations);
    rows.push_back({q, "fp", options.baseline_iterations, 100.0, false});
    rows.push_back({q, "fp", options.iterations, mean_at(fp, options.iterations) / base * 100.0, false});
    for (Algorithm a : {Algorithm::kFastFp, Algorithm::kGnnFp}) {
      const auto t = run_all(make_runner(a, bo, &model), data, all, options.iterations);
      rows.push_back({q, algorithm_name(a), options.iterations, mean_at(t, options.iterations) / base * 100.0, false});
    }
    const auto deep = reported_deepfp_pct(q);
    rows.push_back({q, "deepfp", 5, deep.value_or(std::nan("")), true});
  }
  return rows;
}

void write_generalize_csv(std::span<const GeneralizeRow> rows, const std::filesystem::path& path) {
  io::write_atomically(path, [&](std::ostream& out) {
    out << "users,algorithm,iterations,normalized_pct,source\n";
    for (const auto& r : rows) {
      out << r.users << ',' << r.algorithm << ',' << r.iterations << ','
          << (std::isnan(r.normalized_pct) ? std::string("N/A") : fmt(r.normalized_pct, 4)) << ','
          << (r.reported ? "reported-not-reproduced" : "measured") << '\n';
    }
  });
}

}  // namespace gnnfp
