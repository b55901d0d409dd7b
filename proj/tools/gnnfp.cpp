// gnnfp: dataset generation, harvesting, training, benchmarking, plotting.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 invalid flags or configuration,
// 3 I/O or file-format failure, 4 diverged training loss, 5 model/data
// dimension mismatch.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gnnfp/bench.hpp"
#include "gnnfp/binary_io.hpp"
#include "gnnfp/channel.hpp"
#include "gnnfp/gnn.hpp"
#include "gnnfp/reform.hpp"
#include "gnnfp/training.hpp"

using namespace gnnfp;

namespace {

struct SplitFlags {
  std::string which = "train";
  std::uint64_t seed = 7;
  double train = 0.70;
  double validation = 0.15;
};

void add_split_flags(CLI::App* cmd, SplitFlags& s, const std::string& default_split) {
  s.which = default_split;
  cmd->add_option("--split", s.which, "Sample split: train|validation|test|all")->capture_default_str();
  cmd->add_option("--split-seed", s.seed, "Seed of the sample partition")->capture_default_str();
  cmd->add_option("--split-train", s.train, "Training share")->capture_default_str();
  cmd->add_option("--split-validation", s.validation, "Validation share")->capture_default_str();
}

std::vector<std::size_t> select_split(const Dataset& data, const SplitFlags& s) {
  if (s.which == "all") {
    std::vector<std::size_t> all(data.samples.size());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    return all;
  }
  Split which;
  if (s.which == "train") {
    which = Split::kTrain;
  } else if (s.which == "validation") {
    which = Split::kValidation;
  } else if (s.which == "test") {
    which = Split::kTest;
  } else {
    throw InvalidConfig("unknown split '" + s.which + "'");
  }
  return indices_of(split_samples(data.samples.size(), s.train, s.validation, s.seed), which);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  io::write_atomically(path, [&](std::ostream& out) { out << text; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fractional-programming beamforming solvers with a learned beamformer update"};
  app.require_subcommand(1);

  // gen
  NetworkConfig net;
  std::size_t samples = 1000;
  std::string data_out;
  auto* gen = app.add_subcommand("gen", "Generate a dataset of network drops");
  gen->add_option("--cells", net.cells)->capture_default_str();
  gen->add_option("--users", net.users)->capture_default_str();
  gen->add_option("--tx", net.tx)->capture_default_str();
  gen->add_option("--rx", net.rx)->capture_default_str();
  gen->add_option("--samples", samples)->capture_default_str();
  gen->add_option("--seed", net.seed)->capture_default_str();
  gen->add_option("--out", data_out)->required();

  // harvest
  std::string harvest_data, harvest_out, harvest_model, policy = "fp";
  HarvestOptions hopts;
  SplitFlags harvest_split;
  auto* hv = app.add_subcommand("harvest", "Record per-cell subproblems along solver trajectories");
  hv->add_option("--data", harvest_data)->required();
  hv->add_option("--iters", hopts.iterations)->capture_default_str();
  hv->add_option("--policy", policy, "fp|model")->capture_default_str();
  hv->add_option("--model", harvest_model, "Checkpoint for --policy model");
  hv->add_option("--keep-fraction", hopts.keep_fraction)->capture_default_str();
  hv->add_option("--seed", hopts.seed)->capture_default_str();
  hv->add_option("--out", harvest_out)->required();
  add_split_flags(hv, harvest_split, "train");

  // train
  std::string train_harvest, val_harvest, model_out, train_log, init_model_path, refresh_data;
  TrainConfig tcfg;
  SplitFlags refresh_split;
  double refresh_keep = 0.1;
  bool refresh_keep_base = false;
  std::optional<double> mlp_dropout, decoder_dropout;
  auto* tr = app.add_subcommand("train", "Unsupervised training on harvested subproblems");
  tr->add_option("--harvest", train_harvest)->required();
  tr->add_option("--validation", val_harvest, "Harvest file of validation records");
  tr->add_option("--out", model_out)->required();
  tr->add_option("--epochs", tcfg.epochs)->capture_default_str();
  tr->add_option("--lr", tcfg.learning_rate)->capture_default_str();
  tr->add_option("--batch", tcfg.batch_size)->capture_default_str();
  tr->add_option("--shard", tcfg.shard_size)->capture_default_str();
  tr->add_option("--seed", tcfg.seed)->capture_default_str();
  tr->add_option("--patience", tcfg.early_stop_patience)->capture_default_str();
  tr->add_option("--records-per-epoch", tcfg.records_per_epoch)->capture_default_str();
  tr->add_option("--lr-decay-patience", tcfg.lr_decay_patience, "Epochs without a new best before the rate decays (0 = off)")
      ->capture_default_str();
  tr->add_option("--lr-decay-factor", tcfg.lr_decay_factor)->capture_default_str();
  std::string weighting = "scale";
  tr->add_option("--loss-weighting", weighting, "Per-record loss weight: none | scale | oracle")->capture_default_str();
  tr->add_option("--raw-loss", [&weighting](const CLI::results_t&) {
    weighting = "none";
    return true;
  }, "Same as --loss-weighting none")->expected(0);
  tr->add_option("--log", train_log, "Training log CSV");
  tr->add_option("--init", init_model_path, "Start from this checkpoint");
  tr->add_option("--mlp-dropout", mlp_dropout, "Override the MLP dropout rate")->check(CLI::Range(0.0, 0.99));
  tr->add_option("--decoder-dropout", decoder_dropout, "Override the pre-decoder dropout rate")
      ->check(CLI::Range(0.0, 0.99));
  tr->add_option("--refresh-period", tcfg.refresh_period, "Epochs between on-policy re-harvests (needs --data)")
      ->capture_default_str();
  tr->add_option("--data", refresh_data, "Dataset for on-policy re-harvests");
  tr->add_option("--harvest-iters", tcfg.harvest_iters)->capture_default_str();
  tr->add_option("--refresh-keep-fraction", refresh_keep)->capture_default_str();
  tr->add_flag("--refresh-keep-base", refresh_keep_base,
               "Append the original harvest to every on-policy re-harvest instead of replacing it");
  add_split_flags(tr, refresh_split, "train");

  // bench
  std::string bench_data, bench_model, bench_csv, trace_csv, algos = "fp,fastfp,gnnfp", step = "eigen",
                                                              precision = "double";
  BenchOptions bopts;
  SplitFlags bench_split;
  auto* bn = app.add_subcommand("bench", "WSR and timing per iteration on the test split");
  bn->add_option("--data", bench_data)->required();
  bn->add_option("--model", bench_model);
  bn->add_option("--algorithms", algos)->capture_default_str();
  bn->add_option("--iters", bopts.iterations)->capture_default_str();
  bn->add_option("--fp-baseline-iters", bopts.baseline_iterations)->capture_default_str();
  bn->add_option("--step-rule", step, "FastFP step: eigen|frobenius")->capture_default_str();
  bn->add_option("--precision", precision, "GNN inference: double|float")->capture_default_str();
  bn->add_option("--timing-instances", bopts.timing_instances)->capture_default_str();
  bn->add_flag("--bits", bopts.bits, "Report rates in bits instead of nats");
  bn->add_option("--csv", bench_csv)->required();
  bn->add_option("--trace", trace_csv, "Per-instance trace CSV");
  add_split_flags(bn, bench_split, "test");

  // plot
  std::string plot_csv, plot_out, y_label = "mean WSR";
  int plot_max_iter = -1;
  auto* pl = app.add_subcommand("plot", "SVG line chart of a bench CSV");
  pl->add_option("--csv", plot_csv)->required();
  pl->add_option("--out", plot_out)->required();
  pl->add_option("--max-iter", plot_max_iter, "Drop rows beyond this iteration");
  pl->add_option("--y-label", y_label)->capture_default_str();

  // generalize
  std::string gen_model, gen_csv, users = "3,4,5,6,7,8", gen_step = "eigen";
  GeneralizeOptions gopts;
  auto* gz = app.add_subcommand("generalize", "Users-per-cell sweep on fresh test data");
  gz->add_option("--model", gen_model)->required();
  gz->add_option("--users", users)->capture_default_str();
  gz->add_option("--iters", gopts.iterations)->capture_default_str();
  gz->add_option("--fp-baseline-iters", gopts.baseline_iterations)->capture_default_str();
  gz->add_option("--samples", gopts.samples)->capture_default_str();
  gz->add_option("--seed", gopts.seed)->capture_default_str();
  gz->add_option("--step-rule", gen_step)->capture_default_str();
  gz->add_option("--csv", gen_csv)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      net.validate();
      const Dataset data = generate_dataset(net, samples);
      save_dataset(data, data_out);
      save_dataset_manifest(data, data_out + ".json");
      std::cout << "wrote " << data.samples.size() << " samples to " << data_out << "\n";
    } else if (*hv) {
      hopts.policy = parse_policy(policy);
      const Dataset data = load_dataset(harvest_data);
      const auto ids = select_split(data, harvest_split);
      std::optional<GnnModel> model;
      if (!harvest_model.empty()) model = load_model(harvest_model);
      const auto records = harvest(data, ids, hopts, model ? &*model : nullptr);
      save_subproblems(records, harvest_out);
      std::cout << "wrote " << records.size() << " subproblems from " << ids.size() << " samples to " << harvest_out
                << "\n";
    } else if (*tr) {
      tcfg.weighting = parse_loss_weighting(weighting);
      tcfg.split_train = refresh_split.train;
      tcfg.split_validation = refresh_split.validation;
      tcfg.split_test = 1.0 - refresh_split.train - refresh_split.validation;
      tcfg.validate();
      auto records = load_subproblems(train_harvest);
      std::vector<HarvestRecord> validation;
      if (!val_harvest.empty()) validation = load_subproblems(val_harvest);
      std::optional<GnnModel> init;
      if (!init_model_path.empty()) init = load_model(init_model_path);
      if (mlp_dropout || decoder_dropout) {
        if (!init) init = init_model(GnnDims{}, tcfg.seed);
        if (mlp_dropout) init->mlp_dropout = *mlp_dropout;
        if (decoder_dropout) init->decoder_dropout = *decoder_dropout;
      }

      std::optional<Dataset> data;
      std::ofstream log;
      if (!train_log.empty()) {
        log.open(train_log, std::ios::trunc);
        if (!log) throw IoError("cannot open " + train_log);
        log << "epoch,train_loss,val_gap_mean,val_gap_median,lr,elapsed_s\n";
      }
      TrainHooks hooks;
      hooks.on_epoch = [&log](const TrainLogRow& r) {
        char line[256];
        std::snprintf(line, sizeof line, "%d,%.9g,%.6f,%.6f,%g,%.2f\n", r.epoch, r.train_loss, r.val_gap_mean,
                      r.val_gap_median, r.lr, r.elapsed_s);
        if (log.is_open()) log << line << std::flush;
        std::cout << line << std::flush;
      };
      hooks.on_best = [&model_out](const GnnModel& m) { save_model(m, model_out); };
      if (tcfg.refresh_period > 0) {
        if (refresh_data.empty()) throw InvalidConfig("--refresh-period needs --data");
        data = load_dataset(refresh_data);
        hooks.refresh = [&](const GnnModel& m, int epoch) {
          HarvestOptions o;
          o.iterations = tcfg.harvest_iters;
          o.policy = HarvestPolicy::kModel;
          o.keep_fraction = refresh_keep;
          o.seed = tcfg.seed + static_cast<std::uint64_t>(epoch);
          auto fresh = harvest(*data, select_split(*data, refresh_split), o, &m);
          std::cout << "refresh at epoch " << epoch << ": " << fresh.size() << " on-policy records\n";
          return fresh;
        };
      }
      std::vector<HarvestRecord> base;
      if (refresh_keep_base && tcfg.refresh_period > 0) base = records;
      if (!base.empty()) {
        hooks.refresh = [&, fresh = hooks.refresh](const GnnModel& m, int epoch) {
          auto out = fresh(m, epoch);
          out.insert(out.end(), base.begin(), base.end());
          return out;
        };
      }
      const TrainResult result = train(std::move(records), validation, tcfg, hooks, init ? &*init : nullptr);
      save_model(result.best, model_out);
      std::cout << "best epoch " << result.best_epoch << (result.early_stopped ? " (early stop)" : "") << ", saved "
                << model_out << "\n";
    } else if (*bn) {
      bopts.algorithms = parse_algorithms(algos);
      bopts.step_rule = parse_step_rule(step);
      bopts.precision = parse_precision(precision);
      const Dataset data = load_dataset(bench_data);
      const auto ids = select_split(data, bench_split);
      std::optional<GnnModel> model;
      if (!bench_model.empty()) model = load_model(bench_model);
      const BenchReport report = run_bench(data, ids, bopts, model ? &*model : nullptr);
      write_bench_csv(report, bench_csv);
      if (!trace_csv.empty()) write_trace_csv(report, trace_csv);
      std::cout << "algorithm,iteration,normalized_pct,elapsed_ms\n";
      for (const auto& r : report.rows) {
        std::printf("%s,%d,%.2f,%.3f\n", r.algorithm.c_str(), r.iteration, r.normalized_pct, r.elapsed_ms);
      }
      if (model) std::cout << "model parameters: " << report.parameter_count << "\n";
      const auto deep = reported_deepfp_pct(data.config.users);
      std::cout << "deepfp (5 layers, reported, not reproduced): "
                << (deep ? std::to_string(*deep).substr(0, 5) : std::string("N/A")) << "\n";
    } else if (*pl) {
      auto rows = read_bench_csv(plot_csv);
      if (plot_max_iter >= 0) {
        std::erase_if(rows, [plot_max_iter](const BenchRow& r) { return r.iteration > plot_max_iter; });
      }
      write_text(plot_out, render_svg(rows, y_label));
    } else if (*gz) {
      gopts.users.clear();
      std::stringstream ss(users);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          gopts.users.push_back(std::stoi(item));
        } catch (const std::exception&) {
          throw InvalidConfig("bad --users entry '" + item + "'");
        }
      }
      gopts.step_rule = parse_step_rule(gen_step);
      const GnnModel model = load_model(gen_model);
      const auto rows = run_generalize(model, gopts);
      write_generalize_csv(rows, gen_csv);
      for (const auto& r : rows) {
        if (std::isnan(r.normalized_pct)) {
          std::printf("Q=%d %s-%d N/A%s\n", r.users, r.algorithm.c_str(), r.iterations,
                      r.reported ? " (reported, not reproduced)" : "");
        } else {
          std::printf("Q=%d %s-%d %.2f%s\n", r.users, r.algorithm.c_str(), r.iterations, r.normalized_pct,
                      r.reported ? " (reported, not reproduced)" : "");
        }
      }
    }
  } catch (const InvalidConfig& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const CorruptFile& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const VersionMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DivergedLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const DimensionMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
