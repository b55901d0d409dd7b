#include "gnnfp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include "gnnfp/parallel.hpp"

namespace gnnfp {

HarvestPolicy parse_policy(const std::string& name) {
  if (name == "fp") return HarvestPolicy::kClassicalFp;
  if (name == "model") return HarvestPolicy::kModel;
  throw InvalidConfig("unknown harvest policy '" + name + "' (fp|model)");
}

namespace {

bool keep_record(const HarvestOptions& options, std::uint64_t sample, int iteration, int cell) {
  if (options.keep_fraction >= 1.0) return true;
  std::uint64_t h = derive_seed(options.seed, sample);
  h = derive_seed(h, static_cast<std::uint64_t>(iteration));
  h = derive_seed(h, static_cast<std::uint64_t>(cell));
  return static_cast<double>(h >> 11) * 0x1.0p-53 < options.keep_fraction;
}

}  // namespace

std::vector<HarvestRecord> harvest(const Dataset& data, std::span<const std::size_t> samples,
                                   const HarvestOptions& options, const GnnModel* model) {
  if (options.iterations < 0) throw InvalidConfig("harvest: iterations must be >= 0");
  if (!(options.keep_fraction > 0.0) || options.keep_fraction > 1.0) {
    throw InvalidConfig("harvest: keep_fraction must be in (0, 1]");
  }
  if (options.policy == HarvestPolicy::kModel && model == nullptr) {
    throw InvalidConfig("harvest: the model policy needs a checkpoint");
  }
  std::optional<GnnInference<double>> net;
  if (model != nullptr) net.emplace(*model);

  std::vector<std::vector<HarvestRecord>> per_sample(samples.size());
  parallel_for(samples.size(), [&](std::size_t k) {
    const std::size_t id = samples[k];
    if (id >= data.samples.size()) throw InvalidConfig("harvest: sample index out of range");
    const NetworkInstance& inst = data.samples[id];
    std::vector<HarvestRecord>& out = per_sample[k];
    int calls = 0;
    run_fp_iterations(inst, mrt_initializer(inst), options.iterations,
                      [&](int cell, const AuxState& aux, const BeamformerSet&, BeamformerSet& next) {
                        const int iteration = calls++ / inst.cells();
                        QuadraticSubproblem sub = build_subproblem(inst, aux.y, aux.gamma, cell);
                        const ComplexVector v =
                            options.policy == HarvestPolicy::kClassicalFp ? oracle_solve(sub) : net->solve(sub);
                        for (int q = 0; q < inst.users(); ++q) {
                          next(cell, q) = v.segment(static_cast<Eigen::Index>(q) * inst.tx(), inst.tx());
                        }
                        if (keep_record(options, id, iteration, cell)) {
                          out.push_back(HarvestRecord{id, static_cast<std::uint32_t>(iteration), std::move(sub)});
                        }
                      });
  });
  std::vector<HarvestRecord> records;
  for (auto& part : per_sample) {
    for (auto& r : part) records.push_back(std::move(r));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Gaps

double relative_gap(double objective, double oracle_objective) {
  return (objective - oracle_objective) / (std::abs(oracle_objective) + 1e-12);
}

GapStats summarize_gaps(std::vector<double> gaps) {
  GapStats s;
  s.count = gaps.size();
  if (gaps.empty()) return s;
  s.mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(gaps.size());
  std::sort(gaps.begin(), gaps.end());
  auto quantile = [&gaps](double p) {
    const double pos = p * static_cast<double>(gaps.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, gaps.size() - 1);
    return gaps[lo] + (pos - static_cast<double>(lo)) * (gaps[hi] - gaps[lo]);
  };
  s.median = quantile(0.5);
  s.p90 = quantile(0.9);
  return s;
}

std::vector<double> oracle_objectives(std::span<const HarvestRecord> records) {
  std::vector<double> out(records.size());
  parallel_for(records.size(), [&](std::size_t k) {
    out[k] = objective(records[k].sub, oracle_solve(records[k].sub));
  });
  return out;
}

GapStats evaluate_gap(const SubproblemSolver& solver, std::span<const HarvestRecord> records,
                      std::span<const double> oracle) {
  if (oracle.size() != records.size()) throw ShapeMismatch("evaluate_gap: one oracle value per record");
  std::vector<double> gaps(records.size());
  parallel_for(records.size(), [&](std::size_t k) {
    gaps[k] = relative_gap(objective(records[k].sub, solver(records[k].sub)), oracle[k]);
  });
  return summarize_gaps(std::move(gaps));
}

GapStats evaluate_gap(const GnnModel& model, std::span<const HarvestRecord> records, std::span<const double> oracle) {
  const GnnInference<double> net(model);
  return evaluate_gap([&net](const QuadraticSubproblem& sub) { return net.solve(sub); }, records, oracle);
}

GapStats evaluate_gap(const GnnModel& model, std::span<const HarvestRecord> records) {
  return evaluate_gap(model, records, oracle_objectives(records));
}

// ---------------------------------------------------------------------------
// Training

LossWeighting parse_loss_weighting(const std::string& name) {
  if (name == "none") return LossWeighting::kNone;
  if (name == "scale") return LossWeighting::kScale;
  if (name == "oracle") return LossWeighting::kOracle;
  throw InvalidConfig("unknown loss weighting '" + name + "' (none|scale|oracle)");
}

std::vector<double> loss_weights(std::span<const HarvestRecord> records, LossWeighting rule) {
  std::vector<double> w;
  if (rule == LossWeighting::kScale) {
    for (const auto& r : records) w.push_back(1.0 / r.sub.scale);
  } else if (rule == LossWeighting::kOracle) {
    w = oracle_objectives(records);
    for (double& x : w) x = 1.0 / (std::abs(x) + 1e-12);
  }
  return w;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw InvalidConfig("epochs must be >= 0");
  if (batch_size < 1 || shard_size < 1) throw InvalidConfig("batch and shard sizes must be positive");
  if (!(learning_rate > 0.0)) throw InvalidConfig("learning rate must be positive");
  if (!(lr_decay_factor > 0.0) || lr_decay_factor > 1.0) throw InvalidConfig("lr decay factor must be in (0, 1]");
  if (harvest_iters < 0 || refresh_period < 0 || early_stop_patience < 1 || lr_decay_patience < 0) {
    throw InvalidConfig("iteration counts must be non-negative and patience positive");
  }
  if (split_train <= 0.0 || split_validation < 0.0 || split_test < 0.0 ||
      std::abs(split_train + split_validation + split_test - 1.0) > 1e-9) {
    throw InvalidConfig("split ratios must be non-negative and sum to 1");
  }
}

namespace {

struct ShardResult {
  double loss_sum = 0.0;
  std::vector<ad::Array> grads;
  std::vector<ad::BatchNormState> stats;
};

ShardResult run_shard(const GnnModel& model, std::span<const HarvestRecord* const> records,
                      const ad::DropoutKey& key, std::span<const double> weights) {
  GnnModel local = model;
  std::vector<ProblemGraph> graphs;
  std::vector<const ProblemGraph*> gp;
  std::vector<const QuadraticSubproblem*> subs;
  graphs.reserve(records.size());
  for (const HarvestRecord* r : records) {
    graphs.push_back(build_graph(r->sub));
    subs.push_back(&r->sub);
  }
  for (const auto& g : graphs) gp.push_back(&g);
  const GraphBatch batch = make_batch(gp);

  ad::Tape tape;
  const ParameterTensors params = bind_parameters(tape, local, true);
  ForwardOptions opts;
  opts.mode = ad::Mode::kTrain;
  opts.dropout = key;
  const ad::Tensor v = forward(local, tape, params, batch, opts);
  const ad::Tensor loss = quadratic_loss(tape, v, batch, subs, weights);
  tape.backward(loss);

  ShardResult out;
  out.loss_sum = loss.scalar() * static_cast<double>(records.size());
  for (const auto& leaf : params.leaves) out.grads.push_back(leaf.grad() * static_cast<double>(records.size()));
  for (const ad::BatchNormState* s : local.batchnorm_states()) out.stats.push_back(*s);
  return out;
}

}  // namespace

double train_step(GnnModel& model, ad::AdamState& adam, std::span<const HarvestRecord* const> batch, int shard_size,
                  const ad::DropoutKey& key, std::span<const double> weights) {
  if (batch.empty()) throw InvalidConfig("train_step: empty batch");
  if (!weights.empty() && weights.size() != batch.size()) throw ShapeMismatch("train_step: one weight per record");
  const std::size_t shard = static_cast<std::size_t>(std::max(shard_size, 1));
  const std::size_t shards = (batch.size() + shard - 1) / shard;
  std::vector<ShardResult> results(shards);
  parallel_for(shards, [&](std::size_t s) {
    const std::size_t lo = s * shard, hi = std::min(batch.size(), lo + shard);
    ad::DropoutKey k = key;
    k.batch = key.batch * 1315423911ULL + s;
    results[s] = run_shard(model, batch.subspan(lo, hi - lo), k,
                           weights.empty() ? weights : weights.subspan(lo, hi - lo));
  });

  const double total = static_cast<double>(batch.size());
  double loss = 0.0;
  std::vector<ad::Array> grads = std::move(results[0].grads);
  loss += results[0].loss_sum;
  for (std::size_t s = 1; s < shards; ++s) {
    loss += results[s].loss_sum;
    for (std::size_t p = 0; p < grads.size(); ++p) grads[p] += results[s].grads[p];
  }
  for (auto& g : grads) g /= total;
  loss /= total;
  if (!std::isfinite(loss)) throw DivergedLoss("non-finite training loss");

  auto states = model.batchnorm_states();
  for (std::size_t b = 0; b < states.size(); ++b) {
    ad::Array mean = ad::Array::Zero(1, states[b]->running_mean.cols());
    ad::Array var = mean;
    for (std::size_t s = 0; s < shards; ++s) {
      const double w = static_cast<double>(std::min(batch.size(), (s + 1) * shard) - s * shard) / total;
      mean += w * results[s].stats[b].running_mean;
      var += w * results[s].stats[b].running_var;
    }
    states[b]->running_mean = std::move(mean);
    states[b]->running_var = std::move(var);
  }
  auto params = model.parameters();
  std::vector<ad::Array*> mutable_params(params.begin(), params.end());
  ad::adam_step(mutable_params, grads, adam);
  return loss;
}

double mean_loss(const GnnModel& model, std::span<const HarvestRecord> records) {
  if (records.empty()) return 0.0;
  const GnnInference<double> net(model);
  std::vector<double> values(records.size());
  parallel_for(records.size(), [&](std::size_t k) { values[k] = objective(records[k].sub, net.solve(records[k].sub)); });
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

TrainResult train(std::vector<HarvestRecord> train_set, std::span<const HarvestRecord> validation,
                  const TrainConfig& cfg, const TrainHooks& hooks, const GnnModel* initial) {
  cfg.validate();
  if (train_set.empty()) throw InvalidConfig("train: empty harvest");
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();

  TrainResult result;
  GnnModel model = initial != nullptr ? *initial : init_model(GnnDims{}, cfg.seed);
  ad::AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  result.best = model;

  const std::vector<double> oracle = oracle_objectives(validation);
  std::vector<double> weights = loss_weights(train_set, cfg.weighting);
  double best_gap = std::numeric_limits<double>::infinity();
  int since_best = 0, since_decay = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.refresh_period > 0 && hooks.refresh && epoch > 1 && (epoch - 1) % cfg.refresh_period == 0) {
      train_set = hooks.refresh(model, epoch);
      if (train_set.empty()) throw InvalidConfig("train: refresh produced no records");
      weights = loss_weights(train_set, cfg.weighting);
    }
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    if (cfg.records_per_epoch > 0 && cfg.records_per_epoch < order.size()) order.resize(cfg.records_per_epoch);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t lo = 0, b = 0; lo < order.size(); lo += bs, ++b) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      std::vector<const HarvestRecord*> batch;
      std::vector<double> batch_weights;
      for (std::size_t k = lo; k < hi; ++k) {
        batch.push_back(&train_set[order[k]]);
        if (!weights.empty()) batch_weights.push_back(weights[order[k]]);
      }
      try {
        const double loss =
            train_step(model, adam, batch, cfg.shard_size,
                       ad::DropoutKey{cfg.seed, static_cast<std::uint64_t>(epoch), b, 0}, batch_weights);
        loss_sum += loss * static_cast<double>(batch.size());
        seen += batch.size();
      } catch (const DivergedLoss&) {
        throw DivergedLoss("non-finite loss at epoch " + std::to_string(epoch));
      }
    }

    TrainLogRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(seen, 1));
    row.lr = adam.learning_rate;
    if (!validation.empty()) {
      const GapStats gap = evaluate_gap(model, validation, oracle);
      row.val_gap_mean = gap.mean;
      row.val_gap_median = gap.median;
    } else {
      row.val_gap_mean = row.train_loss;
      row.val_gap_median = row.train_loss;
    }
    row.elapsed_s = std::chrono::duration<double>(Clock::now() - start).count();
    result.log.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);

    if (row.val_gap_mean < best_gap) {
      best_gap = row.val_gap_mean;
      result.best = model;
      result.best_epoch = epoch;
      since_best = 0;
      since_decay = 0;
      if (hooks.on_best) hooks.on_best(model);
    } else {
      if (cfg.lr_decay_patience > 0 && ++since_decay >= cfg.lr_decay_patience) {
        adam.learning_rate *= cfg.lr_decay_factor;
        since_decay = 0;
      }
      if (++since_best >= cfg.early_stop_patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  result.last = std::move(model);
  return result;
}

}  // namespace gnnfp
