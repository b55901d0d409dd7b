#pragma once

// Harvesting subproblems along solver trajectories and unsupervised
// training of the GNN on the mean augmented objective.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gnnfp/channel.hpp"
#include "gnnfp/gnn.hpp"
#include "gnnfp/reform.hpp"

namespace gnnfp {

enum class HarvestPolicy { kClassicalFp, kModel };
HarvestPolicy parse_policy(const std::string& name);

struct HarvestOptions {
  int iterations = 16;
  HarvestPolicy policy = HarvestPolicy::kClassicalFp;
  /// Each (sample, iteration, cell) record is kept with this probability,
  /// decided by a hash of the seed and the record coordinates.
  double keep_fraction = 1.0;
  std::uint64_t seed = 0;
};

/// Runs the policy from the MRT initializer on every listed sample and emits
/// each cell's subproblem at each iteration. Record order is (sample,
/// iteration, cell). `model` is required for HarvestPolicy::kModel.
std::vector<HarvestRecord> harvest(const Dataset& data, std::span<const std::size_t> samples,
                                   const HarvestOptions& options, const GnnModel* model = nullptr);

struct GapStats {
  double mean = 0.0;
  double median = 0.0;
  double p90 = 0.0;
  std::size_t count = 0;
};

/// (obj - obj_oracle) / (|obj_oracle| + 1e-12) per record.
double relative_gap(double objective, double oracle_objective);
GapStats summarize_gaps(std::vector<double> gaps);

using SubproblemSolver = std::function<ComplexVector(const QuadraticSubproblem&)>;

/// Objective of oracle_solve on every record.
std::vector<double> oracle_objectives(std::span<const HarvestRecord> records);
GapStats evaluate_gap(const SubproblemSolver& solver, std::span<const HarvestRecord> records,
                      std::span<const double> oracle);
GapStats evaluate_gap(const GnnModel& model, std::span<const HarvestRecord> records, std::span<const double> oracle);
GapStats evaluate_gap(const GnnModel& model, std::span<const HarvestRecord> records);

/// Per-record loss weight: none, 1 / D_aug scale, or 1 / |oracle objective|
/// (the loss is then the mean relative gap minus one).
enum class LossWeighting { kNone, kScale, kOracle };
LossWeighting parse_loss_weighting(const std::string& name);

/// Weights for `records` under the rule; empty for kNone.
std::vector<double> loss_weights(std::span<const HarvestRecord> records, LossWeighting rule);

struct TrainConfig {
  int epochs = 300;
  int batch_size = 64;
  /// Graphs per forward/backward pass; a batch is the sum of its shards.
  int shard_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  int harvest_iters = 16;
  /// Epochs between on-policy re-harvests; 0 disables them.
  int refresh_period = 0;
  double split_train = 0.70;
  double split_validation = 0.15;
  double split_test = 0.15;
  int early_stop_patience = 30;
  /// Multiply the learning rate by lr_decay_factor after this many epochs
  /// without a new best (0 = constant rate).
  int lr_decay_patience = 0;
  double lr_decay_factor = 0.5;
  /// Records drawn per epoch (0 = the whole training set).
  std::size_t records_per_epoch = 0;
  LossWeighting weighting = LossWeighting::kScale;

  /// Throws InvalidConfig.
  void validate() const;
};

struct TrainLogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_gap_mean = 0.0;
  double val_gap_median = 0.0;
  double lr = 0.0;
  double elapsed_s = 0.0;
};

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_epoch;
  /// Called whenever the validation metric improves.
  std::function<void(const GnnModel&)> on_best;
  /// Replaces the training records every refresh_period epochs.
  std::function<std::vector<HarvestRecord>(const GnnModel&, int epoch)> refresh;
};

struct TrainResult {
  GnnModel best;
  GnnModel last;
  std::vector<TrainLogRow> log;
  int best_epoch = 0;
  bool early_stopped = false;
};

/// One optimizer step on a batch; returns the mean batch loss. Shards run
/// independently (possibly on several threads) and are reduced in order.
/// Each shard normalizes with its own batch statistics; the running
/// statistics become the mean of the per-shard updates. `weights` is empty
/// or holds one loss weight per batch record.
double train_step(GnnModel& model, ad::AdamState& adam, std::span<const HarvestRecord* const> batch, int shard_size,
                  const ad::DropoutKey& key, std::span<const double> weights = {});

/// Mean objective over the records in eval mode.
double mean_loss(const GnnModel& model, std::span<const HarvestRecord> records);

/// Unsupervised training from `initial` (or a fresh model seeded by
/// cfg.seed). Keeps the checkpoint with the lowest mean validation gap and
/// stops after `early_stop_patience` epochs without improvement. Throws
/// DivergedLoss on a non-finite loss; on_best has then already seen the
/// last good model.
TrainResult train(std::vector<HarvestRecord> train_set, std::span<const HarvestRecord> validation,
                  const TrainConfig& cfg, const TrainHooks& hooks = {}, const GnnModel* initial = nullptr);

}  // namespace gnnfp
