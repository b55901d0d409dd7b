#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>

#include "gnnfp/training.hpp"

using namespace gnnfp;

namespace {

Dataset small_dataset(std::size_t samples, int cells, int users, int tx, std::uint64_t seed) {
  NetworkConfig c;
  c.cells = cells;
  c.users = users;
  c.tx = tx;
  c.seed = seed;
  return generate_dataset(c, samples);
}

std::vector<std::size_t> all_indices(const Dataset& d) {
  std::vector<std::size_t> ids(d.samples.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_parameters(const GnnModel& a, const GnnModel& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (*pa[i] != *pb[i]) return false;
  }
  return true;
}

// Two cells, two users, two antennas: 5-node graphs.
struct Toy {
  std::vector<HarvestRecord> train_set;
  std::vector<HarvestRecord> validation;
  TrainResult result;
  GnnModel untrained;
};

const Toy& toy() {
  static const Toy t = [] {
    Toy out;
    const Dataset d = small_dataset(32, 2, 2, 2, 5);
    std::vector<std::size_t> tr(25), va(7);
    std::iota(tr.begin(), tr.end(), std::size_t{0});
    std::iota(va.begin(), va.end(), std::size_t{25});
    HarvestOptions h;
    h.iterations = 4;
    out.train_set = harvest(d, tr, h);
    out.validation = harvest(d, va, h);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 16;
    cfg.shard_size = 16;
    cfg.learning_rate = 1e-2;
    cfg.early_stop_patience = 200;
    cfg.seed = 3;
    out.untrained = init_model(GnnDims{}, cfg.seed);
    out.result = train(out.train_set, out.validation, cfg);
    return out;
  }();
  return t;
}

}  // namespace

TEST(Harvest, RecordCountAndOrder) {
  const Dataset d = small_dataset(3, 3, 2, 4, 1);
  HarvestOptions h;
  h.iterations = 4;
  const auto records = harvest(d, all_indices(d), h);
  ASSERT_EQ(records.size(), 3u * 4u * 3u);
  for (std::size_t k = 0; k < records.size(); ++k) {
    EXPECT_EQ(records[k].instance_id, k / 12);
    EXPECT_EQ(records[k].iteration, (k / 3) % 4);
    EXPECT_EQ(records[k].sub.cell, static_cast<int>(k % 3));
    EXPECT_NO_THROW(records[k].sub.validate());
  }
}

TEST(Harvest, ZeroIterationsIsEmpty) {
  const Dataset d = small_dataset(2, 2, 2, 2, 1);
  HarvestOptions h;
  h.iterations = 0;
  EXPECT_TRUE(harvest(d, all_indices(d), h).empty());
}

TEST(Harvest, FirstIterationMatchesMrtState) {
  const Dataset d = small_dataset(1, 3, 2, 4, 9);
  HarvestOptions h;
  h.iterations = 1;
  const auto records = harvest(d, all_indices(d), h);
  const NetworkInstance& inst = d.samples[0];
  const AuxState aux = update_aux(inst, mrt_initializer(inst));
  for (const auto& r : records) {
    const QuadraticSubproblem ref = build_subproblem(inst, aux.y, aux.gamma, r.sub.cell);
    EXPECT_EQ((r.sub.d_aug - ref.d_aug).norm(), 0.0);
  }
}

TEST(Harvest, Deterministic) {
  const Dataset d = small_dataset(4, 2, 2, 3, 2);
  HarvestOptions h;
  h.iterations = 3;
  h.keep_fraction = 0.5;
  h.seed = 17;
  const auto a = harvest(d, all_indices(d), h);
  const auto b = harvest(d, all_indices(d), h);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].instance_id, b[k].instance_id);
    EXPECT_EQ(a[k].iteration, b[k].iteration);
    EXPECT_EQ((a[k].sub.d_aug - b[k].sub.d_aug).norm(), 0.0);
  }
}

TEST(Harvest, KeepFractionSubsamplesFullHarvest) {
  const Dataset d = small_dataset(10, 3, 2, 2, 4);
  HarvestOptions full;
  full.iterations = 5;
  const auto all = harvest(d, all_indices(d), full);
  HarvestOptions part = full;
  part.keep_fraction = 0.3;
  part.seed = 8;
  const auto some = harvest(d, all_indices(d), part);
  EXPECT_GT(some.size(), all.size() / 10);
  EXPECT_LT(some.size(), all.size() / 2);
  for (const auto& r : some) {
    const std::size_t k = (r.instance_id * 5 + r.iteration) * 3 + static_cast<std::size_t>(r.sub.cell);
    EXPECT_EQ((all[k].sub.d_aug - r.sub.d_aug).norm(), 0.0);
  }
}

TEST(Harvest, ModelPolicyNeedsModel) {
  const Dataset d = small_dataset(1, 2, 2, 2, 1);
  HarvestOptions h;
  h.policy = HarvestPolicy::kModel;
  EXPECT_THROW(harvest(d, all_indices(d), h), InvalidConfig);
  h.policy = HarvestPolicy::kClassicalFp;
  h.keep_fraction = 0.0;
  EXPECT_THROW(harvest(d, all_indices(d), h), InvalidConfig);
  EXPECT_THROW(parse_policy("greedy"), InvalidConfig);
}

TEST(Harvest, ModelPolicyFollowsModelTrajectory) {
  const Dataset d = small_dataset(2, 2, 2, 2, 6);
  const GnnModel m = init_model(GnnDims{}, 4);
  HarvestOptions h;
  h.iterations = 3;
  h.policy = HarvestPolicy::kModel;
  const auto on = harvest(d, all_indices(d), h, &m);
  h.policy = HarvestPolicy::kClassicalFp;
  const auto off = harvest(d, all_indices(d), h);
  ASSERT_EQ(on.size(), off.size());
  // iteration 0 starts from the same MRT point; later ones diverge
  for (std::size_t k = 0; k < on.size(); ++k) {
    const double diff = (on[k].sub.d_aug - off[k].sub.d_aug).norm();
    if (on[k].iteration == 0) {
      EXPECT_EQ(diff, 0.0);
    }
  }
  double later = 0.0;
  for (std::size_t k = 0; k < on.size(); ++k) {
    if (on[k].iteration > 0) later += (on[k].sub.d_aug - off[k].sub.d_aug).norm();
  }
  EXPECT_GT(later, 0.0);
}

TEST(Gap, Examples) {
  EXPECT_NEAR(relative_gap(-9.0, -10.0), 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(relative_gap(-10.0, -10.0), 0.0);
  const GapStats s = summarize_gaps({0.4, 0.1, 0.3, 0.2});
  EXPECT_DOUBLE_EQ(s.mean, 0.25);
  EXPECT_DOUBLE_EQ(s.median, 0.25);
  EXPECT_NEAR(s.p90, 0.37, 1e-12);
  EXPECT_EQ(s.count, 4u);
  EXPECT_EQ(summarize_gaps({}).count, 0u);
}

TEST(Gap, OracleSolverHasZeroGap) {
  const Dataset d = small_dataset(3, 3, 2, 3, 7);
  HarvestOptions h;
  h.iterations = 2;
  const auto records = harvest(d, all_indices(d), h);
  const auto oracle = oracle_objectives(records);
  const GapStats s = evaluate_gap([](const QuadraticSubproblem& sub) { return oracle_solve(sub); }, records, oracle);
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_EQ(s.p90, 0.0);
  // any feasible point is no better than the oracle
  const GapStats zero = evaluate_gap(
      [](const QuadraticSubproblem& sub) { return ComplexVector(ComplexVector::Zero(sub.n_var())); }, records, oracle);
  EXPECT_GT(zero.median, 0.0);
}

TEST(Gap, InvariantToRecordOrder) {
  const Dataset d = small_dataset(3, 3, 2, 3, 8);
  HarvestOptions h;
  h.iterations = 2;
  auto records = harvest(d, all_indices(d), h);
  const GnnModel m = init_model(GnnDims{}, 2);
  const GapStats a = evaluate_gap(m, records);
  std::mt19937_64 rng(1);
  std::shuffle(records.begin(), records.end(), rng);
  const GapStats b = evaluate_gap(m, records);
  EXPECT_NEAR(a.mean, b.mean, 1e-12 * std::max(1.0, std::abs(a.mean)));
  EXPECT_DOUBLE_EQ(a.median, b.median);
  EXPECT_DOUBLE_EQ(a.p90, b.p90);
}

TEST(Train, LossWeights) {
  const Dataset d = small_dataset(2, 3, 2, 3, 10);
  HarvestOptions h;
  h.iterations = 2;
  const auto records = harvest(d, all_indices(d), h);
  EXPECT_TRUE(loss_weights(records, LossWeighting::kNone).empty());
  const auto scale = loss_weights(records, LossWeighting::kScale);
  const auto oracle = loss_weights(records, LossWeighting::kOracle);
  const auto objs = oracle_objectives(records);
  ASSERT_EQ(scale.size(), records.size());
  ASSERT_EQ(oracle.size(), records.size());
  for (std::size_t k = 0; k < records.size(); ++k) {
    EXPECT_DOUBLE_EQ(scale[k], 1.0 / records[k].sub.scale);
    // the weighted oracle objective is -1, so the weighted loss is the relative gap minus one
    EXPECT_NEAR(oracle[k] * objs[k], -1.0, 1e-9);
  }
  EXPECT_EQ(parse_loss_weighting("oracle"), LossWeighting::kOracle);
  EXPECT_THROW(parse_loss_weighting("gap"), InvalidConfig);

  GnnModel m = init_model(GnnDims{}, 1);
  ad::AdamState adam;
  std::vector<const HarvestRecord*> batch{&records[0], &records[1]};
  const std::vector<double> one{1.0};
  EXPECT_THROW(train_step(m, adam, batch, 2, ad::DropoutKey{}, one), ShapeMismatch);
}

TEST(Train, ConfigValidation) {
  TrainConfig ok;
  EXPECT_NO_THROW(ok.validate());
  auto bad = [](auto edit) {
    TrainConfig c;
    edit(c);
    return c;
  };
  EXPECT_THROW(bad([](TrainConfig& c) { c.epochs = -1; }).validate(), InvalidConfig);
  EXPECT_THROW(bad([](TrainConfig& c) { c.batch_size = 0; }).validate(), InvalidConfig);
  EXPECT_THROW(bad([](TrainConfig& c) { c.shard_size = 0; }).validate(), InvalidConfig);
  EXPECT_THROW(bad([](TrainConfig& c) { c.learning_rate = 0.0; }).validate(), InvalidConfig);
  EXPECT_THROW(bad([](TrainConfig& c) { c.early_stop_patience = 0; }).validate(), InvalidConfig);
  EXPECT_THROW(bad([](TrainConfig& c) { c.split_test = 0.3; }).validate(), InvalidConfig);
  EXPECT_THROW(bad([](TrainConfig& c) { c.split_validation = -0.1; }).validate(), InvalidConfig);
  EXPECT_THROW(train({}, {}, ok), InvalidConfig);
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
  const Dataset d = small_dataset(2, 2, 2, 2, 1);
  HarvestOptions h;
  h.iterations = 2;
  const auto records = harvest(d, all_indices(d), h);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 12;
  const TrainResult r = train(records, records, cfg);
  const GnnModel init = init_model(GnnDims{}, 12);
  EXPECT_TRUE(same_parameters(r.best, init));
  EXPECT_TRUE(same_parameters(r.last, init));
  EXPECT_TRUE(r.log.empty());
}

TEST(Train, DivergedLossOnNonFiniteParameters) {
  const Dataset d = small_dataset(1, 2, 2, 2, 1);
  HarvestOptions h;
  h.iterations = 2;
  const auto records = harvest(d, all_indices(d), h);
  GnnModel m = init_model(GnnDims{}, 1);
  m.decoder.weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  ad::AdamState adam;
  std::vector<const HarvestRecord*> batch{&records[0], &records[1]};
  EXPECT_THROW(train_step(m, adam, batch, 2, ad::DropoutKey{}), DivergedLoss);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  int bests = 0;
  TrainHooks hooks;
  hooks.on_best = [&](const GnnModel&) { ++bests; };
  EXPECT_THROW(train(records, records, cfg, hooks, &m), DivergedLoss);
  EXPECT_EQ(bests, 0);
}

TEST(Train, ReproducibleCheckpointBytes) {
  const Dataset d = small_dataset(4, 2, 2, 2, 3);
  HarvestOptions h;
  h.iterations = 3;
  const auto records = harvest(d, all_indices(d), h);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.shard_size = 4;
  cfg.seed = 21;
  const auto dir = std::filesystem::temp_directory_path();
  const auto pa = dir / "gnnfp_train_a.gnfp";
  const auto pb = dir / "gnnfp_train_b.gnfp";
  save_model(train(records, records, cfg).last, pa);
  save_model(train(records, records, cfg).last, pb);
  EXPECT_EQ(read_bytes(pa), read_bytes(pb));
  cfg.seed = 22;
  save_model(train(records, records, cfg).last, pb);
  EXPECT_NE(read_bytes(pa), read_bytes(pb));
  std::filesystem::remove(pa);
  std::filesystem::remove(pb);
}

TEST(Train, HooksAndRefresh) {
  const Dataset d = small_dataset(3, 2, 2, 2, 4);
  HarvestOptions h;
  h.iterations = 2;
  const auto records = harvest(d, all_indices(d), h);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.refresh_period = 2;
  int epochs_seen = 0, refreshes = 0, bests = 0;
  TrainHooks hooks;
  hooks.on_epoch = [&](const TrainLogRow& row) { EXPECT_EQ(row.epoch, ++epochs_seen); };
  hooks.on_best = [&](const GnnModel&) { ++bests; };
  hooks.refresh = [&](const GnnModel& m, int epoch) {
    EXPECT_EQ(epoch, 3);
    ++refreshes;
    HarvestOptions p = h;
    p.policy = HarvestPolicy::kModel;
    return harvest(d, all_indices(d), p, &m);
  };
  const TrainResult r = train(records, records, cfg, hooks);
  EXPECT_EQ(epochs_seen, 4);
  EXPECT_EQ(refreshes, 1);
  EXPECT_GE(bests, 1);
  EXPECT_EQ(r.log.size(), 4u);
}

TEST(Train, LearningRateDecaysOnPlateaus) {
  const Dataset d = small_dataset(3, 2, 2, 2, 9);
  HarvestOptions h;
  h.iterations = 2;
  const auto records = harvest(d, all_indices(d), h);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 4;
  cfg.learning_rate = 5e-2;
  cfg.lr_decay_patience = 1;
  cfg.lr_decay_factor = 0.5;
  cfg.early_stop_patience = 100;
  const TrainResult r = train(records, records, cfg);
  ASSERT_EQ(r.log.size(), 30u);
  // replay the schedule from the logged validation metric
  double lr = cfg.learning_rate, best = std::numeric_limits<double>::infinity();
  int since = 0, decays = 0;
  for (const auto& row : r.log) {
    EXPECT_DOUBLE_EQ(row.lr, lr) << "epoch " << row.epoch;
    if (row.val_gap_mean < best) {
      best = row.val_gap_mean;
      since = 0;
    } else if (++since >= cfg.lr_decay_patience) {
      lr *= cfg.lr_decay_factor;
      since = 0;
      ++decays;
    }
  }
  EXPECT_GT(decays, 0);
  TrainConfig bad = cfg;
  bad.lr_decay_factor = 1.5;
  EXPECT_THROW(bad.validate(), InvalidConfig);
}

TEST(Train, ToyProblemReachesSmallGap) {
  const Toy& t = toy();
  ASSERT_EQ(t.train_set.size(), 200u);
  const GapStats trained = evaluate_gap(t.result.last, t.train_set);
  EXPECT_LT(trained.median, 0.05);
}

TEST(Train, TrainedBeatsUntrained) {
  const Toy& t = toy();
  const auto oracle = oracle_objectives(t.validation);
  const GapStats before = evaluate_gap(t.untrained, t.validation, oracle);
  const GapStats after = evaluate_gap(t.result.best, t.validation, oracle);
  EXPECT_GE(before.mean, after.mean);
  EXPECT_GE(mean_loss(t.untrained, t.train_set), mean_loss(t.result.best, t.train_set));
}
