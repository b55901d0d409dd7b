#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "gnnfp/reform.hpp"

using namespace gnnfp;

namespace {

ComplexVector random_vector(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  ComplexVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = Complex(g(rng), g(rng));
  return v;
}

/// Uniform-direction point with power drawn uniformly in [0, P].
ComplexVector random_feasible(Eigen::Index n, double power, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return random_vector(n, rng).normalized() * std::sqrt(power * u(rng));
}

struct Fixture {
  NetworkInstance inst;
  BeamformerSet v;
  AuxState aux;
};

Fixture paper_scale(std::uint64_t seed, int fp_iters = 2) {
  NetworkConfig c;
  c.seed = seed;
  Fixture f{generate_instance(c), {}, {}};
  f.v = classical_fp(f.inst, mrt_initializer(f.inst), fp_iters).first;
  f.aux = update_aux(f.inst, f.v);
  return f;
}

}  // namespace

TEST(Reform, PaperScaleDimensionsAndLayout) {
  const Fixture f = paper_scale(1);
  const QuadraticSubproblem sub = build_subproblem(f.inst, f.aux.y, f.aux.gamma, 3);
  EXPECT_EQ(sub.d_aug.rows(), 49);
  EXPECT_EQ(sub.d_aug.cols(), 49);
  EXPECT_EQ(sub.d_aug(48, 48), Complex(0.0));
  EXPECT_LE((sub.d_aug - sub.d_aug.adjoint()).norm(), 1e-10 * sub.d_aug.norm());
  const ComplexMatrix d = build_D(f.inst, f.aux.y, f.aux.gamma, 3);
  for (int q = 0; q < 6; ++q) {
    EXPECT_EQ(ComplexMatrix(sub.d_aug.block(8 * q, 8 * q, 8, 8)), d);
    EXPECT_EQ(sub.linear().segment(8 * q, 8), linear_term(f.inst, f.aux.y, f.aux.gamma, 3, q));
    for (int r = 0; r < 6; ++r) {
      if (r != q) {
        EXPECT_EQ(sub.d_aug.block(8 * q, 8 * r, 8, 8).norm(), 0.0);
      }
    }
  }
  EXPECT_DOUBLE_EQ(sub.scale, sub.d_aug.cwiseAbs().maxCoeff());
  EXPECT_NO_THROW(sub.validate());
}

TEST(Reform, ZeroFiltersGiveZeroForm) {
  NetworkConfig c;
  c.cells = 2;
  c.users = 2;
  c.tx = 3;
  const NetworkInstance inst = generate_instance(c);
  std::vector<ComplexVector> y(4, ComplexVector::Zero(2));
  std::vector<double> gamma(4, 0.5);
  const QuadraticSubproblem sub = build_subproblem(inst, y, gamma, 1);
  EXPECT_EQ(sub.d_aug.norm(), 0.0);
  EXPECT_EQ(sub.scale, 1e-30);
  std::mt19937_64 rng(1);
  EXPECT_EQ(objective(sub, random_feasible(6, sub.power, rng)), 0.0);
  EXPECT_EQ(oracle_solve(sub).norm(), 0.0);
}

TEST(Reform, ObjectiveMatchesUnstackedForm) {
  const Fixture f = paper_scale(2);
  const QuadraticSubproblem sub = build_subproblem(f.inst, f.aux.y, f.aux.gamma, 0);
  const ComplexMatrix d = sub.block();
  std::mt19937_64 rng(2);
  EXPECT_EQ(objective(sub, ComplexVector::Zero(48)), 0.0);
  for (int trial = 0; trial < 100; ++trial) {
    const ComplexVector v = random_feasible(48, sub.power, rng);
    double direct = 0.0;
    for (int q = 0; q < 6; ++q) {
      const ComplexVector vq = v.segment(8 * q, 8);
      direct += (vq.adjoint() * d * vq)(0, 0).real() -
                2.0 * vq.dot(linear_term(f.inst, f.aux.y, f.aux.gamma, 0, q)).real();
    }
    EXPECT_NEAR(objective(sub, v), direct, 1e-10 * (1.0 + std::abs(direct)));
  }
  EXPECT_THROW(objective(sub, ComplexVector::Zero(47)), DimensionMismatch);
}

TEST(Reform, StackUnstackRoundTrip) {
  std::mt19937_64 rng(3);
  const Fixture f = paper_scale(3);
  const QuadraticSubproblem sub = build_subproblem(f.inst, f.aux.y, f.aux.gamma, 2);
  const ComplexVector v = random_vector(48, rng);
  const auto parts = unstack(sub, v);
  ASSERT_EQ(parts.size(), 6u);
  EXPECT_EQ(stack(parts), v);
  EXPECT_THROW(unstack(sub, random_vector(40, rng)), DimensionMismatch);

  const std::vector<ComplexVector> one{random_vector(5, rng)};
  const QuadraticSubproblem single = make_subproblem(0, ComplexMatrix::Identity(5, 5), one, 1.0);
  EXPECT_EQ(unstack(single, one[0])[0], one[0]);
}

TEST(Reform, OracleTrivialCases) {
  std::mt19937_64 rng(4);
  ComplexMatrix m(4, 4);
  for (int j = 0; j < 4; ++j) m.col(j) = random_vector(4, rng);
  const std::vector<ComplexVector> zero(2, ComplexVector::Zero(4));
  const QuadraticSubproblem sub = make_subproblem(0, m.adjoint() * m + ComplexMatrix::Identity(4, 4), zero, 1.0);
  const ComplexVector v = oracle_solve(sub);
  EXPECT_LT(v.norm(), 1e-15);
  EXPECT_EQ(objective(sub, v), 0.0);
}

TEST(Reform, OracleBeatsRandomFeasiblePoints) {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Fixture f = paper_scale(10 + seed, static_cast<int>(seed));
    const QuadraticSubproblem sub = build_subproblem(f.inst, f.aux.y, f.aux.gamma, static_cast<int>(seed));
    const ComplexVector best = oracle_solve(sub);
    EXPECT_LE(best.squaredNorm(), sub.power * (1 + 1e-9));
    const double opt = objective(sub, best);
    for (int trial = 0; trial < 1000; ++trial) {
      EXPECT_LE(opt, objective(sub, random_feasible(48, sub.power, rng)));
    }
  }
}

TEST(Reform, ArgminIsScaleInvariant) {
  const Fixture f = paper_scale(20);
  QuadraticSubproblem sub = build_subproblem(f.inst, f.aux.y, f.aux.gamma, 4);
  const ComplexVector base = oracle_solve(sub);
  for (double alpha : {1e-6, 0.37, 250.0}) {
    QuadraticSubproblem scaled = sub;
    scaled.d_aug *= alpha;
    scaled.scale *= alpha;
    EXPECT_LT((oracle_solve(scaled) - base).norm(), 1e-7 * (1 + base.norm())) << alpha;
  }
}

TEST(Reform, EquivalenceChainWithSurrogate) {
  const Fixture f = paper_scale(21);
  for (int cell = 0; cell < 7; ++cell) {
    const QuadraticSubproblem sub = build_subproblem(f.inst, f.aux.y, f.aux.gamma, cell);
    const ComplexVector v = oracle_solve(sub);
    const auto parts = unstack(sub, v);
    // unstacked per-user objective
    const double unstacked = qp_objective(sub.block(), std::vector<ComplexVector>(unstack(sub, sub.linear())), parts);
    EXPECT_NEAR(objective(sub, v), unstacked, 1e-8 * (1 + std::abs(unstacked)));
    // v-dependent part of the surrogate: swapping cell `cell` from 0 to v
    BeamformerSet with = f.v, without = f.v;
    for (int q = 0; q < 6; ++q) {
      with(cell, q) = parts[static_cast<std::size_t>(q)];
      without(cell, q).setZero();
    }
    const double delta = fp_surrogate(f.inst, with, f.aux.y, f.aux.gamma) -
                         fp_surrogate(f.inst, without, f.aux.y, f.aux.gamma);
    EXPECT_NEAR(-delta, unstacked, 1e-8 * (1 + std::abs(unstacked)));
  }
}

TEST(Reform, OracleReproducesClassicalFpUpdate) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Fixture f = paper_scale(30 + seed, static_cast<int>(seed) * 3);
    BeamformerSet next = f.v;
    for (int cell = 0; cell < 7; ++cell) {
      classical_fp_cell_update(f.inst, cell, f.aux, next);
      const QuadraticSubproblem sub = build_subproblem(f.inst, f.aux.y, f.aux.gamma, cell);
      const auto parts = unstack(sub, oracle_solve(sub));
      for (int q = 0; q < 6; ++q) {
        EXPECT_LT((parts[static_cast<std::size_t>(q)] - next(cell, q)).norm(), 1e-7);
      }
    }
  }
}

TEST(Reform, ValidateRejectsBrokenLayout) {
  const Fixture f = paper_scale(40);
  QuadraticSubproblem sub = build_subproblem(f.inst, f.aux.y, f.aux.gamma, 0);
  QuadraticSubproblem bad = sub;
  bad.d_aug(48, 48) = 1.0;
  EXPECT_ANY_THROW(bad.validate());
  bad = sub;
  bad.d_aug(0, 1) += Complex(0.0, 1.0) * sub.scale;
  EXPECT_ANY_THROW(bad.validate());
  bad = sub;
  bad.d_aug(8, 9) += 0.1 * sub.scale;
  bad.d_aug(9, 8) += 0.1 * sub.scale;
  EXPECT_ANY_THROW(bad.validate());
}

TEST(HarvestFile, RoundTripAndCorruption) {
  const Fixture f = paper_scale(50);
  std::vector<HarvestRecord> records;
  for (int cell = 0; cell < 3; ++cell) {
    records.push_back({7, static_cast<std::uint32_t>(cell + 1), build_subproblem(f.inst, f.aux.y, f.aux.gamma, cell)});
  }
  const auto path = std::filesystem::temp_directory_path() / "gnnfp_test_harvest.bin";
  save_subproblems(records, path);
  const auto back = load_subproblems(path);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(back[k].instance_id, 7u);
    EXPECT_EQ(back[k].iteration, k + 1);
    EXPECT_EQ(back[k].sub.cell, records[k].sub.cell);
    EXPECT_EQ(back[k].sub.scale, records[k].sub.scale);
    EXPECT_EQ(back[k].sub.power, records[k].sub.power);
    EXPECT_EQ(back[k].sub.d_aug, records[k].sub.d_aug);
  }
  {
    std::fstream io(path, std::ios::binary | std::ios::in | std::ios::out);
    io.seekp(0);
    io.put('Z');
  }
  EXPECT_THROW(load_subproblems(path), CorruptFile);
  save_subproblems({}, path);
  EXPECT_TRUE(load_subproblems(path).empty());
  std::filesystem::remove(path);
}
