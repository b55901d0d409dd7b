#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <filesystem>
#include <fstream>
#include <random>

#include "gnnfp/channel.hpp"

using namespace gnnfp;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("gnnfp_test_" + name);
}

bool same_instance(const NetworkInstance& a, const NetworkInstance& b) {
  if (a.channels.size() != b.channels.size()) return false;
  for (std::size_t k = 0; k < a.channels.size(); ++k) {
    if (a.channels[k] != b.channels[k]) return false;
  }
  for (std::size_t k = 0; k < a.user_positions.size(); ++k) {
    if (a.user_positions[k] != b.user_positions[k]) return false;
  }
  return a.bs_positions == b.bs_positions;
}

}  // namespace

TEST(Channel, DefaultScenarioShapes) {
  NetworkConfig c;
  const NetworkInstance inst = generate_instance(c);
  EXPECT_EQ(inst.channels.size(), 294u);
  for (const auto& h : inst.channels) {
    EXPECT_EQ(h.rows(), 2);
    EXPECT_EQ(h.cols(), 8);
  }
  EXPECT_EQ(inst.bs_positions.size(), 7u);
  EXPECT_EQ(inst.user_positions.size(), 42u);
  EXPECT_NEAR(inst.power(0), 0.1, 1e-15);
}

TEST(Channel, SameSeedIsBitIdentical) {
  NetworkConfig c;
  c.seed = 42;
  EXPECT_TRUE(same_instance(generate_instance(c), generate_instance(c)));
  c.seed = 43;
  NetworkConfig c2;
  c2.seed = 42;
  EXPECT_FALSE(same_instance(generate_instance(c), generate_instance(c2)));
}

TEST(Channel, ShadowingStatistics) {
  std::mt19937_64 rng(17);
  const int n = 100000;
  double s1 = 0.0, s2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double x = draw_shadowing_db(rng, 8.0);
    s1 += x;
    s2 += x * x;
  }
  const double mean = s1 / n;
  const double sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_LT(std::abs(mean), 0.1);
  EXPECT_LT(std::abs(sd - 8.0), 0.02 * 8.0);
}

TEST(Channel, PathLossFormula) {
  EXPECT_DOUBLE_EQ(path_loss_db(1.0), 128.1);
  EXPECT_NEAR(path_loss_db(0.1), 128.1 - 37.6, 1e-12);
}

TEST(Channel, GeometryInvariants) {
  NetworkConfig c;
  const double rc = c.cell_circumradius_km();
  EXPECT_NEAR(rc, 0.4 / std::sqrt(3.0), 1e-15);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    c.seed = seed;
    const NetworkInstance inst = generate_instance(c);
    for (int l = 0; l < c.cells; ++l) {
      for (int q = 0; q < c.users; ++q) {
        const Eigen::Vector2d p = inst.user_positions[static_cast<std::size_t>(l * c.users + q)];
        const double r = (p - inst.bs_positions[static_cast<std::size_t>(l)]).norm();
        EXPECT_GT(r, 0.001);
        EXPECT_LE(r, rc);
        EXPECT_TRUE(inside_hexagon(p, inst.bs_positions[static_cast<std::size_t>(l)], rc));
      }
    }
    for (const auto& h : inst.channels) {
      EXPECT_TRUE(h.allFinite());
      EXPECT_GT(h.norm(), 0.0);
    }
  }
}

TEST(Channel, HexagonalLayoutSpacing) {
  const auto bs = hexagonal_layout(7, 0.8);
  ASSERT_EQ(bs.size(), 7u);
  EXPECT_EQ(bs[0], Eigen::Vector2d::Zero());
  for (std::size_t k = 1; k < 7; ++k) {
    EXPECT_NEAR(bs[k].norm(), 0.8, 1e-12);
    EXPECT_NEAR((bs[k] - bs[k % 6 + 1]).norm(), 0.8, 1e-12);
  }
}

TEST(Channel, InvalidConfig) {
  for (auto mutate : std::vector<std::function<void(NetworkConfig&)>>{
           [](NetworkConfig& c) { c.cells = 0; }, [](NetworkConfig& c) { c.users = 0; },
           [](NetworkConfig& c) { c.tx = 0; }, [](NetworkConfig& c) { c.rx = 0; },
           [](NetworkConfig& c) { c.inter_bs_distance_km = 0.0; },
           [](NetworkConfig& c) { c.weights = {1.0, -1.0}; }}) {
    NetworkConfig c;
    mutate(c);
    EXPECT_THROW(generate_instance(c), InvalidConfig);
  }
}

TEST(Mrt, MatchedFilterForSingleRxAntenna) {
  NetworkConfig c;
  c.rx = 1;
  c.cells = 2;
  c.users = 2;
  const NetworkInstance inst = generate_instance(c);
  const BeamformerSet v = mrt_initializer(inst);
  for (int l = 0; l < c.cells; ++l) {
    for (int q = 0; q < c.users; ++q) {
      const ComplexVector h = inst.H(l, q, l).row(0).adjoint();
      const ComplexVector u = v(l, q) / std::sqrt(inst.power(l) / c.users);
      // unique up to a phase
      const Complex phase = h.dot(u) / h.norm();
      EXPECT_NEAR(std::abs(phase), 1.0, 1e-12);
      EXPECT_LT((u - h / h.norm() * phase).norm(), 1e-12);
    }
  }
}

TEST(Mrt, FullPowerAndDominance) {
  NetworkConfig c;
  c.seed = 5;
  const NetworkInstance inst = generate_instance(c);
  const BeamformerSet v = mrt_initializer(inst);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int l = 0; l < c.cells; ++l) {
    EXPECT_NEAR(v.cell_power(l), inst.power(l), 1e-9 * inst.power(l));
    for (int q = 0; q < c.users; ++q) {
      const ComplexVector u = v(l, q).normalized();
      const double best = (inst.H(l, q, l) * u).norm();
      for (int trial = 0; trial < 100; ++trial) {
        ComplexVector w(c.tx);
        for (int i = 0; i < c.tx; ++i) w(i) = Complex(n(rng), n(rng));
        w.normalize();
        EXPECT_GE(best, (inst.H(l, q, l) * w).norm() * (1 - 1e-12));
      }
    }
  }
}

TEST(Dataset, RoundTripAndDeterministicBytes) {
  NetworkConfig c;
  c.seed = 9;
  const Dataset data = generate_dataset(c, 3);
  const auto a = temp_path("ds_a.bin"), b = temp_path("ds_b.bin");
  save_dataset(data, a);
  save_dataset(generate_dataset(c, 3), b);
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(sa, sb);
  const Dataset back = load_dataset(a);
  ASSERT_EQ(back.samples.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_TRUE(same_instance(back.samples[k], data.samples[k]));
  EXPECT_EQ(back.samples[1].config.seed, derive_seed(9, 1));
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST(Dataset, SampleMatchesStandaloneGeneration) {
  NetworkConfig c;
  c.seed = 9;
  const Dataset data = generate_dataset(c, 2);
  NetworkConfig one = c;
  one.seed = derive_seed(9, 1);
  EXPECT_TRUE(same_instance(data.samples[1], generate_instance(one)));
}

TEST(Dataset, EmptyDatasetIsHeaderOnly) {
  const auto p = temp_path("ds_empty.bin");
  save_dataset(generate_dataset(NetworkConfig{}, 0), p);
  EXPECT_TRUE(load_dataset(p).samples.empty());
  std::filesystem::remove(p);
}

TEST(Dataset, BadMagicVersionAndTruncation) {
  const auto p = temp_path("ds_bad.bin");
  save_dataset(generate_dataset(NetworkConfig{}, 1), p);
  std::string bytes;
  {
    std::ifstream in(p, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
  };
  std::string bad = bytes;
  bad[0] = 'X';
  write(bad);
  EXPECT_THROW(load_dataset(p), CorruptFile);
  bad = bytes;
  bad[4] = 99;
  write(bad);
  EXPECT_THROW(load_dataset(p), VersionMismatch);
  write(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(load_dataset(p), CorruptFile);
  std::filesystem::remove(p);
  EXPECT_THROW(load_dataset(p), IoError);
}

TEST(Split, PartitionIsDisjointDeterministicAndProportional) {
  const auto s1 = split_samples(1000, 0.7, 0.15, 3);
  const auto s2 = split_samples(1000, 0.7, 0.15, 3);
  EXPECT_EQ(s1, s2);
  const auto tr = indices_of(s1, Split::kTrain), va = indices_of(s1, Split::kValidation),
             te = indices_of(s1, Split::kTest);
  EXPECT_EQ(tr.size(), 700u);
  EXPECT_EQ(va.size(), 150u);
  EXPECT_EQ(te.size(), 150u);
  EXPECT_NE(split_samples(1000, 0.7, 0.15, 4), s1);
  EXPECT_THROW(split_samples(10, 0.8, 0.3, 1), InvalidConfig);
}
