#include "gnnfp/channel.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <tuple>

#include "json.hpp"

#include "gnnfp/binary_io.hpp"

namespace gnnfp {

namespace {

constexpr double kExclusionRadiusKm = 0.001;

double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

}  // namespace

void NetworkConfig::validate() const {
  if (cells < 1 || users < 1 || tx < 1 || rx < 1) {
    throw InvalidConfig("cells, users, tx and rx must all be >= 1");
  }
  if (!(inter_bs_distance_km > 0.0)) throw InvalidConfig("inter-BS distance must be positive");
  if (!(shadowing_std_db >= 0.0)) throw InvalidConfig("shadowing std must be nonnegative");
  if (!std::isfinite(max_tx_power_dbm) || !std::isfinite(noise_power_dbm)) {
    throw InvalidConfig("power levels must be finite");
  }
  if (!weights.empty()) {
    if (weights.size() != static_cast<std::size_t>(cells * users)) {
      throw InvalidConfig("weights must have cells*users entries");
    }
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidConfig("weights must be finite and >= 0");
    }
  }
  if (cell_circumradius_km() <= kExclusionRadiusKm) {
    throw InvalidConfig("cell smaller than the user exclusion radius");
  }
}

double NetworkConfig::power_watts() const { return dbm_to_watts(max_tx_power_dbm); }
double NetworkConfig::noise_watts() const { return dbm_to_watts(noise_power_dbm); }

double NetworkConfig::cell_circumradius_km() const {
  return inter_bs_distance_km / 2.0 / std::numbers::sqrt3;
}

double NetworkConfig::weight(int cell, int user) const {
  if (weights.empty()) return 1.0;
  return weights[static_cast<std::size_t>(cell * users + user)];
}

double BeamformerSet::cell_power(int cell) const {
  double p = 0.0;
  for (int q = 0; q < users; ++q) p += (*this)(cell, q).squaredNorm();
  return p;
}

double path_loss_db(double distance_km) { return 128.1 + 37.6 * std::log10(distance_km); }

double draw_shadowing_db(std::mt19937_64& rng, double std_db) {
  std::normal_distribution<double> normal(0.0, std_db);
  return normal(rng);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (index + 1));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool inside_hexagon(const Eigen::Vector2d& p, const Eigen::Vector2d& center, double circumradius) {
  const double x = std::abs(p.x() - center.x());
  const double y = std::abs(p.y() - center.y());
  const double s3 = std::numbers::sqrt3;
  return y <= s3 / 2.0 * circumradius && s3 * x + y <= s3 * circumradius;
}

std::vector<Eigen::Vector2d> hexagonal_layout(int cells, double inter_bs_distance_km) {
  const double d = inter_bs_distance_km;
  const double pi = std::numbers::pi;
  const Eigen::Vector2d u(d * std::cos(pi / 6), d * std::sin(pi / 6));
  const Eigen::Vector2d w(0.0, d);
  std::vector<std::tuple<double, double, Eigen::Vector2d>> lattice;
  const int span = 1 + static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cells))));
  for (int a = -span; a <= span; ++a) {
    for (int b = -span; b <= span; ++b) {
      Eigen::Vector2d p = a * u + b * w;
      // round the key so equal rings sort by angle, not by rounding noise
      const double radius = std::round(p.norm() / d * 1e9) / 1e9;
      double angle = std::atan2(p.y(), p.x());
      if (angle < 0) angle += 2 * pi;
      lattice.emplace_back(radius, std::round(angle * 1e9) / 1e9, p);
    }
  }
  std::sort(lattice.begin(), lattice.end(), [](const auto& l, const auto& r) {
    return std::tie(std::get<0>(l), std::get<1>(l)) < std::tie(std::get<0>(r), std::get<1>(r));
  });
  std::vector<Eigen::Vector2d> out;
  for (int c = 0; c < cells; ++c) out.push_back(std::get<2>(lattice[static_cast<std::size_t>(c)]));
  return out;
}

NetworkInstance generate_instance(const NetworkConfig& config) {
  config.validate();
  NetworkInstance inst;
  inst.config = config;
  inst.bs_positions = hexagonal_layout(config.cells, config.inter_bs_distance_km);

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> fading(0.0, std::sqrt(0.5));
  const double rc = config.cell_circumradius_km();

  for (int l = 0; l < config.cells; ++l) {
    const Eigen::Vector2d& center = inst.bs_positions[static_cast<std::size_t>(l)];
    for (int q = 0; q < config.users; ++q) {
      Eigen::Vector2d p;
      do {
        p = center + Eigen::Vector2d(unit(rng) * rc, unit(rng) * rc * std::numbers::sqrt3 / 2.0);
      } while (!inside_hexagon(p, center, rc) || (p - center).norm() < kExclusionRadiusKm);
      inst.user_positions.push_back(p);
    }
  }

  const double noise_amplitude = std::sqrt(config.noise_watts());
  inst.channels.resize(static_cast<std::size_t>(config.cells * config.users * config.cells));
  for (int l = 0; l < config.cells; ++l) {
    for (int q = 0; q < config.users; ++q) {
      const Eigen::Vector2d& user = inst.user_positions[static_cast<std::size_t>(l * config.users + q)];
      for (int i = 0; i < config.cells; ++i) {
        const double r = (user - inst.bs_positions[static_cast<std::size_t>(i)]).norm();
        const double loss_db = path_loss_db(r) + draw_shadowing_db(rng, config.shadowing_std_db);
        const double gain = std::pow(10.0, -loss_db / 20.0) / noise_amplitude;
        ComplexMatrix h(config.rx, config.tx);
        for (Eigen::Index a = 0; a < h.rows(); ++a) {
          for (Eigen::Index b = 0; b < h.cols(); ++b) {
            const double re = fading(rng);
            const double im = fading(rng);
            h(a, b) = gain * Complex(re, im);
          }
        }
        inst.H(l, q, i) = std::move(h);
      }
    }
  }
  return inst;
}

BeamformerSet mrt_initializer(const NetworkInstance& inst) {
  BeamformerSet v(inst.cells(), inst.users(), inst.tx());
  for (int l = 0; l < inst.cells(); ++l) {
    const double amplitude = std::sqrt(inst.power(l) / inst.users());
    for (int q = 0; q < inst.users(); ++q) {
      Eigen::JacobiSVD<ComplexMatrix> svd(inst.H(l, q, l), Eigen::ComputeFullV);
      ComplexVector u = svd.matrixV().col(0);
      v(l, q) = amplitude * u / u.norm();
    }
  }
  return v;
}

Dataset generate_dataset(const NetworkConfig& config, std::size_t samples) {
  config.validate();
  Dataset data;
  data.config = config;
  data.samples.resize(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    NetworkConfig c = config;
    c.seed = derive_seed(config.seed, s);
    data.samples[s] = generate_instance(c);
  }
  return data;
}

namespace {

void write_config(std::ostream& out, const NetworkConfig& c) {
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.cells));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.users));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.tx));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.rx));
  io::write_pod(out, c.inter_bs_distance_km);
  io::write_pod(out, c.max_tx_power_dbm);
  io::write_pod(out, c.noise_power_dbm);
  io::write_pod(out, c.shadowing_std_db);
  io::write_pod<std::uint64_t>(out, c.seed);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.weights.size()));
  for (double w : c.weights) io::write_pod(out, w);
}

NetworkConfig read_config(std::istream& in) {
  NetworkConfig c;
  c.cells = static_cast<int>(io::read_pod<std::uint32_t>(in));
  c.users = static_cast<int>(io::read_pod<std::uint32_t>(in));
  c.tx = static_cast<int>(io::read_pod<std::uint32_t>(in));
  c.rx = static_cast<int>(io::read_pod<std::uint32_t>(in));
  c.inter_bs_distance_km = io::read_pod<double>(in);
  c.max_tx_power_dbm = io::read_pod<double>(in);
  c.noise_power_dbm = io::read_pod<double>(in);
  c.shadowing_std_db = io::read_pod<double>(in);
  c.seed = io::read_pod<std::uint64_t>(in);
  const auto nw = io::read_pod<std::uint32_t>(in);
  if (nw > (1u << 24)) throw CorruptFile("implausible weight count");
  c.weights.resize(nw);
  for (auto& w : c.weights) w = io::read_pod<double>(in);
  try {
    c.validate();
  } catch (const InvalidConfig& e) {
    throw CorruptFile(std::string("dataset header: ") + e.what());
  }
  return c;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  io::write_atomically(path, [&](std::ostream& out) {
    io::write_magic(out, "GNFP");
    io::write_pod<std::uint32_t>(out, kDatasetVersion);
    write_config(out, data.config);
    io::write_pod<std::uint64_t>(out, data.samples.size());
    for (const auto& inst : data.samples) {
      io::write_pod<std::uint64_t>(out, inst.config.seed);
      for (const auto& p : inst.bs_positions) {
        io::write_pod(out, p.x());
        io::write_pod(out, p.y());
      }
      for (const auto& p : inst.user_positions) {
        io::write_pod(out, p.x());
        io::write_pod(out, p.y());
      }
      for (const auto& h : inst.channels) {
        for (Eigen::Index a = 0; a < h.rows(); ++a) {
          for (Eigen::Index b = 0; b < h.cols(); ++b) {
            io::write_pod(out, h(a, b).real());
            io::write_pod(out, h(a, b).imag());
          }
        }
      }
    }
  });
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  io::expect_magic(in, "GNFP");
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kDatasetVersion) {
    throw VersionMismatch("dataset version " + std::to_string(version));
  }
  Dataset data;
  data.config = read_config(in);
  const auto count = io::read_pod<std::uint64_t>(in);
  const NetworkConfig& c = data.config;
  data.samples.resize(count);
  for (auto& inst : data.samples) {
    inst.config = c;
    inst.config.seed = io::read_pod<std::uint64_t>(in);
    inst.bs_positions.resize(static_cast<std::size_t>(c.cells));
    for (auto& p : inst.bs_positions) {
      p.x() = io::read_pod<double>(in);
      p.y() = io::read_pod<double>(in);
    }
    inst.user_positions.resize(static_cast<std::size_t>(c.cells * c.users));
    for (auto& p : inst.user_positions) {
      p.x() = io::read_pod<double>(in);
      p.y() = io::read_pod<double>(in);
    }
    inst.channels.resize(static_cast<std::size_t>(c.cells * c.users * c.cells));
    for (auto& h : inst.channels) {
      h.resize(c.rx, c.tx);
      for (Eigen::Index a = 0; a < h.rows(); ++a) {
        for (Eigen::Index b = 0; b < h.cols(); ++b) {
          const double re = io::read_pod<double>(in);
          const double im = io::read_pod<double>(in);
          if (!std::isfinite(re) || !std::isfinite(im)) throw CorruptFile("non-finite channel entry");
          h(a, b) = Complex(re, im);
        }
      }
    }
  }
  return data;
}

void save_dataset_manifest(const Dataset& data, const std::filesystem::path& path) {
  const NetworkConfig& c = data.config;
  nlohmann::json j;
  j["magic"] = "GNFP";
  j["version"] = kDatasetVersion;
  j["config"] = {{"cells", c.cells},
                 {"users", c.users},
                 {"tx", c.tx},
                 {"rx", c.rx},
                 {"inter_bs_distance_km", c.inter_bs_distance_km},
                 {"max_tx_power_dbm", c.max_tx_power_dbm},
                 {"noise_power_dbm", c.noise_power_dbm},
                 {"shadowing_std_db", c.shadowing_std_db},
                 {"seed", c.seed},
                 {"weights", c.weights}};
  j["samples"] = data.samples.size();
  j["channel_units"] = "amplitude gain divided by noise amplitude";
  io::write_atomically(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

std::vector<Split> split_samples(std::size_t samples, double train, double validation,
                                 std::uint64_t seed) {
  if (train < 0 || validation < 0 || train + validation > 1.0 + 1e-12) {
    throw InvalidConfig("split ratios must be nonnegative and sum to at most 1");
  }
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x5eed));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train * static_cast<double>(samples)));
  const auto n_val = std::min(samples - n_train,
                              static_cast<std::size_t>(std::llround(validation * static_cast<double>(samples))));
  std::vector<Split> out(samples, Split::kTest);
  for (std::size_t k = 0; k < samples; ++k) {
    if (k < n_train) {
      out[order[k]] = Split::kTrain;
    } else if (k < n_train + n_val) {
      out[order[k]] = Split::kValidation;
    }
  }
  return out;
}

std::vector<std::size_t> indices_of(const std::vector<Split>& split, Split which) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == which) out.push_back(i);
  }
  return out;
}

}  // namespace gnnfp
