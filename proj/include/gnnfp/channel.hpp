#pragma once

// Multi-cell downlink scenarios: hexagonal BS layout, uniform user drops,
// log-distance path loss with log-normal shadowing and Rayleigh fading.
//
// Channel matrices are stored divided by the noise amplitude, so every
// solver works with unit noise power.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "gnnfp/numerics.hpp"

namespace gnnfp {

struct NetworkConfig {
  int cells = 7;
  int users = 6;
  int tx = 8;
  int rx = 2;
  double inter_bs_distance_km = 0.8;
  double max_tx_power_dbm = 20.0;
  double noise_power_dbm = -90.0;
  double shadowing_std_db = 8.0;
  /// Per-user weights in (cell, user) order; empty means all ones.
  std::vector<double> weights;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig.
  void validate() const;
  double power_watts() const;
  double noise_watts() const;
  /// Circumradius of the hexagon users are dropped in.
  double cell_circumradius_km() const;
  double weight(int cell, int user) const;
};

/// One drop of the network. Links are indexed (cell, user, bs).
struct NetworkInstance {
  NetworkConfig config;
  std::vector<ComplexMatrix> channels;  // rx x tx each
  std::vector<Eigen::Vector2d> bs_positions;
  std::vector<Eigen::Vector2d> user_positions;  // (cell, user) order

  int cells() const { return config.cells; }
  int users() const { return config.users; }
  int tx() const { return config.tx; }
  int rx() const { return config.rx; }
  double power(int /*cell*/) const { return config.power_watts(); }
  double weight(int cell, int user) const { return config.weight(cell, user); }

  /// Channel from BS `bs` to user (cell, user).
  const ComplexMatrix& H(int cell, int user, int bs) const {
    return channels[static_cast<std::size_t>((cell * config.users + user) * config.cells + bs)];
  }
  ComplexMatrix& H(int cell, int user, int bs) {
    return channels[static_cast<std::size_t>((cell * config.users + user) * config.cells + bs)];
  }
};

/// One transmit vector per (cell, user).
struct BeamformerSet {
  int cells = 0;
  int users = 0;
  int tx = 0;
  std::vector<ComplexVector> v;

  BeamformerSet() = default;
  BeamformerSet(int cells_, int users_, int tx_)
      : cells(cells_), users(users_), tx(tx_),
        v(static_cast<std::size_t>(cells_ * users_), ComplexVector::Zero(tx_)) {}

  ComplexVector& operator()(int cell, int user) { return v[static_cast<std::size_t>(cell * users + user)]; }
  const ComplexVector& operator()(int cell, int user) const {
    return v[static_cast<std::size_t>(cell * users + user)];
  }
  double cell_power(int cell) const;
};

/// Path loss in dB at distance r (km) without shadowing.
double path_loss_db(double distance_km);

/// One shadowing draw, N(0, std^2) in dB.
double draw_shadowing_db(std::mt19937_64& rng, double std_db);

/// Seed of sample `index` in a dataset seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// True when `p` lies inside the flat-top hexagon of the given circumradius
/// centered at `center`.
bool inside_hexagon(const Eigen::Vector2d& p, const Eigen::Vector2d& center, double circumradius);

/// BS coordinates: cell 0 at the origin, then rings of neighbours at the
/// inter-BS distance.
std::vector<Eigen::Vector2d> hexagonal_layout(int cells, double inter_bs_distance_km);

/// Deterministic in config.seed. Throws InvalidConfig.
NetworkInstance generate_instance(const NetworkConfig& config);

/// v_lq = sqrt(P_l / Q) u_lq, u_lq the dominant right singular vector of
/// H_{lq,l}.
BeamformerSet mrt_initializer(const NetworkInstance& inst);

// ---------------------------------------------------------------------------
// Dataset container ("GNFP" magic, versioned header, per-sample records).

inline constexpr std::uint32_t kDatasetVersion = 1;

struct Dataset {
  NetworkConfig config;  // config.seed is the dataset seed
  std::vector<NetworkInstance> samples;
};

/// Sample i uses derive_seed(config.seed, i).
Dataset generate_dataset(const NetworkConfig& config, std::size_t samples);

void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
/// JSON manifest mirroring the binary header.
void save_dataset_manifest(const Dataset& data, const std::filesystem::path& path);

enum class Split { kTrain, kValidation, kTest };

/// Deterministic random partition of sample indices by the given ratios.
std::vector<Split> split_samples(std::size_t samples, double train, double validation,
                                 std::uint64_t seed);
std::vector<std::size_t> indices_of(const std::vector<Split>& split, Split which);

}  // namespace gnnfp
