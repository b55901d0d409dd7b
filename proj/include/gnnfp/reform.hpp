#pragma once

// Per-cell beamforming update written as one augmented Hermitian form:
//
//   min  [v; 1]^H D_aug [v; 1]   s.t. ||v||^2 <= P,
//   D_aug = [[blkdiag(D, ..., D), -b], [-b^H, 0]],
//
// with v the Q per-user beamformers stacked and b the stacked linear terms.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gnnfp/channel.hpp"
#include "gnnfp/fp_solvers.hpp"
#include "gnnfp/numerics.hpp"

namespace gnnfp {

struct QuadraticSubproblem {
  int cell = 0;
  int tx = 0;
  int users = 0;
  double power = 0.0;
  /// Largest entry modulus of d_aug (at least 1e-30). Graph features are
  /// d_aug / scale; the stored matrix stays raw.
  double scale = 1.0;
  ComplexMatrix d_aug;

  Eigen::Index n_var() const { return static_cast<Eigen::Index>(tx) * users; }
  /// The Nt x Nt block repeated along the diagonal.
  ComplexMatrix block() const { return d_aug.topLeftCorner(tx, tx); }
  /// Stacked linear term b (negated last column).
  ComplexVector linear() const { return -d_aug.col(n_var()).head(n_var()); }
  /// Throws DimensionMismatch / NotHermitian when the layout is violated.
  void validate() const;
};

/// Assembles D_aug from a block and per-user linear terms.
QuadraticSubproblem make_subproblem(int cell, const ComplexMatrix& block, std::span<const ComplexVector> linear,
                                    double power);

QuadraticSubproblem build_subproblem(const NetworkInstance& inst, std::span<const ComplexVector> y,
                                     std::span<const double> gamma, int cell);

ComplexVector stack(std::span<const ComplexVector> parts);
std::vector<ComplexVector> unstack(const QuadraticSubproblem& sub, const ComplexVector& v_sta);

/// Real value of [v;1]^H D_aug [v;1].
double objective(const QuadraticSubproblem& sub, const ComplexVector& v_sta);

/// Exact minimizer through the multiplier bisection on the unstacked form.
ComplexVector oracle_solve(const QuadraticSubproblem& sub);

// ---------------------------------------------------------------------------
// Harvested-subproblem container ("GNFPHARV").

inline constexpr std::uint32_t kHarvestVersion = 1;

struct HarvestRecord {
  std::uint64_t instance_id = 0;
  std::uint32_t iteration = 0;
  QuadraticSubproblem sub;
};

void save_subproblems(const std::vector<HarvestRecord>& records, const std::filesystem::path& path);
std::vector<HarvestRecord> load_subproblems(const std::filesystem::path& path);

}  // namespace gnnfp
