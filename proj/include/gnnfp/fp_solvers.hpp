#pragma once

// Rates, the fractional-programming surrogate, and the classical FP and
// FastFP iterations. All quantities assume unit noise power (channels are
// noise-normalized at generation time).

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gnnfp/channel.hpp"
#include "gnnfp/numerics.hpp"

namespace gnnfp {

/// Auxiliary variables of the FP iterations, indexed (cell, user) except
/// `delta`, which is per cell. `t` and `delta` are only used by FastFP.
struct AuxState {
  std::vector<ComplexVector> y;
  std::vector<double> gamma;
  std::vector<ComplexVector> t;
  std::vector<double> delta;
};

/// Per-iteration record. wsr[0] is the objective at the initial point;
/// elapsed_ms[k] is the cumulative solver time after iteration k.
struct SolverTrace {
  std::vector<double> wsr;
  std::vector<double> elapsed_ms;
  int iterations = 0;
};

/// Interference-plus-noise covariance at user (cell, user).
ComplexMatrix interference_covariance(const NetworkInstance& inst, const BeamformerSet& v,
                                      int cell, int user);
/// Achievable rate in nats.
double user_rate(const NetworkInstance& inst, const BeamformerSet& v, int cell, int user);
double weighted_sum_rate(const NetworkInstance& inst, const BeamformerSet& v);

/// SINR surrogate gamma_lq = s^H C^-1 s with s = H_{lq,l} v_lq.
std::vector<double> update_gamma(const NetworkInstance& inst, const BeamformerSet& v);
/// Receive filters y_lq = (I + sum_ij H v v^H H^H)^-1 H_{lq,l} v_lq.
std::vector<ComplexVector> update_y(const NetworkInstance& inst, const BeamformerSet& v);
/// y and gamma together, sharing the received-signal products.
AuxState update_aux(const NetworkInstance& inst, const BeamformerSet& v);

/// Quadratic coefficient D_l = sum_ij w_ij (1 + gamma_ij) H_{ij,l}^H y_ij y_ij^H H_{ij,l}.
ComplexMatrix build_D(const NetworkInstance& inst, std::span<const ComplexVector> y,
                      std::span<const double> gamma, int cell);
/// Linear coefficient b_lq = w_lq (1 + gamma_lq) H_{lq,l}^H y_lq.
ComplexVector linear_term(const NetworkInstance& inst, std::span<const ComplexVector> y,
                          std::span<const double> gamma, int cell, int user);

/// The FP surrogate f_t(v, y, gamma), summed over every cell and user.
double fp_surrogate(const NetworkInstance& inst, const BeamformerSet& v,
                    std::span<const ComplexVector> y, std::span<const double> gamma);

struct QpSolution {
  std::vector<ComplexVector> v;
  double lambda = 0.0;
  int evaluations = 0;
};

/// Minimizes sum_q [v_q^H D v_q - 2 Re(v_q^H b_q)] subject to
/// sum_q ||v_q||^2 <= power via v_q(lambda) = (lambda I + D)^-1 b_q and
/// bisection on the smallest feasible lambda >= 0.
QpSolution solve_qp_bisection(const ComplexMatrix& d, std::span<const ComplexVector> b, double power,
                              double tol = kTolerances.bisection_tol);

/// Per-cell objective sum_q [v_q^H D v_q - 2 Re(v_q^H b_q)].
double qp_objective(const ComplexMatrix& d, std::span<const ComplexVector> b,
                    std::span<const ComplexVector> v);

/// Replaces the beamformers of one cell given the auxiliary variables
/// computed at `previous`.
using CellUpdate = std::function<void(int cell, const AuxState& aux, const BeamformerSet& previous,
                                      BeamformerSet& next)>;

/// Shared y -> gamma -> v loop. One iteration updates every cell once.
/// Wall time covers the aux and v updates; the recorded WSR evaluation is
/// excluded.
std::pair<BeamformerSet, SolverTrace> run_fp_iterations(const NetworkInstance& inst,
                                                        const BeamformerSet& v0, int iterations,
                                                        const CellUpdate& update);

/// Classical FP: exact v-update per cell by multiplier bisection.
void classical_fp_cell_update(const NetworkInstance& inst, int cell, const AuxState& aux,
                              BeamformerSet& next);
std::pair<BeamformerSet, SolverTrace> classical_fp(const NetworkInstance& inst, const BeamformerSet& v0,
                                                   int iterations);

enum class StepRule { kEigen, kFrobenius };
StepRule parse_step_rule(const std::string& name);

/// FastFP v-update for one cell: gradient step of size 1/delta from t = the
/// previous beamformers, then rescaling onto the power ball if it leaves it.
/// Returns the delta that was used.
double fastfp_cell_update(const NetworkInstance& inst, int cell, const AuxState& aux,
                          const BeamformerSet& previous, StepRule rule, BeamformerSet& next);
std::pair<BeamformerSet, SolverTrace> fastfp(const NetworkInstance& inst, const BeamformerSet& v0,
                                             int iterations, StepRule rule);

}  // namespace gnnfp
