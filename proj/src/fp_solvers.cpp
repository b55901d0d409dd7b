#include "gnnfp/fp_solvers.hpp"

#include <chrono>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <optional>

namespace gnnfp {

namespace {

std::size_t flat(const NetworkInstance& inst, int cell, int user) {
  return static_cast<std::size_t>(cell * inst.users() + user);
}

/// Columns are the beamformers of one cell.
ComplexMatrix cell_matrix(const BeamformerSet& v, int cell) {
  ComplexMatrix m(v.tx, v.users);
  for (int q = 0; q < v.users; ++q) m.col(q) = v(cell, q);
  return m;
}

/// Total received covariance I + sum_ij H v v^H H^H at user (cell, user).
ComplexMatrix received_covariance(const NetworkInstance& inst, const std::vector<ComplexMatrix>& cell_beams,
                                  int cell, int user) {
  ComplexMatrix total = ComplexMatrix::Identity(inst.rx(), inst.rx());
  for (int i = 0; i < inst.cells(); ++i) {
    const ComplexMatrix hv = inst.H(cell, user, i) * cell_beams[static_cast<std::size_t>(i)];
    total.noalias() += hv * hv.adjoint();
  }
  return total;
}

std::vector<ComplexMatrix> all_cell_matrices(const BeamformerSet& v) {
  std::vector<ComplexMatrix> out;
  out.reserve(static_cast<std::size_t>(v.cells));
  for (int l = 0; l < v.cells; ++l) out.push_back(cell_matrix(v, l));
  return out;
}

double sinr(const ComplexMatrix& interference, const ComplexVector& signal) {
  if (signal.squaredNorm() == 0.0) return 0.0;
  const ComplexMatrix x = hermitian_solve(interference, signal);
  return std::max(0.0, std::real(signal.dot(x.col(0))));
}

}  // namespace

ComplexMatrix interference_covariance(const NetworkInstance& inst, const BeamformerSet& v, int cell,
                                      int user) {
  ComplexMatrix c = ComplexMatrix::Identity(inst.rx(), inst.rx());
  for (int i = 0; i < inst.cells(); ++i) {
    const ComplexMatrix& h = inst.H(cell, user, i);
    for (int j = 0; j < inst.users(); ++j) {
      if (i == cell && j == user) continue;
      const ComplexVector s = h * v(i, j);
      c.noalias() += s * s.adjoint();
    }
  }
  return c;
}

double user_rate(const NetworkInstance& inst, const BeamformerSet& v, int cell, int user) {
  const ComplexVector s = inst.H(cell, user, cell) * v(cell, user);
  return std::log1p(sinr(interference_covariance(inst, v, cell, user), s));
}

double weighted_sum_rate(const NetworkInstance& inst, const BeamformerSet& v) {
  const std::vector<double> gamma = update_gamma(inst, v);
  double total = 0.0;
  for (int l = 0; l < inst.cells(); ++l) {
    for (int q = 0; q < inst.users(); ++q) total += inst.weight(l, q) * std::log1p(gamma[flat(inst, l, q)]);
  }
  return total;
}

AuxState update_aux(const NetworkInstance& inst, const BeamformerSet& v) {
  AuxState aux;
  const auto n = static_cast<std::size_t>(inst.cells() * inst.users());
  aux.y.resize(n);
  aux.gamma.resize(n);
  const auto beams = all_cell_matrices(v);
  for (int l = 0; l < inst.cells(); ++l) {
    for (int q = 0; q < inst.users(); ++q) {
      const ComplexMatrix total = received_covariance(inst, beams, l, q);
      const ComplexVector s = inst.H(l, q, l) * v(l, q);
      aux.y[flat(inst, l, q)] = hermitian_solve(total, s).col(0);
      aux.gamma[flat(inst, l, q)] = sinr(total - s * s.adjoint(), s);
    }
  }
  return aux;
}

std::vector<double> update_gamma(const NetworkInstance& inst, const BeamformerSet& v) {
  std::vector<double> gamma(static_cast<std::size_t>(inst.cells() * inst.users()));
  const auto beams = all_cell_matrices(v);
  for (int l = 0; l < inst.cells(); ++l) {
    for (int q = 0; q < inst.users(); ++q) {
      const ComplexVector s = inst.H(l, q, l) * v(l, q);
      gamma[flat(inst, l, q)] = sinr(received_covariance(inst, beams, l, q) - s * s.adjoint(), s);
    }
  }
  return gamma;
}

std::vector<ComplexVector> update_y(const NetworkInstance& inst, const BeamformerSet& v) {
  std::vector<ComplexVector> y(static_cast<std::size_t>(inst.cells() * inst.users()));
  const auto beams = all_cell_matrices(v);
  for (int l = 0; l < inst.cells(); ++l) {
    for (int q = 0; q < inst.users(); ++q) {
      const ComplexVector s = inst.H(l, q, l) * v(l, q);
      y[flat(inst, l, q)] = hermitian_solve(received_covariance(inst, beams, l, q), s).col(0);
    }
  }
  return y;
}

ComplexMatrix build_D(const NetworkInstance& inst, std::span<const ComplexVector> y,
                      std::span<const double> gamma, int cell) {
  ComplexMatrix d = ComplexMatrix::Zero(inst.tx(), inst.tx());
  for (int i = 0; i < inst.cells(); ++i) {
    for (int j = 0; j < inst.users(); ++j) {
      const std::size_t k = flat(inst, i, j);
      const double w = inst.weight(i, j) * (1.0 + gamma[k]);
      if (w == 0.0) continue;
      const ComplexVector g = inst.H(i, j, cell).adjoint() * y[k];
      d.noalias() += w * (g * g.adjoint());
    }
  }
  return d;
}

ComplexVector linear_term(const NetworkInstance& inst, std::span<const ComplexVector> y,
                          std::span<const double> gamma, int cell, int user) {
  const std::size_t k = flat(inst, cell, user);
  return inst.weight(cell, user) * (1.0 + gamma[k]) * (inst.H(cell, user, cell).adjoint() * y[k]);
}

double fp_surrogate(const NetworkInstance& inst, const BeamformerSet& v, std::span<const ComplexVector> y,
                    std::span<const double> gamma) {
  double total = 0.0;
  for (int l = 0; l < inst.cells(); ++l) {
    const ComplexMatrix d = build_D(inst, y, gamma, l);
    for (int q = 0; q < inst.users(); ++q) {
      const std::size_t k = flat(inst, l, q);
      const double w = inst.weight(l, q);
      const ComplexVector& vq = v(l, q);
      const ComplexVector b = linear_term(inst, y, gamma, l, q);
      total += 2.0 * std::real(vq.dot(b)) - std::real(vq.dot(d * vq)) -
               w * (1.0 + gamma[k]) * y[k].squaredNorm() + w * std::log1p(gamma[k]) - w * gamma[k];
    }
  }
  return total;
}

QpSolution solve_qp_bisection(const ComplexMatrix& d, std::span<const ComplexVector> b, double power,
                              double tol) {
  if (d.rows() != d.cols()) throw DimensionMismatch("solve_qp_bisection: D must be square");
  if (!(power > 0.0)) throw NumericalFailure("solve_qp_bisection: power budget must be positive");
  const Eigen::Index n = d.rows();
  const auto users = static_cast<Eigen::Index>(b.size());
  ComplexMatrix rhs(n, users);
  for (Eigen::Index q = 0; q < users; ++q) {
    if (b[static_cast<std::size_t>(q)].size() != n) throw DimensionMismatch("solve_qp_bisection: b size");
    rhs.col(q) = b[static_cast<std::size_t>(q)];
  }

  QpSolution sol;
  auto evaluate = [&](double lambda) -> std::optional<ComplexMatrix> {
    ++sol.evaluations;
    try {
      ComplexMatrix shifted = d;
      shifted.diagonal().array() += lambda;
      return hermitian_solve(shifted, rhs);
    } catch (const NotPositiveDefinite&) {
      return std::nullopt;
    }
  };
  auto finish = [&](const ComplexMatrix& x, double lambda) {
    sol.lambda = lambda;
    sol.v.resize(static_cast<std::size_t>(users));
    for (Eigen::Index q = 0; q < users; ++q) sol.v[static_cast<std::size_t>(q)] = x.col(q);
    return sol;
  };

  if (auto x0 = evaluate(0.0); x0 && x0->squaredNorm() <= power) return finish(*x0, 0.0);

  double lo = 0.0;
  double hi = 1.0;
  std::optional<ComplexMatrix> x_hi = evaluate(hi);
  while (!x_hi || x_hi->squaredNorm() > power) {
    lo = hi;
    hi *= 2.0;
    if (hi > kTolerances.lambda_ceiling) {
      throw NumericalFailure("solve_qp_bisection: multiplier bracket exceeded ceiling");
    }
    x_hi = evaluate(hi);
  }
  double p_hi = x_hi->squaredNorm();
  while (std::abs(p_hi - power) > tol * power &&
         hi - lo > kTolerances.bisection_interval * std::max(1.0, hi)) {
    const double mid = 0.5 * (lo + hi);
    auto x_mid = evaluate(mid);
    if (x_mid && x_mid->squaredNorm() <= power) {
      hi = mid;
      p_hi = x_mid->squaredNorm();
      x_hi = std::move(x_mid);
    } else {
      lo = mid;
    }
  }
  return finish(*x_hi, hi);
}

double qp_objective(const ComplexMatrix& d, std::span<const ComplexVector> b,
                    std::span<const ComplexVector> v) {
  if (b.size() != v.size()) throw DimensionMismatch("qp_objective: b and v counts differ");
  double total = 0.0;
  for (std::size_t q = 0; q < v.size(); ++q) {
    total += std::real(v[q].dot(d * v[q])) - 2.0 * std::real(v[q].dot(b[q]));
  }
  return total;
}

std::pair<BeamformerSet, SolverTrace> run_fp_iterations(const NetworkInstance& inst, const BeamformerSet& v0,
                                                        int iterations, const CellUpdate& update) {
  using Clock = std::chrono::steady_clock;
  SolverTrace trace;
  BeamformerSet v = v0;
  trace.wsr.push_back(weighted_sum_rate(inst, v));
  trace.elapsed_ms.push_back(0.0);
  double elapsed = 0.0;
  for (int k = 0; k < iterations; ++k) {
    const auto start = Clock::now();
    const AuxState aux = update_aux(inst, v);
    BeamformerSet next = v;
    for (int l = 0; l < inst.cells(); ++l) update(l, aux, v, next);
    v = std::move(next);
    elapsed += std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    trace.wsr.push_back(weighted_sum_rate(inst, v));
    trace.elapsed_ms.push_back(elapsed);
    ++trace.iterations;
  }
  return {std::move(v), std::move(trace)};
}

void classical_fp_cell_update(const NetworkInstance& inst, int cell, const AuxState& aux, BeamformerSet& next) {
  const ComplexMatrix d = build_D(inst, aux.y, aux.gamma, cell);
  std::vector<ComplexVector> b;
  b.reserve(static_cast<std::size_t>(inst.users()));
  for (int q = 0; q < inst.users(); ++q) b.push_back(linear_term(inst, aux.y, aux.gamma, cell, q));
  QpSolution sol = solve_qp_bisection(d, b, inst.power(cell));
  for (int q = 0; q < inst.users(); ++q) next(cell, q) = std::move(sol.v[static_cast<std::size_t>(q)]);
}

std::pair<BeamformerSet, SolverTrace> classical_fp(const NetworkInstance& inst, const BeamformerSet& v0,
                                                   int iterations) {
  return run_fp_iterations(inst, v0, iterations,
                           [&inst](int cell, const AuxState& aux, const BeamformerSet&, BeamformerSet& next) {
                             classical_fp_cell_update(inst, cell, aux, next);
                           });
}

StepRule parse_step_rule(const std::string& name) {
  if (name == "eigen") return StepRule::kEigen;
  if (name == "frobenius") return StepRule::kFrobenius;
  throw InvalidConfig("unknown step rule '" + name + "' (eigen|frobenius)");
}

double fastfp_cell_update(const NetworkInstance& inst, int cell, const AuxState& aux,
                          const BeamformerSet& previous, StepRule rule, BeamformerSet& next) {
  const ComplexMatrix d = build_D(inst, aux.y, aux.gamma, cell);
  double delta = 0.0;
  if (rule == StepRule::kFrobenius) {
    delta = frobenius_norm(d);
  } else {
    try {
      delta = dominant_eigenvalue(d);
    } catch (const NoConvergence&) {
      // nearly tied top eigenvalues stall power iteration; d is only Nt x Nt
      delta = Eigen::SelfAdjointEigenSolver<ComplexMatrix>(d, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    }
  }
  double power = 0.0;
  for (int q = 0; q < inst.users(); ++q) {
    const ComplexVector& t = previous(cell, q);
    ComplexVector step = linear_term(inst, aux.y, aux.gamma, cell, q) - d * t;
    // D == 0 only when every filter vanishes; the gradient is zero then
    next(cell, q) = delta > 0.0 ? ComplexVector(t + step / delta) : t;
    power += next(cell, q).squaredNorm();
  }
  if (power > inst.power(cell)) {
    const double shrink = std::sqrt(inst.power(cell) / power);
    for (int q = 0; q < inst.users(); ++q) next(cell, q) *= shrink;
  }
  return delta;
}

std::pair<BeamformerSet, SolverTrace> fastfp(const NetworkInstance& inst, const BeamformerSet& v0,
                                             int iterations, StepRule rule) {
  return run_fp_iterations(
      inst, v0, iterations,
      [&inst, rule](int cell, const AuxState& aux, const BeamformerSet& previous, BeamformerSet& next) {
        fastfp_cell_update(inst, cell, aux, previous, rule, next);
      });
}

}  // namespace gnnfp
