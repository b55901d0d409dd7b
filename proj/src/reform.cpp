#include "gnnfp/reform.hpp"

#include <cmath>

#include "gnnfp/binary_io.hpp"

namespace gnnfp {

void QuadraticSubproblem::validate() const {
  const Eigen::Index n = n_var();
  if (tx < 1 || users < 1 || d_aug.rows() != n + 1 || d_aug.cols() != n + 1) {
    throw DimensionMismatch("subproblem: D_aug must be (tx*users+1) square");
  }
  if (!(power > 0.0) || !(scale > 0.0)) throw DimensionMismatch("subproblem: power and scale must be positive");
  if ((d_aug - d_aug.adjoint()).norm() > 1e-10 * d_aug.norm()) {
    throw NotHermitian("subproblem: D_aug is not Hermitian");
  }
  if (d_aug(n, n) != Complex(0.0, 0.0)) throw DimensionMismatch("subproblem: corner entry must be 0");
  const double tol = 1e-12 * scale;
  const auto first = d_aug.topLeftCorner(tx, tx);
  for (Eigen::Index r = 0; r < users; ++r) {
    for (Eigen::Index c = 0; c < users; ++c) {
      const auto blk = d_aug.block(r * tx, c * tx, tx, tx);
      const double off = r == c ? (blk - first).cwiseAbs().maxCoeff() : blk.cwiseAbs().maxCoeff();
      if (off > tol) throw DimensionMismatch("subproblem: variable block is not blkdiag(D, ..., D)");
    }
  }
}

QuadraticSubproblem make_subproblem(int cell, const ComplexMatrix& block, std::span<const ComplexVector> linear,
                                    double power) {
  const auto tx = block.rows();
  const auto users = static_cast<Eigen::Index>(linear.size());
  const Eigen::Index n = tx * users;
  QuadraticSubproblem sub;
  sub.cell = cell;
  sub.tx = static_cast<int>(tx);
  sub.users = static_cast<int>(users);
  sub.power = power;
  sub.d_aug = ComplexMatrix::Zero(n + 1, n + 1);
  for (Eigen::Index q = 0; q < users; ++q) {
    const ComplexVector& b = linear[static_cast<std::size_t>(q)];
    if (b.size() != tx) throw DimensionMismatch("make_subproblem: linear term size");
    sub.d_aug.block(q * tx, q * tx, tx, tx) = block;
    sub.d_aug.block(q * tx, n, tx, 1) = -b;
    sub.d_aug.block(n, q * tx, 1, tx) = -b.adjoint();
  }
  sub.scale = std::max(1e-30, sub.d_aug.cwiseAbs().maxCoeff());
  return sub;
}

QuadraticSubproblem build_subproblem(const NetworkInstance& inst, std::span<const ComplexVector> y,
                                     std::span<const double> gamma, int cell) {
  const ComplexMatrix d = build_D(inst, y, gamma, cell);
  std::vector<ComplexVector> b;
  b.reserve(static_cast<std::size_t>(inst.users()));
  for (int q = 0; q < inst.users(); ++q) b.push_back(linear_term(inst, y, gamma, cell, q));
  return make_subproblem(cell, d, b, inst.power(cell));
}

ComplexVector stack(std::span<const ComplexVector> parts) {
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.size();
  ComplexVector out(total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

std::vector<ComplexVector> unstack(const QuadraticSubproblem& sub, const ComplexVector& v_sta) {
  if (v_sta.size() != sub.n_var()) throw DimensionMismatch("unstack: vector length != tx*users");
  std::vector<ComplexVector> out;
  out.reserve(static_cast<std::size_t>(sub.users));
  for (int q = 0; q < sub.users; ++q) out.push_back(v_sta.segment(static_cast<Eigen::Index>(q) * sub.tx, sub.tx));
  return out;
}

double objective(const QuadraticSubproblem& sub, const ComplexVector& v_sta) {
  const Eigen::Index n = sub.n_var();
  if (v_sta.size() != n) throw DimensionMismatch("objective: vector length != tx*users");
  ComplexVector v_bar(n + 1);
  v_bar.head(n) = v_sta;
  v_bar(n) = 1.0;
  const Complex value = v_bar.dot(sub.d_aug * v_bar);
  if (std::abs(value.imag()) > 1e-10 * std::max(1.0, std::abs(value.real()))) {
    throw NotHermitian("objective: quadratic form has an imaginary part");
  }
  return value.real();
}

ComplexVector oracle_solve(const QuadraticSubproblem& sub) {
  const QpSolution sol = solve_qp_bisection(sub.block(), unstack(sub, sub.linear()), sub.power);
  return stack(sol.v);
}

void save_subproblems(const std::vector<HarvestRecord>& records, const std::filesystem::path& path) {
  io::write_atomically(path, [&](std::ostream& out) {
    io::write_magic(out, "GNFPHARV");
    io::write_pod<std::uint32_t>(out, kHarvestVersion);
    io::write_pod<std::uint64_t>(out, records.size());
    for (const auto& r : records) {
      const QuadraticSubproblem& s = r.sub;
      io::write_pod<std::uint64_t>(out, r.instance_id);
      io::write_pod<std::uint32_t>(out, r.iteration);
      io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.cell));
      io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.tx));
      io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.users));
      io::write_pod(out, s.power);
      io::write_pod(out, s.scale);
      for (Eigen::Index i = 0; i < s.d_aug.rows(); ++i) {
        for (Eigen::Index j = 0; j < s.d_aug.cols(); ++j) {
          io::write_pod(out, s.d_aug(i, j).real());
          io::write_pod(out, s.d_aug(i, j).imag());
        }
      }
    }
  });
}

std::vector<HarvestRecord> load_subproblems(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  io::expect_magic(in, "GNFPHARV");
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kHarvestVersion) throw VersionMismatch("harvest version " + std::to_string(version));
  const auto count = io::read_pod<std::uint64_t>(in);
  std::vector<HarvestRecord> records;
  records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t k = 0; k < count; ++k) {
    HarvestRecord r;
    r.instance_id = io::read_pod<std::uint64_t>(in);
    r.iteration = io::read_pod<std::uint32_t>(in);
    QuadraticSubproblem& s = r.sub;
    s.cell = static_cast<int>(io::read_pod<std::uint32_t>(in));
    s.tx = static_cast<int>(io::read_pod<std::uint32_t>(in));
    s.users = static_cast<int>(io::read_pod<std::uint32_t>(in));
    s.power = io::read_pod<double>(in);
    s.scale = io::read_pod<double>(in);
    if (s.tx < 1 || s.users < 1 || s.tx * s.users > 4096) throw CorruptFile("implausible subproblem dims");
    const Eigen::Index n = s.n_var() + 1;
    s.d_aug.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double re = io::read_pod<double>(in);
        const double im = io::read_pod<double>(in);
        s.d_aug(i, j) = Complex(re, im);
      }
    }
    try {
      s.validate();
    } catch (const Error& e) {
      throw CorruptFile(std::string("harvest record: ") + e.what());
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace gnnfp
