#include "gnnfp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gnnfp::ad {

namespace {

Tape& same_tape(const Tensor& a, const Tensor& b) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw ShapeMismatch("operands live on different tapes");
  }
  return *a.tape();
}

std::string shape_str(const Array& a) {
  return std::to_string(a.rows()) + "x" + std::to_string(a.cols());
}

void check_offsets(std::span<const Index> offsets, Index rows) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows) {
    throw ShapeMismatch("segment offsets must start at 0 and end at row count");
  }
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    if (offsets[s + 1] <= offsets[s]) throw ShapeMismatch("empty or decreasing segment");
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor / Tape

const Array& Tensor::value() const { return tape_->value(id_); }

Array Tensor::grad() const {
  if (tape_->has_grad(id_)) return tape_->grad_of(id_);
  return Array::Zero(rows(), cols());
}

bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

double Tensor::scalar() const {
  if (rows() != 1 || cols() != 1) throw ShapeMismatch("scalar() on " + shape_str(value()));
  return value()(0, 0);
}

Tensor Tape::variable(Array value) {
  nodes_.push_back(Node{std::move(value), Array(), true, nullptr});
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::constant(Array value) {
  nodes_.push_back(Node{std::move(value), Array(), false, nullptr});
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::record(Array value, std::initializer_list<Tensor> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  nodes_.push_back(Node{std::move(value), Array(), needs, needs ? std::move(backward) : nullptr});
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::record(Array value, const std::vector<Tensor>& inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  nodes_.push_back(Node{std::move(value), Array(), needs, needs ? std::move(backward) : nullptr});
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Array& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Array::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw ShapeMismatch("loss lives on another tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw NonScalarLoss("backward needs a 1x1 loss, got " + shape_str(loss.value()));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_buffer(loss.id()).setOnes();
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Primitives

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  const int ia = a.id(), ib = b.id();
  return tape.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    const Array& g = t.grad_of(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tape& tape = same_tape(a, b);
  const int ia = a.id(), ib = b.id();
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    return tape.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
      const Array& g = t.grad_of(self);
      if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
      if (t.requires_grad(ib)) t.grad_buffer(ib) += g;
    });
  }
  if (b.rows() == 1 && b.cols() == a.cols()) {
    Array out = a.value();
    out.rowwise() += b.value().row(0);
    return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
      const Array& g = t.grad_of(self);
      if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
      if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
    });
  }
  throw ShapeMismatch("add " + shape_str(a.value()) + " + " + shape_str(b.value()));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape& tape = same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeMismatch("sub " + shape_str(a.value()) + " - " + shape_str(b.value()));
  }
  const int ia = a.id(), ib = b.id();
  return tape.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    const Array& g = t.grad_of(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia) += g;
    if (t.requires_grad(ib)) t.grad_buffer(ib) -= g;
  });
}

Tensor scale(const Tensor& a, double factor) {
  const int ia = a.id();
  return a.tape()->record(a.value() * factor, {a}, [ia, factor](Tape& t, int self) {
    t.grad_buffer(ia) += factor * t.grad_of(self);
  });
}

Tensor add_scalar(const Tensor& a, double offset) {
  const int ia = a.id();
  return a.tape()->record(a.value().array() + offset, {a}, [ia](Tape& t, int self) {
    t.grad_buffer(ia) += t.grad_of(self);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& tape = same_tape(a, b);
  const int ia = a.id(), ib = b.id();
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    return tape.record(av.cwiseProduct(bv), {a, b}, [ia, ib](Tape& t, int self) {
      const Array& g = t.grad_of(self);
      if (t.requires_grad(ia)) t.grad_buffer(ia) += g.cwiseProduct(t.value(ib));
      if (t.requires_grad(ib)) t.grad_buffer(ib) += g.cwiseProduct(t.value(ia));
    });
  }
  if (bv.rows() == 1 && bv.cols() == 1) {
    return tape.record(av * bv(0, 0), {a, b}, [ia, ib](Tape& t, int self) {
      const Array& g = t.grad_of(self);
      if (t.requires_grad(ia)) t.grad_buffer(ia) += g * t.value(ib)(0, 0);
      if (t.requires_grad(ib)) t.grad_buffer(ib)(0, 0) += g.cwiseProduct(t.value(ia)).sum();
    });
  }
  if (bv.cols() == 1 && bv.rows() == av.rows()) {
    Array out = av.array().colwise() * bv.col(0).array();
    return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
      const Array& g = t.grad_of(self);
      if (t.requires_grad(ia)) {
        t.grad_buffer(ia).array() += g.array().colwise() * t.value(ib).col(0).array();
      }
      if (t.requires_grad(ib)) {
        t.grad_buffer(ib).col(0) += g.cwiseProduct(t.value(ia)).rowwise().sum();
      }
    });
  }
  if (bv.rows() == 1 && bv.cols() == av.cols()) {
    Array out = av.array().rowwise() * bv.row(0).array();
    return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
      const Array& g = t.grad_of(self);
      if (t.requires_grad(ia)) {
        t.grad_buffer(ia).array() += g.array().rowwise() * t.value(ib).row(0).array();
      }
      if (t.requires_grad(ib)) {
        t.grad_buffer(ib).row(0) += g.cwiseProduct(t.value(ia)).colwise().sum();
      }
    });
  }
  throw ShapeMismatch("mul " + shape_str(av) + " .* " + shape_str(bv));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of nothing");
  if (axis != 0 && axis != 1) throw ShapeMismatch("concat axis must be 0 or 1");
  Tape& tape = *parts.front().tape();
  Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw ShapeMismatch("concat across tapes");
    if (axis == 0) {
      if (rows != 0 && p.cols() != cols) throw ShapeMismatch("concat rows: column mismatch");
      cols = p.cols();
      rows += p.rows();
    } else {
      if (cols != 0 && p.rows() != rows) throw ShapeMismatch("concat cols: row mismatch");
      rows = p.rows();
      cols += p.cols();
    }
  }
  Array out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> starts;
  Index at = 0;
  for (const auto& p : parts) {
    ids.push_back(p.id());
    starts.push_back(at);
    if (axis == 0) {
      out.middleRows(at, p.rows()) = p.value();
      at += p.rows();
    } else {
      out.middleCols(at, p.cols()) = p.value();
      at += p.cols();
    }
  }
  return tape.record(std::move(out), parts, [ids, starts, axis](Tape& t, int self) {
    const Array& g = t.grad_of(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      const Array& v = t.value(ids[k]);
      if (axis == 0) {
        t.grad_buffer(ids[k]) += g.middleRows(starts[k], v.rows());
      } else {
        t.grad_buffer(ids[k]) += g.middleCols(starts[k], v.cols());
      }
    }
  });
}

Tensor relu(const Tensor& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().cwiseMax(0.0), {a}, [ia](Tape& t, int self) {
    t.grad_buffer(ia).array() +=
        (t.value(ia).array() > 0.0).cast<double>() * t.grad_of(self).array();
  });
}

Tensor square(const Tensor& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().array().square(), {a}, [ia](Tape& t, int self) {
    t.grad_buffer(ia).array() += 2.0 * t.value(ia).array() * t.grad_of(self).array();
  });
}

Tensor sqrt(const Tensor& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().array().sqrt(), {a}, [ia](Tape& t, int self) {
    t.grad_buffer(ia).array() += 0.5 * t.grad_of(self).array() / t.value(self).array();
  });
}

Tensor reciprocal(const Tensor& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().array().inverse(), {a}, [ia](Tape& t, int self) {
    t.grad_buffer(ia).array() -= t.grad_of(self).array() * t.value(self).array().square();
  });
}

Tensor clamp_min(const Tensor& a, double lo) {
  const int ia = a.id();
  return a.tape()->record(a.value().cwiseMax(lo), {a}, [ia, lo](Tape& t, int self) {
    t.grad_buffer(ia).array() +=
        (t.value(ia).array() >= lo).cast<double>() * t.grad_of(self).array();
  });
}

Tensor sum(const Tensor& a) {
  const int ia = a.id();
  Array out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, int self) {
    t.grad_buffer(ia).array() += t.grad_of(self)(0, 0);
  });
}

Tensor reduce_max(const Tensor& a, std::span<const Index> offsets) {
  const Array& v = a.value();
  check_offsets(offsets, v.rows());
  const Index segs = static_cast<Index>(offsets.size()) - 1;
  Array out(segs, v.cols());
  std::vector<Index> argmax(static_cast<std::size_t>(segs * v.cols()));
  for (Index s = 0; s < segs; ++s) {
    const Index lo = offsets[s], hi = offsets[s + 1];
    for (Index c = 0; c < v.cols(); ++c) {
      Index best = lo;
      double best_value = v(lo, c);
      for (Index r = lo + 1; r < hi; ++r) {
        if (v(r, c) > best_value) {  // strict: first maximizer wins ties
          best_value = v(r, c);
          best = r;
        }
      }
      out(s, c) = best_value;
      argmax[static_cast<std::size_t>(s * v.cols() + c)] = best;
    }
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, argmax = std::move(argmax)](Tape& t, int self) {
    const Array& g = t.grad_of(self);
    Array& ga = t.grad_buffer(ia);
    const Index cols = g.cols();
    for (Index s = 0; s < g.rows(); ++s) {
      for (Index c = 0; c < cols; ++c) {
        ga(argmax[static_cast<std::size_t>(s * cols + c)], c) += g(s, c);
      }
    }
  });
}

Tensor reduce_sum(const Tensor& a, std::span<const Index> offsets) {
  const Array& v = a.value();
  check_offsets(offsets, v.rows());
  const Index segs = static_cast<Index>(offsets.size()) - 1;
  Array out(segs, v.cols());
  for (Index s = 0; s < segs; ++s) {
    out.row(s) = v.middleRows(offsets[s], offsets[s + 1] - offsets[s]).colwise().sum();
  }
  const int ia = a.id();
  std::vector<Index> offs(offsets.begin(), offsets.end());
  return a.tape()->record(std::move(out), {a}, [ia, offs = std::move(offs)](Tape& t, int self) {
    const Array& g = t.grad_of(self);
    Array& ga = t.grad_buffer(ia);
    for (std::size_t s = 0; s + 1 < offs.size(); ++s) {
      ga.middleRows(offs[s], offs[s + 1] - offs[s]).rowwise() += g.row(static_cast<Index>(s));
    }
  });
}

Tensor reduce_mean(const Tensor& a, std::span<const Index> offsets) {
  const Array& v = a.value();
  check_offsets(offsets, v.rows());
  const Index segs = static_cast<Index>(offsets.size()) - 1;
  Array out(segs, v.cols());
  for (Index s = 0; s < segs; ++s) {
    const Index len = offsets[s + 1] - offsets[s];
    out.row(s) = v.middleRows(offsets[s], len).colwise().sum() / static_cast<double>(len);
  }
  const int ia = a.id();
  std::vector<Index> offs(offsets.begin(), offsets.end());
  return a.tape()->record(std::move(out), {a}, [ia, offs = std::move(offs)](Tape& t, int self) {
    const Array& g = t.grad_of(self);
    Array& ga = t.grad_buffer(ia);
    for (std::size_t s = 0; s + 1 < offs.size(); ++s) {
      const Index len = offs[s + 1] - offs[s];
      ga.middleRows(offs[s], len).rowwise() += g.row(static_cast<Index>(s)) / static_cast<double>(len);
    }
  });
}

Tensor select_rows(const Tensor& a, std::span<const Index> indices) {
  const Array& v = a.value();
  Array out(static_cast<Index>(indices.size()), v.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= v.rows()) throw ShapeMismatch("select_rows index out of range");
    out.row(static_cast<Index>(r)) = v.row(indices[r]);
  }
  const int ia = a.id();
  std::vector<Index> idx(indices.begin(), indices.end());
  return a.tape()->record(std::move(out), {a}, [ia, idx = std::move(idx)](Tape& t, int self) {
    const Array& g = t.grad_of(self);
    Array& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) ga.row(idx[r]) += g.row(static_cast<Index>(r));
  });
}

Tensor transpose(const Tensor& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().transpose(), {a}, [ia](Tape& t, int self) {
    t.grad_buffer(ia) += t.grad_of(self).transpose();
  });
}

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  const Array& v = a.value();
  if (rows * cols != v.size()) {
    throw ShapeMismatch("reshape " + shape_str(v) + " to " + std::to_string(rows) + "x" +
                        std::to_string(cols));
  }
  Array out = Eigen::Map<const Array>(v.data(), rows, cols);
  const int ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, int self) {
    Array& ga = t.grad_buffer(ia);
    const Array& g = t.grad_of(self);
    Eigen::Map<Array>(ga.data(), g.rows(), g.cols()) += g;
  });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, Mode mode) {
  Tape& tape = same_tape(x, gamma);
  const Array& xv = x.value();
  const Index n = xv.rows(), c = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c ||
      state.running_mean.cols() != c || state.running_var.cols() != c) {
    throw ShapeMismatch("batchnorm parameters do not match channel count");
  }
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  if (mode == Mode::kEval) {
    Array inv_std = (state.running_var.array() + state.eps).rsqrt();
    Array xhat = (xv.rowwise() - state.running_mean.row(0)).array().rowwise() * inv_std.row(0).array();
    Array out = xhat.array().rowwise() * gamma.value().row(0).array();
    out.rowwise() += beta.value().row(0);
    return tape.record(std::move(out), {x, gamma, beta},
                       [ix, ig, ib, inv_std, xhat = std::move(xhat)](Tape& t, int self) {
                         const Array& g = t.grad_of(self);
                         if (t.requires_grad(ix)) {
                           t.grad_buffer(ix).array() += g.array().rowwise() *
                               (t.value(ig).row(0).array() * inv_std.row(0).array());
                         }
                         if (t.requires_grad(ig)) t.grad_buffer(ig) += g.cwiseProduct(xhat).colwise().sum();
                         if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
                       });
  }
  if (n < 2) throw DegenerateBatch("batchnorm training mode needs at least 2 rows");
  Array mean = xv.colwise().mean();
  Array centered = xv.rowwise() - mean.row(0);
  Array var = centered.array().square().colwise().sum() / static_cast<double>(n);
  Array inv_std = (var.array() + state.eps).rsqrt();
  Array xhat = centered.array().rowwise() * inv_std.row(0).array();
  Array out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);

  const double m = state.momentum;
  state.running_mean = (1.0 - m) * state.running_mean + m * mean;
  state.running_var = (1.0 - m) * state.running_var + m * var * (static_cast<double>(n) / (n - 1));

  return tape.record(std::move(out), {x, gamma, beta},
                     [ix, ig, ib, inv_std, xhat = std::move(xhat)](Tape& t, int self) {
                       const Array& g = t.grad_of(self);
                       if (t.requires_grad(ig)) t.grad_buffer(ig) += g.cwiseProduct(xhat).colwise().sum();
                       if (t.requires_grad(ib)) t.grad_buffer(ib) += g.colwise().sum();
                       if (t.requires_grad(ix)) {
                         const double rows = static_cast<double>(g.rows());
                         Array gxhat = g.array().rowwise() * t.value(ig).row(0).array();
                         Array mean_g = gxhat.colwise().sum() / rows;
                         Array mean_gx = gxhat.cwiseProduct(xhat).colwise().sum() / rows;
                         Array dx = gxhat.rowwise() - mean_g.row(0);
                         dx -= (xhat.array().rowwise() * mean_gx.row(0).array()).matrix();
                         t.grad_buffer(ix).array() += dx.array().rowwise() * inv_std.row(0).array();
                       }
                     });
}

namespace {

std::uint64_t stream_base(const DropoutKey& key) {
  std::uint64_t h = splitmix64(key.seed);
  h = splitmix64(h ^ key.epoch);
  h = splitmix64(h ^ key.batch);
  return splitmix64(h ^ key.layer);
}

double unit_draw(std::uint64_t base, std::uint64_t index) {
  return static_cast<double>(splitmix64(base ^ index) >> 11) * 0x1.0p-53;
}

}  // namespace

double dropout_uniform(const DropoutKey& key, std::uint64_t index) { return unit_draw(stream_base(key), index); }

Tensor dropout(const Tensor& x, double rate, const DropoutKey& key, Mode mode) {
  if (mode == Mode::kEval || rate <= 0.0) return x;
  if (rate >= 1.0) throw ShapeMismatch("dropout rate must be < 1");
  const Array& xv = x.value();
  Array mask(xv.rows(), xv.cols());
  const double keep_scale = 1.0 / (1.0 - rate);
  const std::uint64_t base = stream_base(key);
  for (Index k = 0; k < mask.size(); ++k) {
    mask.data()[k] = unit_draw(base, static_cast<std::uint64_t>(k)) >= rate ? keep_scale : 0.0;
  }
  Array out = xv.cwiseProduct(mask);
  const int ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, mask = std::move(mask)](Tape& t, int self) {
    t.grad_buffer(ix) += t.grad_of(self).cwiseProduct(mask);
  });
}

void adam_step(std::span<Array* const> params, std::span<const Array> grads, AdamState& state) {
  if (params.size() != grads.size()) throw ShapeMismatch("adam: params/grads count differ");
  if (state.first_moment.empty()) {
    for (const Array* p : params) {
      state.first_moment.push_back(Array::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Array::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeMismatch("adam: state size differs");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Array& p = *params[k];
    const Array& g = grads[k];
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw ShapeMismatch("adam: gradient shape");
    Array& m = state.first_moment[k];
    Array& v = state.second_moment[k];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseAbs2();
    p.array() -= state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

}  // namespace gnnfp::ad
