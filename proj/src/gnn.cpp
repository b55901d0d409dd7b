#include "gnnfp/gnn.hpp"

#include <cmath>
#include <string>

#include "gnnfp/binary_io.hpp"

namespace gnnfp {

using ad::Array;
using ad::Tensor;

// ---------------------------------------------------------------------------
// Graph construction

ProblemGraph build_graph(const ComplexMatrix& d_aug, double scale, double power) {
  if (d_aug.rows() != d_aug.cols() || d_aug.rows() < 2) throw ShapeMismatch("build_graph: D_aug must be square, n >= 2");
  if (!(scale > 0.0)) throw ShapeMismatch("build_graph: scale must be positive");
  ProblemGraph g;
  const Eigen::Index n = d_aug.rows();
  g.n_var = n - 1;
  g.power = power;
  g.node_features.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    g.node_features(i, 0) = d_aug(i, i).real() / scale;
    g.node_features(i, 1) = d_aug(i, i).imag() / scale;
  }
  const Eigen::Index edges = n * (n - 1);
  g.edge_features.resize(edges, 2);
  g.edge_dst.reserve(static_cast<std::size_t>(edges));
  g.edge_src.reserve(static_cast<std::size_t>(edges));
  Eigen::Index e = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      g.edge_dst.push_back(i);
      g.edge_src.push_back(j);
      g.edge_features(e, 0) = d_aug(i, j).real() / scale;
      g.edge_features(e, 1) = d_aug(i, j).imag() / scale;
      ++e;
    }
  }
  return g;
}

ProblemGraph build_graph(const QuadraticSubproblem& sub) { return build_graph(sub.d_aug, sub.scale, sub.power); }

// ---------------------------------------------------------------------------
// Model

namespace {

void push_mlp(std::vector<Array*>& out, Mlp& m) {
  for (Array* a : {&m.fc1.weight, &m.fc1.bias, &m.bn1.gamma, &m.bn1.beta, &m.fc2.weight, &m.fc2.bias, &m.bn2.gamma,
                   &m.bn2.beta}) {
    out.push_back(a);
  }
}

Linear init_linear(int in, int out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Linear l;
  l.weight.resize(in, out);
  l.bias.resize(1, out);
  for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = u(rng);
  for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias.data()[k] = u(rng);
  return l;
}

BatchNorm init_batchnorm(int channels) {
  BatchNorm bn;
  bn.gamma = Array::Ones(1, channels);
  bn.beta = Array::Zero(1, channels);
  bn.stats.running_mean = Array::Zero(1, channels);
  bn.stats.running_var = Array::Ones(1, channels);
  return bn;
}

Mlp init_mlp(int in, int hidden, int out, std::mt19937_64& rng) {
  Mlp m;
  m.fc1 = init_linear(in, hidden, rng);
  m.bn1 = init_batchnorm(hidden);
  m.fc2 = init_linear(hidden, out, rng);
  m.bn2 = init_batchnorm(out);
  return m;
}

std::size_t linear_size(const Linear& l) { return static_cast<std::size_t>(l.weight.size() + l.bias.size()); }
std::size_t mlp_affine_size(const Mlp& m) { return linear_size(m.fc1) + linear_size(m.fc2); }
std::size_t mlp_bn_size(const Mlp& m) {
  return static_cast<std::size_t>(m.bn1.gamma.size() + m.bn1.beta.size() + m.bn2.gamma.size() + m.bn2.beta.size());
}

}  // namespace

std::vector<Array*> GnnModel::parameters() {
  std::vector<Array*> out;
  push_mlp(out, node_encoder);
  push_mlp(out, edge_encoder);
  for (auto& c : convs) push_mlp(out, c);
  out.push_back(&decoder.weight);
  out.push_back(&decoder.bias);
  return out;
}

std::vector<const Array*> GnnModel::parameters() const {
  auto mut = const_cast<GnnModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<ad::BatchNormState*> GnnModel::batchnorm_states() {
  std::vector<ad::BatchNormState*> out;
  auto add = [&out](Mlp& m) {
    out.push_back(&m.bn1.stats);
    out.push_back(&m.bn2.stats);
  };
  add(node_encoder);
  add(edge_encoder);
  for (auto& c : convs) add(c);
  return out;
}

std::vector<const ad::BatchNormState*> GnnModel::batchnorm_states() const {
  auto mut = const_cast<GnnModel*>(this)->batchnorm_states();
  return {mut.begin(), mut.end()};
}

std::size_t GnnModel::parameter_count() const {
  std::size_t n = 0;
  for (const Array* a : parameters()) n += static_cast<std::size_t>(a->size());
  return n;
}

GnnModel init_model(const GnnDims& dims, std::uint64_t seed) {
  if (dims.input < 1 || dims.encoder_hidden < 1 || dims.latent < 1 || dims.conv_hidden < 1 || dims.conv_out < 1 ||
      dims.layers < 1 || dims.output != 2) {
    throw InvalidConfig("init_model: bad dimensions");
  }
  std::mt19937_64 rng(seed);
  GnnModel m;
  m.dims = dims;
  m.node_encoder = init_mlp(dims.input, dims.encoder_hidden, dims.latent, rng);
  m.edge_encoder = init_mlp(dims.input, dims.encoder_hidden, dims.latent, rng);
  for (int k = 0; k < dims.layers; ++k) {
    m.convs.push_back(init_mlp(dims.conv_input(k), dims.conv_hidden, dims.conv_out, rng));
  }
  m.decoder = init_linear(dims.final_width(), dims.output, rng);
  return m;
}

ParameterBreakdown parameter_breakdown(const GnnModel& model) {
  ParameterBreakdown b;
  b.node_encoder = mlp_affine_size(model.node_encoder);
  b.node_encoder_bn = mlp_bn_size(model.node_encoder);
  b.edge_encoder = mlp_affine_size(model.edge_encoder);
  b.edge_encoder_bn = mlp_bn_size(model.edge_encoder);
  for (const auto& c : model.convs) {
    b.conv.push_back(mlp_affine_size(c));
    b.conv_bn.push_back(mlp_bn_size(c));
  }
  b.decoder = linear_size(model.decoder);
  return b;
}

// ---------------------------------------------------------------------------
// Batching

GraphBatch make_batch(std::span<const ProblemGraph* const> graphs) {
  GraphBatch b;
  Eigen::Index nodes = 0, edges = 0;
  for (const ProblemGraph* g : graphs) {
    nodes += g->n_nodes();
    edges += g->n_edges();
  }
  b.node_features.resize(nodes, 2);
  b.edge_features.resize(edges, 2);
  b.edge_dst.reserve(static_cast<std::size_t>(edges));
  b.edge_src.reserve(static_cast<std::size_t>(edges));
  b.node_edge_offsets.assign(1, 0);
  b.var_offsets.assign(1, 0);
  Eigen::Index node_base = 0, edge_base = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const ProblemGraph& g = *graphs[gi];
    b.node_features.middleRows(node_base, g.n_nodes()) = g.node_features;
    b.edge_features.middleRows(edge_base, g.n_edges()) = g.edge_features;
    Eigen::Index e = 0;
    for (Eigen::Index i = 0; i < g.n_nodes(); ++i) {
      while (e < g.n_edges() && g.edge_dst[static_cast<std::size_t>(e)] == i) {
        b.edge_dst.push_back(node_base + i);
        b.edge_src.push_back(node_base + g.edge_src[static_cast<std::size_t>(e)]);
        ++e;
      }
      b.node_edge_offsets.push_back(edge_base + e);
    }
    if (e != g.n_edges()) throw ShapeMismatch("make_batch: edges must be grouped by destination");
    for (Eigen::Index i = 0; i < g.n_var; ++i) {
      b.var_rows.push_back(node_base + i);
      b.var_graph.push_back(static_cast<Eigen::Index>(gi));
    }
    b.var_offsets.push_back(static_cast<Eigen::Index>(b.var_rows.size()));
    b.power.push_back(g.power);
    node_base += g.n_nodes();
    edge_base += g.n_edges();
  }
  return b;
}

ParameterTensors bind_parameters(ad::Tape& tape, const GnnModel& model, bool requires_grad) {
  ParameterTensors p;
  for (const Array* a : model.parameters()) p.leaves.push_back(requires_grad ? tape.variable(*a) : tape.constant(*a));
  return p;
}

// ---------------------------------------------------------------------------
// Taped forward

namespace {

/// out[e] = a[dst[e]] + b[src[e]] + c[e]
Tensor gather_add(const Tensor& a, const Tensor& b, const Tensor& c, std::span<const Eigen::Index> dst,
                  std::span<const Eigen::Index> src) {
  const Array& av = a.value();
  const Array& bv = b.value();
  Array out = c.value();
  for (Eigen::Index e = 0; e < out.rows(); ++e) {
    out.row(e) += av.row(dst[static_cast<std::size_t>(e)]) + bv.row(src[static_cast<std::size_t>(e)]);
  }
  const int ia = a.id(), ib = b.id(), ic = c.id();
  return a.tape()->record(std::move(out), {a, b, c}, [ia, ib, ic, dst, src](ad::Tape& t, int self) {
    const Array& g = t.grad_of(self);
    if (t.requires_grad(ia)) {
      Array& ga = t.grad_buffer(ia);
      for (Eigen::Index e = 0; e < g.rows(); ++e) ga.row(dst[static_cast<std::size_t>(e)]) += g.row(e);
    }
    if (t.requires_grad(ib)) {
      Array& gb = t.grad_buffer(ib);
      for (Eigen::Index e = 0; e < g.rows(); ++e) gb.row(src[static_cast<std::size_t>(e)]) += g.row(e);
    }
    if (t.requires_grad(ic)) t.grad_buffer(ic) += g;
  });
}

std::vector<Eigen::Index> iota(Eigen::Index begin, Eigen::Index end) {
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = begin; i < end; ++i) out.push_back(i);
  return out;
}

struct Stage {
  const std::vector<Tensor>& leaves;
  ad::Mode mode;
  ad::DropoutKey key;
  double rate;

  Tensor leaf(std::size_t k) const { return leaves[k]; }

  Tensor finish(Tensor z, const Tensor& gamma, const Tensor& beta, ad::BatchNormState& st, std::uint64_t layer) const {
    z = ad::batchnorm(z, gamma, beta, st, mode);
    z = ad::relu(z);
    ad::DropoutKey k = key;
    k.layer = layer;
    return ad::dropout(z, rate, k, mode);
  }

  /// Second half of an MLP starting at leaf index `base`.
  Tensor tail(const Tensor& hidden, Mlp& m, std::size_t base, std::uint64_t layer) const {
    Tensor z = ad::add(ad::matmul(hidden, leaf(base + 4)), leaf(base + 5));
    return finish(z, leaf(base + 6), leaf(base + 7), m.bn2.stats, layer);
  }

  Tensor mlp(const Tensor& x, Mlp& m, std::size_t base, std::uint64_t layer) const {
    Tensor z = ad::add(ad::matmul(x, leaf(base)), leaf(base + 1));
    z = finish(z, leaf(base + 2), leaf(base + 3), m.bn1.stats, layer);
    return tail(z, m, base, layer + 1);
  }
};

constexpr std::size_t kLeavesPerMlp = 8;

}  // namespace

Tensor forward(GnnModel& model, ad::Tape& tape, const ParameterTensors& params, const GraphBatch& batch,
               const ForwardOptions& options) {
  const GnnDims& d = model.dims;
  const std::size_t expected = kLeavesPerMlp * (2 + model.convs.size()) + 2;
  if (params.leaves.size() != expected) throw ShapeMismatch("forward: parameter tensor count");
  if (batch.node_features.cols() != d.input || batch.edge_features.cols() != d.input) {
    throw ShapeMismatch("forward: feature width does not match the model");
  }
  if (batch.graphs() == 0) throw ShapeMismatch("forward: empty batch");

  Stage s{params.leaves, options.mode, options.dropout, model.mlp_dropout};
  Tensor x = tape.constant(batch.node_features);
  Tensor ex = tape.constant(batch.edge_features);
  const Tensor h0 = s.mlp(x, model.node_encoder, 0, 0);
  const Tensor e0 = s.mlp(ex, model.edge_encoder, kLeavesPerMlp, 2);

  Tensor h = h0;
  for (std::size_t k = 0; k < model.convs.size(); ++k) {
    const std::size_t base = kLeavesPerMlp * (2 + k);
    const Tensor w = s.leaf(base);
    const Eigen::Index width = h.cols();
    const auto rows_i = iota(0, width);
    const auto rows_j = iota(width, 2 * width);
    const auto rows_e = iota(2 * width, 2 * width + d.latent);
    if (w.rows() != 2 * width + d.latent) throw ShapeMismatch("forward: EdgeConv input width");
    const Tensor hi = ad::add(ad::matmul(h, ad::select_rows(w, rows_i)), s.leaf(base + 1));
    const Tensor hj = ad::matmul(h, ad::select_rows(w, rows_j));
    const Tensor he = ad::matmul(e0, ad::select_rows(w, rows_e));
    Tensor z = gather_add(hi, hj, he, batch.edge_dst, batch.edge_src);
    Mlp& m = model.convs[k];
    z = s.finish(z, s.leaf(base + 2), s.leaf(base + 3), m.bn1.stats, 4 + 2 * k);
    const Tensor msg = s.tail(z, m, base, 5 + 2 * k);
    h = ad::concat({ad::reduce_max(msg, batch.node_edge_offsets), ad::reduce_mean(msg, batch.node_edge_offsets)}, 1);
  }

  Tensor final = ad::concat({h, h0}, 1);
  final = ad::select_rows(final, batch.var_rows);
  ad::DropoutKey key = options.dropout;
  key.layer = 4 + 2 * model.convs.size();
  final = ad::dropout(final, model.decoder_dropout, key, options.mode);
  const std::size_t dec = kLeavesPerMlp * (2 + model.convs.size());
  const Tensor raw = ad::add(ad::matmul(final, s.leaf(dec)), s.leaf(dec + 1));

  // Power projection per graph.
  const std::size_t graphs = batch.graphs();
  const Tensor row_power = ad::matmul(ad::square(raw), tape.constant(Array::Ones(raw.cols(), 1)));
  const Tensor power = ad::reduce_sum(row_power, batch.var_offsets);
  Array active(static_cast<Eigen::Index>(graphs), 1), idle(static_cast<Eigen::Index>(graphs), 1);
  for (std::size_t g = 0; g < graphs; ++g) {
    const bool over = power.value()(static_cast<Eigen::Index>(g), 0) > batch.power[g];
    active(static_cast<Eigen::Index>(g), 0) = over ? std::sqrt(batch.power[g]) : 0.0;
    idle(static_cast<Eigen::Index>(g), 0) = over ? 0.0 : 1.0;
  }
  Tensor factor = ad::reciprocal(ad::sqrt(ad::add_scalar(power, model.projection_eps)));
  factor = ad::add(ad::mul(factor, tape.constant(std::move(active))), tape.constant(std::move(idle)));
  return ad::mul(raw, ad::select_rows(factor, batch.var_graph));
}

Tensor quadratic_loss(ad::Tape& tape, const Tensor& v, const GraphBatch& batch,
                      std::span<const QuadraticSubproblem* const> subs, std::span<const double> weights) {
  if (subs.size() != batch.graphs()) throw ShapeMismatch("quadratic_loss: one subproblem per graph");
  if (!weights.empty() && weights.size() != subs.size()) throw ShapeMismatch("quadratic_loss: one weight per graph");
  if (v.rows() != static_cast<Eigen::Index>(batch.var_rows.size()) || v.cols() != 2) {
    throw ShapeMismatch("quadratic_loss: forward output shape");
  }
  const Tensor one = tape.constant(Array::Ones(1, 1));
  const Tensor zero = tape.constant(Array::Zero(1, 1));
  std::vector<Tensor> terms;
  for (std::size_t g = 0; g < subs.size(); ++g) {
    const QuadraticSubproblem& sub = *subs[g];
    const Eigen::Index lo = batch.var_offsets[g], n = batch.var_offsets[g + 1] - lo;
    if (n != sub.n_var()) throw ShapeMismatch("quadratic_loss: subproblem size differs from graph");
    const Tensor vt = ad::transpose(ad::select_rows(v, iota(lo, lo + n)));
    const Eigen::Index re_row[] = {0}, im_row[] = {1};
    const Tensor xbar = ad::concat({ad::select_rows(vt, re_row), one, ad::select_rows(vt, im_row), zero}, 1);
    const Tensor m = tape.constant(real_embed(sub.d_aug));
    Tensor term = ad::sum(ad::mul(ad::matmul(xbar, m), xbar));
    terms.push_back(weights.empty() ? term : ad::scale(term, weights[g]));
  }
  return ad::scale(ad::sum(ad::concat(terms, 0)), 1.0 / static_cast<double>(subs.size()));
}

ComplexVector rows_to_complex(const Array& rows, Eigen::Index begin, Eigen::Index count) {
  ComplexVector out(count);
  for (Eigen::Index i = 0; i < count; ++i) out(i) = Complex(rows(begin + i, 0), rows(begin + i, 1));
  return out;
}

// ---------------------------------------------------------------------------
// Folded inference

template <typename Scalar>
typename GnnInference<Scalar>::Folded GnnInference<Scalar>::fold(const Mlp& mlp) {
  auto fold_one = [](const Linear& l, const BatchNorm& bn, Matrix& w, RowVector& b) {
    const Array s = (bn.gamma.array() / (bn.stats.running_var.array() + bn.stats.eps).sqrt()).matrix();
    Array wd = l.weight.array().rowwise() * s.row(0).array();
    Array bd = ((l.bias - bn.stats.running_mean).array() * s.array() + bn.beta.array()).matrix();
    w = wd.cast<Scalar>();
    b = bd.row(0).cast<Scalar>();
  };
  Folded f;
  fold_one(mlp.fc1, mlp.bn1, f.w1, f.b1);
  fold_one(mlp.fc2, mlp.bn2, f.w2, f.b2);
  return f;
}

template <typename Scalar>
GnnInference<Scalar>::GnnInference(const GnnModel& model)
    : dims_(model.dims),
      node_encoder_(fold(model.node_encoder)),
      edge_encoder_(fold(model.edge_encoder)),
      decoder_w_(model.decoder.weight.cast<Scalar>()),
      decoder_b_(model.decoder.bias.row(0).cast<Scalar>()),
      projection_eps_(model.projection_eps) {
  for (const auto& c : model.convs) convs_.push_back(fold(c));
}

template <typename Scalar>
template <typename EdgeFeature>
ComplexVector GnnInference<Scalar>::run(const Matrix& node_features, const EdgeFeature& edge_feature, double power) const {
  const Eigen::Index n = node_features.rows();
  const Eigen::Index deg = n - 1;
  const Eigen::Index edges = n * deg;

  auto mlp = [](const Matrix& x, const Folded& f) {
    Matrix z = x * f.w1;
    z.rowwise() += f.b1;
    relu_inplace(z);
    Matrix out = z * f.w2;
    out.rowwise() += f.b2;
    relu_inplace(out);
    return out;
  };
  const Matrix h0 = mlp(node_features, node_encoder_);

  // Edges with an all-zero feature share one embedding, stored in the last row.
  std::vector<Eigen::Index> slot(static_cast<std::size_t>(edges));
  Matrix edge_in(edges + 1, 2);
  Eigen::Index distinct = 0;
  for (Eigen::Index i = 0, e = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const Complex x = edge_feature(i, j);
      if (x == Complex(0.0, 0.0)) {
        slot[static_cast<std::size_t>(e++)] = -1;
        continue;
      }
      edge_in(distinct, 0) = static_cast<Scalar>(x.real());
      edge_in(distinct, 1) = static_cast<Scalar>(x.imag());
      slot[static_cast<std::size_t>(e++)] = distinct++;
    }
  }
  edge_in.row(distinct).setZero();
  for (auto& k : slot) {
    if (k < 0) k = distinct;
  }
  const Matrix e0 = mlp(edge_in.topRows(distinct + 1), edge_encoder_);

  Matrix h = h0;
  Matrix z, msg, ce;
  for (const Folded& f : convs_) {
    const Eigen::Index width = h.cols();
    const Eigen::Index hidden = f.w1.cols();
    Matrix hi = h * f.w1.topRows(width);
    hi.rowwise() += f.b1;
    const Matrix hj = h * f.w1.middleRows(width, width);
    ce.noalias() = e0 * f.w1.bottomRows(f.w1.rows() - 2 * width);
    z.resize(edges, hidden);
    for (Eigen::Index i = 0, e = 0; i < n; ++i) {
      const ConstRow a(hi.row(i).data(), hidden);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        Row(z.row(e).data(), hidden) =
            (a + ConstRow(hj.row(j).data(), hidden) + ConstRow(ce.row(slot[static_cast<std::size_t>(e)]).data(), hidden))
                .max(Scalar(0));
        ++e;
      }
    }
    msg.noalias() = z * f.w2;
    const Eigen::Index width_out = msg.cols();
    const ConstRow bias(f.b2.data(), width_out);
    Matrix next(n, 2 * width_out);
    const Scalar inv_deg = Scalar(1) / static_cast<Scalar>(deg);
    for (Eigen::Index i = 0; i < n; ++i) {
      Row mx(next.row(i).data(), width_out);
      Row mean(next.row(i).data() + width_out, width_out);
      mx.setZero();
      mean.setZero();
      for (Eigen::Index r = i * deg; r < (i + 1) * deg; ++r) {
        const auto v = (ConstRow(msg.row(r).data(), width_out) + bias).max(Scalar(0));
        mx = mx.max(v);
        mean += v;
      }
      mean *= inv_deg;
    }
    h = std::move(next);
  }

  const Eigen::Index nv = deg;
  Matrix final(nv, h.cols() + h0.cols());
  final << h.topRows(nv), h0.topRows(nv);
  Matrix raw = final * decoder_w_;
  raw.rowwise() += decoder_b_;
  ComplexVector v(nv);
  for (Eigen::Index i = 0; i < nv; ++i) v(i) = Complex(static_cast<double>(raw(i, 0)), static_cast<double>(raw(i, 1)));
  const double p = v.squaredNorm();
  if (p > power) v *= std::sqrt(power / (p + projection_eps_));
  return v;
}

template <typename Scalar>
ComplexVector GnnInference<Scalar>::solve(const ProblemGraph& graph) const {
  const Eigen::Index n = graph.n_nodes();
  const Eigen::Index deg = n - 1;
  if (graph.n_edges() != n * deg || graph.node_features.cols() != 2) {
    throw ShapeMismatch("GnnInference: graph must be fully connected");
  }
  for (Eigen::Index i = 0, e = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j, e += (j - 1 != i)) {
      if (j != i && (graph.edge_dst[static_cast<std::size_t>(e)] != i || graph.edge_src[static_cast<std::size_t>(e)] != j)) {
        throw ShapeMismatch("GnnInference: edges must be ordered by (destination, source)");
      }
    }
  }
  const Matrix nodes = graph.node_features.cast<Scalar>();
  return run(
      nodes,
      [&graph, deg](Eigen::Index i, Eigen::Index j) {
        const Eigen::Index e = i * deg + (j < i ? j : j - 1);
        return Complex(graph.edge_features(e, 0), graph.edge_features(e, 1));
      },
      graph.power);
}

template <typename Scalar>
ComplexVector GnnInference<Scalar>::solve(const QuadraticSubproblem& sub) const {
  const Eigen::Index n = sub.n_var() + 1;
  if (sub.d_aug.rows() != n || sub.d_aug.cols() != n || !(sub.scale > 0.0)) {
    throw ShapeMismatch("GnnInference: malformed subproblem");
  }
  const double inv = 1.0 / sub.scale;
  Matrix nodes(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    nodes(i, 0) = static_cast<Scalar>(sub.d_aug(i, i).real() / sub.scale);
    nodes(i, 1) = static_cast<Scalar>(sub.d_aug(i, i).imag() / sub.scale);
  }
  return run(
      nodes, [&sub, inv](Eigen::Index i, Eigen::Index j) { return sub.d_aug(i, j) * inv; }, sub.power);
}

template class GnnInference<double>;
template class GnnInference<float>;

template <typename Scalar>
void gnnfp_cell_update(const NetworkInstance& inst, int cell, const AuxState& aux, const GnnInference<Scalar>& net,
                       BeamformerSet& next) {
  const QuadraticSubproblem sub = build_subproblem(inst, aux.y, aux.gamma, cell);
  const ComplexVector v = net.solve(sub);
  for (int q = 0; q < inst.users(); ++q) next(cell, q) = v.segment(static_cast<Eigen::Index>(q) * inst.tx(), inst.tx());
}

template <typename Scalar>
std::pair<BeamformerSet, SolverTrace> gnnfp_solve(const NetworkInstance& inst, const BeamformerSet& v0, int iterations,
                                            const GnnInference<Scalar>& net) {
  return run_fp_iterations(inst, v0, iterations,
                           [&inst, &net](int cell, const AuxState& aux, const BeamformerSet&, BeamformerSet& next) {
                             gnnfp_cell_update(inst, cell, aux, net, next);
                           });
}

template void gnnfp_cell_update(const NetworkInstance&, int, const AuxState&, const GnnInference<double>&,
                                BeamformerSet&);
template void gnnfp_cell_update(const NetworkInstance&, int, const AuxState&, const GnnInference<float>&,
                                BeamformerSet&);
template std::pair<BeamformerSet, SolverTrace> gnnfp_solve(const NetworkInstance&, const BeamformerSet&, int,
                                                     const GnnInference<double>&);
template std::pair<BeamformerSet, SolverTrace> gnnfp_solve(const NetworkInstance&, const BeamformerSet&, int,
                                                     const GnnInference<float>&);

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kModelMagic = "GNFPMODEL";

void write_array(std::ostream& out, const Array& a) {
  for (Eigen::Index k = 0; k < a.size(); ++k) io::write_pod(out, a.data()[k]);
}

void read_array(std::istream& in, Array& a) {
  for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = io::read_pod<double>(in);
}

}  // namespace

void save_model(const GnnModel& model, const std::filesystem::path& path) {
  io::write_atomically(path, [&](std::ostream& out) {
    io::write_magic(out, kModelMagic);
    io::write_pod<std::uint32_t>(out, kModelVersion);
    const GnnDims& d = model.dims;
    for (int v : {d.input, d.encoder_hidden, d.latent, d.conv_hidden, d.conv_out, d.layers, d.output}) {
      io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    }
    io::write_pod(out, model.mlp_dropout);
    io::write_pod(out, model.decoder_dropout);
    io::write_pod(out, model.projection_eps);
    io::write_pod<std::uint64_t>(out, model.parameter_count());
    for (const Array* a : model.parameters()) write_array(out, *a);
    for (const ad::BatchNormState* s : model.batchnorm_states()) {
      io::write_pod(out, s->momentum);
      io::write_pod(out, s->eps);
      write_array(out, s->running_mean);
      write_array(out, s->running_var);
    }
  });
}

GnnModel load_model(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  io::expect_magic(in, kModelMagic);
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kModelVersion) throw VersionMismatch("model version " + std::to_string(version));
  GnnDims d;
  for (int* v : {&d.input, &d.encoder_hidden, &d.latent, &d.conv_hidden, &d.conv_out, &d.layers, &d.output}) {
    *v = static_cast<int>(io::read_pod<std::uint32_t>(in));
    if (*v < 1 || *v > 4096) throw CorruptFile("implausible model dimension");
  }
  if (d.output != 2 || d.layers > 64) throw CorruptFile("implausible model dimension");
  GnnModel m = init_model(d, 0);
  m.mlp_dropout = io::read_pod<double>(in);
  m.decoder_dropout = io::read_pod<double>(in);
  m.projection_eps = io::read_pod<double>(in);
  const auto count = io::read_pod<std::uint64_t>(in);
  if (count != m.parameter_count()) throw CorruptFile("parameter count does not match dimensions");
  for (Array* a : m.parameters()) read_array(in, *a);
  for (ad::BatchNormState* s : m.batchnorm_states()) {
    s->momentum = io::read_pod<double>(in);
    s->eps = io::read_pod<double>(in);
    read_array(in, s->running_mean);
    read_array(in, s->running_var);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptFile("trailing bytes after model");
  return m;
}

}  // namespace gnnfp
