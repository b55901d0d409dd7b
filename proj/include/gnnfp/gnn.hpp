#pragma once

// Structure-aware GNN for the augmented quadratic subproblem.
//
// Graph: one node per entry of the stacked beamformer plus a constant node
// (last). Node features are the normalized diagonal of D_aug, edge (i, j)
// carries D_aug(i, j) / scale, and every node listens to every other node.
//
// Network: node/edge encoders (2 -> 16 -> 8), K EdgeConv layers whose
// messages are MLP([h_i | h_j | e_ij]) pooled by max and mean, a skip
// connection to the encoder output, an affine decoder to (Re, Im) on the
// variable nodes, and a differentiable rescale onto the power ball.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "gnnfp/autodiff.hpp"
#include "gnnfp/channel.hpp"
#include "gnnfp/fp_solvers.hpp"
#include "gnnfp/reform.hpp"

namespace gnnfp {

struct ProblemGraph {
  Eigen::Index n_var = 0;
  double power = 0.0;
  ad::Array node_features;  // (n_var + 1) x 2
  ad::Array edge_features;  // n_nodes * (n_nodes - 1) x 2
  /// Edges are grouped by destination; edge k delivers src[k] -> dst[k].
  std::vector<Eigen::Index> edge_dst;
  std::vector<Eigen::Index> edge_src;

  Eigen::Index n_nodes() const { return n_var + 1; }
  Eigen::Index n_edges() const { return static_cast<Eigen::Index>(edge_dst.size()); }
};

/// Features from d_aug / scale. The last node is the constant node.
ProblemGraph build_graph(const ComplexMatrix& d_aug, double scale, double power);
ProblemGraph build_graph(const QuadraticSubproblem& sub);

struct GnnDims {
  int input = 2;
  int encoder_hidden = 16;
  int latent = 8;
  int conv_hidden = 32;
  int conv_out = 16;
  int layers = 3;
  int output = 2;

  int pooled() const { return 2 * conv_out; }
  int conv_input(int layer) const { return layer == 0 ? 3 * latent : 2 * pooled() + latent; }
  int final_width() const { return pooled() + latent; }
  bool operator==(const GnnDims&) const = default;
};

struct Linear {
  ad::Array weight;  // in x out
  ad::Array bias;    // 1 x out
};

struct BatchNorm {
  ad::Array gamma;  // 1 x C
  ad::Array beta;   // 1 x C
  ad::BatchNormState stats;
};

/// affine -> batchnorm -> relu -> dropout, twice.
struct Mlp {
  Linear fc1;
  BatchNorm bn1;
  Linear fc2;
  BatchNorm bn2;
};

struct GnnModel {
  GnnDims dims;
  Mlp node_encoder;
  Mlp edge_encoder;
  std::vector<Mlp> convs;
  Linear decoder;
  double mlp_dropout = 0.1;
  double decoder_dropout = 0.2;
  double projection_eps = 1e-12;

  /// Learnable arrays in checkpoint order: node encoder, edge encoder,
  /// convs, decoder; inside an Mlp: fc1.w, fc1.b, bn1.gamma, bn1.beta,
  /// fc2.w, fc2.b, bn2.gamma, bn2.beta.
  std::vector<ad::Array*> parameters();
  std::vector<const ad::Array*> parameters() const;
  /// Batchnorm states in the same module order.
  std::vector<ad::BatchNormState*> batchnorm_states();
  std::vector<const ad::BatchNormState*> batchnorm_states() const;
  std::size_t parameter_count() const;
};

/// Linear layers draw U(-1/sqrt(in), 1/sqrt(in)); batchnorm starts at the
/// identity.
GnnModel init_model(const GnnDims& dims, std::uint64_t seed);

/// Learnable-parameter count per block, in module order.
struct ParameterBreakdown {
  std::size_t node_encoder = 0, node_encoder_bn = 0;
  std::size_t edge_encoder = 0, edge_encoder_bn = 0;
  std::vector<std::size_t> conv, conv_bn;
  std::size_t decoder = 0;
};
ParameterBreakdown parameter_breakdown(const GnnModel& model);

// ---------------------------------------------------------------------------
// Taped forward over a batch of graphs.

/// Several graphs laid out back to back with global node/edge indices.
struct GraphBatch {
  ad::Array node_features;
  ad::Array edge_features;
  std::vector<Eigen::Index> edge_dst, edge_src;
  /// Incoming-edge segment of every node (size nodes + 1).
  std::vector<Eigen::Index> node_edge_offsets;
  /// Rows of the variable nodes, graph by graph.
  std::vector<Eigen::Index> var_rows;
  /// Variable-row segment of every graph (size graphs + 1).
  std::vector<Eigen::Index> var_offsets;
  /// Graph owning each variable row.
  std::vector<Eigen::Index> var_graph;
  std::vector<double> power;

  std::size_t graphs() const { return power.size(); }
};

GraphBatch make_batch(std::span<const ProblemGraph* const> graphs);

/// Tape leaves for every learnable array, in parameters() order.
struct ParameterTensors {
  std::vector<ad::Tensor> leaves;
};
ParameterTensors bind_parameters(ad::Tape& tape, const GnnModel& model, bool requires_grad = true);

struct ForwardOptions {
  ad::Mode mode = ad::Mode::kEval;
  ad::DropoutKey dropout{};
};

/// Returns projected (Re, Im) rows of every variable node in batch order.
/// Training mode updates the model's batchnorm running statistics. `batch`
/// must outlive any backward pass over the tape.
ad::Tensor forward(GnnModel& model, ad::Tape& tape, const ParameterTensors& params, const GraphBatch& batch,
                   const ForwardOptions& options);

/// Mean over the batch of [v;1]^H D_aug [v;1] on the raw (unscaled) D_aug,
/// evaluated through the real embedding. Non-empty `weights` multiply the
/// per-graph terms before averaging.
ad::Tensor quadratic_loss(ad::Tape& tape, const ad::Tensor& v, const GraphBatch& batch,
                          std::span<const QuadraticSubproblem* const> subs, std::span<const double> weights = {});

/// Converts forward() rows of one graph to a complex vector.
ComplexVector rows_to_complex(const ad::Array& rows, Eigen::Index begin, Eigen::Index count);

// ---------------------------------------------------------------------------
// Inference without a tape (batchnorm folded into the affine maps).

template <typename Scalar>
class GnnInference {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using Row = Eigen::Map<Eigen::Array<Scalar, 1, Eigen::Dynamic>>;
  using ConstRow = Eigen::Map<const Eigen::Array<Scalar, 1, Eigen::Dynamic>>;

  explicit GnnInference(const GnnModel& model);

  ComplexVector solve(const ProblemGraph& graph) const;
  /// Reads the features straight from D_aug; same result as via build_graph.
  ComplexVector solve(const QuadraticSubproblem& sub) const;
  const GnnDims& dims() const { return dims_; }

 private:
  struct Folded {
    Matrix w1;
    RowVector b1;
    Matrix w2;
    RowVector b2;
  };
  static Folded fold(const Mlp& mlp);
  template <typename EdgeFeature>
  ComplexVector run(const Matrix& node_features, const EdgeFeature& edge_feature, double power) const;
  static void relu_inplace(Matrix& m) { m = m.cwiseMax(Scalar(0)); }

  GnnDims dims_;
  Folded node_encoder_;
  Folded edge_encoder_;
  std::vector<Folded> convs_;
  Matrix decoder_w_;
  RowVector decoder_b_;
  double projection_eps_;
};

extern template class GnnInference<double>;
extern template class GnnInference<float>;

/// FP iterations with the GNN standing in for the exact v-update.
template <typename Scalar>
void gnnfp_cell_update(const NetworkInstance& inst, int cell, const AuxState& aux, const GnnInference<Scalar>& net,
                       BeamformerSet& next);
template <typename Scalar>
std::pair<BeamformerSet, SolverTrace> gnnfp_solve(const NetworkInstance& inst, const BeamformerSet& v0, int iterations,
                                            const GnnInference<Scalar>& net);

// ---------------------------------------------------------------------------
// Checkpoints ("GNFPMODEL").

inline constexpr std::uint32_t kModelVersion = 1;

void save_model(const GnnModel& model, const std::filesystem::path& path);
GnnModel load_model(const std::filesystem::path& path);

}  // namespace gnnfp
