#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "prism/sae/config.hpp"

namespace prism::sae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dataset-level affine normalization x' = (x - mean) / scale.
struct NormStats {
  Vector mean;
  double scale = 1.0;

  Vector apply(const Vector& x) const;
  /// Columns are samples.
  Matrix apply(const Matrix& x) const;
  Vector invert(const Vector& x) const;
};

/// Streaming two-pass estimate is done by the trainer; this works on an
/// in-memory matrix whose columns are samples. Throws NumericalError when
/// every sample equals the mean.
NormStats compute_norm_stats(const Matrix& samples);

/// Encoder W_e: m x d_in, decoder W_d: d_out x m. Decoder columns are the
/// dictionary atoms.
struct SaeModel {
  SaeConfig config;
  Matrix w_enc;
  Vector b_enc;
  Matrix w_dec;
  Vector b_dec;
  /// Tokens since each latent was last in the active set.
  std::vector<std::uint64_t> last_fired;
  std::optional<NormStats> input_stats;
  std::optional<NormStats> target_stats;

  /// Seeded random unit decoder columns, W_e = W_d^T when shapes allow,
  /// zero biases.
  static SaeModel initialize(const SaeConfig& config);

  std::size_t latent_dim() const { return static_cast<std::size_t>(w_enc.rows()); }
  void normalize_decoder();
};

/// Adam moments for every parameter tensor.
struct OptimizerState {
  Matrix m_w_enc, v_w_enc, m_w_dec, v_w_dec;
  Vector m_b_enc, v_b_enc, m_b_dec, v_b_dec;
  std::uint64_t step = 0;

  static OptimizerState zeros_like(const SaeModel& model);
};

struct Gradients {
  Matrix w_enc, w_dec;
  Vector b_enc, b_dec;
};

/// Which pre-activations survive sparsification, per sample column.
using ActiveMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// z = W_e (x - b_d) + b_e, columns are samples. The subtraction is skipped
/// when input and target dimensions differ.
Matrix encode(const SaeModel& model, const Matrix& x);
Vector encode(const SaeModel& model, const Vector& x);

/// Top-k of each column; ties at the k-th value go to the lowest index.
ActiveMask topk_mask(const Matrix& z, std::size_t k);
/// Top k * batch entries across the whole matrix; ties go to the lowest
/// sample, then the lowest latent.
ActiveMask batch_topk_mask(const Matrix& z, std::size_t k);
ActiveMask relu_mask(const Matrix& z);

/// Training-time sparsification for the configured variant.
ActiveMask sparsify_mask(const Matrix& z, const SaeConfig& config);
Matrix apply_mask(const Matrix& z, const ActiveMask& mask);

/// Inference sparsification: every sample is coded on its own, so
/// batch_topk behaves as per-sample top-k and results do not depend on how
/// records are batched.
Matrix sparse_code(const SaeModel& model, const Matrix& x);

/// x_hat = W_d z_hat + b_d.
Matrix decode(const SaeModel& model, const Matrix& z_hat);
Vector decode(const SaeModel& model, const Vector& z_hat);

struct LossBreakdown {
  double recon = 0.0;
  double aux = 0.0;
  double l1 = 0.0;
  /// Sum of the extra prefix reconstruction losses (matryoshka).
  double prefix = 0.0;
  double total = 0.0;
  /// Sum of squared residuals and of squared deviations from the batch mean.
  double sq_error = 0.0;
  double sq_total = 0.0;
  double l0 = 0.0;
  std::size_t aux_k_used = 0;
  std::vector<bool> fired;
};

/// Forward pass and, when grads is non-null, analytic gradients of the
/// total loss. Columns of x and target are samples. Pure: the model is
/// not modified.
LossBreakdown compute_loss(const SaeModel& model, const Matrix& x, const Matrix& target, Gradients* grads);

/// Sum ||a - b||^2 / sum ||a - mean(a)||^2 over columns.
double fraction_variance_unexplained(const Matrix& target, const Matrix& reconstruction);

}  // namespace prism::sae
