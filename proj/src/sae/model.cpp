#include "prism/sae/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prism/core/error.hpp"
#include "prism/core/rng.hpp"

namespace prism::sae {

Vector NormStats::apply(const Vector& x) const { return (x - mean) / scale; }

Matrix NormStats::apply(const Matrix& x) const { return (x.colwise() - mean) / scale; }

Vector NormStats::invert(const Vector& x) const { return x * scale + mean; }

NormStats compute_norm_stats(const Matrix& samples) {
  if (samples.cols() == 0) throw DataError("cannot compute normalization stats of an empty dataset");
  NormStats s;
  s.mean = samples.rowwise().mean();
  double total = 0.0;
  for (Eigen::Index c = 0; c < samples.cols(); ++c) total += (samples.col(c) - s.mean).norm();
  s.scale = total / static_cast<double>(samples.cols()) / std::sqrt(static_cast<double>(samples.rows()));
  if (!(s.scale > 0.0) || !std::isfinite(s.scale)) {
    throw NumericalError("normalization scale is zero: every sample equals the dataset mean");
  }
  return s;
}

SaeModel SaeModel::initialize(const SaeConfig& config) {
  config.validate();
  const auto d_in = static_cast<Eigen::Index>(config.input_dim);
  const auto d_out = static_cast<Eigen::Index>(config.target_dim());
  const auto m = static_cast<Eigen::Index>(config.latent_dim());
  Rng rng(config.seed);
  SaeModel model;
  model.config = config;
  model.w_dec.resize(d_out, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < d_out; ++i) model.w_dec(i, j) = rng.normal();
  }
  model.normalize_decoder();
  if (d_in == d_out) {
    model.w_enc = model.w_dec.transpose();
  } else {
    model.w_enc.resize(m, d_in);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < d_in; ++j) model.w_enc(i, j) = rng.normal();
      model.w_enc.row(i).normalize();
    }
  }
  model.b_enc = Vector::Zero(m);
  model.b_dec = Vector::Zero(d_out);
  model.last_fired.assign(static_cast<std::size_t>(m), 0);
  return model;
}

void SaeModel::normalize_decoder() {
  for (Eigen::Index j = 0; j < w_dec.cols(); ++j) {
    const double n = w_dec.col(j).norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw NumericalError("decoder column " + std::to_string(j) + " has norm " + std::to_string(n));
    }
    w_dec.col(j) /= n;
  }
}

OptimizerState OptimizerState::zeros_like(const SaeModel& model) {
  OptimizerState s;
  s.m_w_enc = s.v_w_enc = Matrix::Zero(model.w_enc.rows(), model.w_enc.cols());
  s.m_w_dec = s.v_w_dec = Matrix::Zero(model.w_dec.rows(), model.w_dec.cols());
  s.m_b_enc = s.v_b_enc = Vector::Zero(model.b_enc.size());
  s.m_b_dec = s.v_b_dec = Vector::Zero(model.b_dec.size());
  return s;
}

namespace {

void check_input(const SaeModel& model, const Matrix& x) {
  if (x.rows() != model.w_enc.cols()) {
    throw DataError("input dimension " + std::to_string(x.rows()) + " does not match model input dimension " +
                    std::to_string(model.w_enc.cols()));
  }
}

/// Indices of the `count` largest values of a column restricted to
/// `candidates`, ties to the lowest index.
std::vector<Eigen::Index> top_indices(const Eigen::Ref<const Vector>& col, std::vector<Eigen::Index> candidates,
                                      std::size_t count) {
  count = std::min(count, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count), candidates.end(),
                    [&](Eigen::Index a, Eigen::Index b) { return col(a) > col(b) || (col(a) == col(b) && a < b); });
  candidates.resize(count);
  return candidates;
}

}  // namespace

Matrix encode(const SaeModel& model, const Matrix& x) {
  check_input(model, x);
  Matrix z = model.config.uses_pre_bias() ? Matrix(model.w_enc * (x.colwise() - model.b_dec)) : Matrix(model.w_enc * x);
  z.colwise() += model.b_enc;
  return z;
}

Vector encode(const SaeModel& model, const Vector& x) { return encode(model, Matrix(x)).col(0); }

ActiveMask topk_mask(const Matrix& z, std::size_t k) {
  ActiveMask mask = ActiveMask::Constant(z.rows(), z.cols(), false);
  std::vector<Eigen::Index> all(static_cast<std::size_t>(z.rows()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    for (auto i : top_indices(z.col(c), all, k)) mask(i, c) = true;
  }
  return mask;
}

ActiveMask batch_topk_mask(const Matrix& z, std::size_t k) {
  const auto m = z.rows();
  const std::size_t total = static_cast<std::size_t>(z.size());
  const std::size_t keep = std::min(total, k * static_cast<std::size_t>(z.cols()));
  std::vector<std::size_t> flat(total);
  std::iota(flat.begin(), flat.end(), std::size_t{0});
  // flat = sample * m + latent, so lower flat index means earlier sample.
  auto value = [&](std::size_t f) { return z(static_cast<Eigen::Index>(f) % m, static_cast<Eigen::Index>(f) / m); };
  std::nth_element(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(keep), flat.end(), [&](std::size_t a, std::size_t b) {
    return value(a) > value(b) || (value(a) == value(b) && a < b);
  });
  ActiveMask mask = ActiveMask::Constant(z.rows(), z.cols(), false);
  for (std::size_t i = 0; i < keep; ++i) {
    mask(static_cast<Eigen::Index>(flat[i]) % m, static_cast<Eigen::Index>(flat[i]) / m) = true;
  }
  return mask;
}

ActiveMask relu_mask(const Matrix& z) { return z.array() > 0.0; }

ActiveMask sparsify_mask(const Matrix& z, const SaeConfig& config) {
  switch (config.variant) {
    case Variant::relu:
      return relu_mask(z);
    case Variant::batch_topk:
      return batch_topk_mask(z, config.k);
    case Variant::topk:
    case Variant::matryoshka:
      return topk_mask(z, config.k);
  }
  throw ConfigError("variant", "unhandled variant");
}

Matrix apply_mask(const Matrix& z, const ActiveMask& mask) { return mask.select(z, Matrix::Zero(z.rows(), z.cols())); }

Matrix sparse_code(const SaeModel& model, const Matrix& x) {
  const Matrix z = encode(model, x);
  const auto& cfg = model.config;
  return apply_mask(z, cfg.variant == Variant::relu ? relu_mask(z) : topk_mask(z, cfg.k));
}

Matrix decode(const SaeModel& model, const Matrix& z_hat) {
  if (z_hat.rows() != model.w_dec.cols()) {
    throw DataError("code dimension " + std::to_string(z_hat.rows()) + " does not match latent dimension " +
                    std::to_string(model.w_dec.cols()));
  }
  Matrix x = model.w_dec * z_hat;
  x.colwise() += model.b_dec;
  return x;
}

Vector decode(const SaeModel& model, const Vector& z_hat) { return decode(model, Matrix(z_hat)).col(0); }

double fraction_variance_unexplained(const Matrix& target, const Matrix& reconstruction) {
  const double err = (target - reconstruction).squaredNorm();
  const double var = (target.colwise() - target.rowwise().mean()).squaredNorm();
  if (var == 0.0) return err == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return err / var;
}

LossBreakdown compute_loss(const SaeModel& model, const Matrix& x, const Matrix& target, Gradients* grads) {
  const auto& cfg = model.config;
  check_input(model, x);
  if (target.rows() != model.w_dec.rows() || target.cols() != x.cols()) {
    throw DataError("target batch shape does not match the model output dimension or input batch");
  }
  const Eigen::Index batch = x.cols();
  if (batch == 0) throw DataError("empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch);
  const Eigen::Index m = model.w_enc.rows();

  const Matrix p = cfg.uses_pre_bias() ? Matrix(x.colwise() - model.b_dec) : x;
  Matrix z = model.w_enc * p;
  z.colwise() += model.b_enc;
  const ActiveMask active = sparsify_mask(z, cfg);
  const Matrix z_hat = apply_mask(z, active);
  Matrix x_hat = model.w_dec * z_hat;
  x_hat.colwise() += model.b_dec;
  const Matrix r = target - x_hat;

  LossBreakdown out;
  out.sq_error = r.squaredNorm();
  out.sq_total = (target.colwise() - target.rowwise().mean()).squaredNorm();
  out.recon = out.sq_error * inv_b;
  out.l0 = static_cast<double>(active.count()) * inv_b;
  out.fired.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) out.fired[static_cast<std::size_t>(i)] = active.row(i).any();
  if (cfg.variant == Variant::relu) out.l1 = cfg.l1_coeff * z_hat.cwiseAbs().sum() * inv_b;

  Matrix g = -2.0 * inv_b * r;

  // Auxiliary reconstruction of the residual from dead latents.
  std::vector<Eigen::Index> dead;
  const auto threshold = cfg.effective_dead_threshold();
  for (Eigen::Index i = 0; i < m; ++i) {
    if (model.last_fired[static_cast<std::size_t>(i)] >= threshold) dead.push_back(i);
  }
  out.aux_k_used = std::min(cfg.effective_aux_k(), dead.size());
  Matrix aux_code;
  Matrix g_aux;
  if (out.aux_k_used > 0 && cfg.aux_coeff > 0.0) {
    aux_code = Matrix::Zero(m, batch);
    for (Eigen::Index c = 0; c < batch; ++c) {
      for (auto i : top_indices(z.col(c), dead, out.aux_k_used)) aux_code(i, c) = std::max(0.0, z(i, c));
    }
    const Matrix q = r - model.w_dec * aux_code;
    out.aux = q.squaredNorm() * inv_b;
    g_aux = -2.0 * cfg.aux_coeff * inv_b * q;
    g += g_aux;
  }

  // Matryoshka: every proper prefix reconstructs the target on its own.
  struct Prefix {
    ActiveMask mask;
    Matrix code;
    Matrix g;
  };
  std::vector<Prefix> prefixes;
  if (cfg.variant == Variant::matryoshka) {
    for (std::size_t j = 0; j + 1 < cfg.matryoshka_prefixes.size(); ++j) {
      const auto len = static_cast<Eigen::Index>(cfg.matryoshka_prefixes[j]);
      Prefix pf;
      pf.mask = ActiveMask::Constant(m, batch, false);
      pf.mask.topRows(len) = topk_mask(z.topRows(len), cfg.k);
      pf.code = apply_mask(z, pf.mask);
      Matrix rec = model.w_dec * pf.code;
      rec.colwise() += model.b_dec;
      const Matrix rj = target - rec;
      out.prefix += rj.squaredNorm() * inv_b;
      pf.g = -2.0 * inv_b * rj;
      prefixes.push_back(std::move(pf));
    }
  }

  out.total = out.recon + cfg.aux_coeff * out.aux + out.l1 + out.prefix;
  if (grads == nullptr) return out;

  grads->w_dec = g * z_hat.transpose();
  grads->b_dec = g.rowwise().sum();
  Matrix dz = active.select(model.w_dec.transpose() * g, Matrix::Zero(m, batch));
  if (g_aux.size() > 0) {
    grads->w_dec.noalias() += g_aux * aux_code.transpose();
    dz += (aux_code.array() > 0.0).select(model.w_dec.transpose() * g_aux, Matrix::Zero(m, batch));
  }
  for (const auto& pf : prefixes) {
    grads->w_dec.noalias() += pf.g * pf.code.transpose();
    grads->b_dec += pf.g.rowwise().sum();
    dz += pf.mask.select(model.w_dec.transpose() * pf.g, Matrix::Zero(m, batch));
  }
  if (cfg.variant == Variant::relu && cfg.l1_coeff > 0.0) {
    dz += active.select(Matrix::Constant(m, batch, cfg.l1_coeff * inv_b), Matrix::Zero(m, batch));
  }
  grads->w_enc = dz * p.transpose();
  grads->b_enc = dz.rowwise().sum();
  if (cfg.uses_pre_bias()) grads->b_dec -= model.w_enc.transpose() * grads->b_enc;
  return out;
}

}  // namespace prism::sae
