#include "prism/probe/probe.hpp"

#include <cmath>
#include <numeric>
#include <set>

#include "prism/core/error.hpp"
#include "prism/core/rng.hpp"

namespace prism::probe {

const char* to_string(ProbeTask t) { return t == ProbeTask::classification ? "classification" : "localization"; }

void ProbeConfig::validate() const {
  std::vector<std::string> bad;
  if (!(lr > 0.0) || !std::isfinite(lr)) bad.push_back("probe.lr: must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) bad.push_back("probe.beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) bad.push_back("probe.beta2: must lie in [0, 1)");
  if (!(adam_eps > 0.0)) bad.push_back("probe.adam_eps: must be > 0");
  if (epochs == 0) bad.push_back("probe.epochs: must be >= 1");
  if (batch_size == 0) bad.push_back("probe.batch_size: must be >= 1");
  if (!(smooth_l1_beta > 0.0)) bad.push_back("probe.smooth_l1_beta: must be > 0");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

nlohmann::json ProbeConfig::to_json() const {
  return {{"lr", lr},         {"beta1", beta1}, {"beta2", beta2}, {"adam_eps", adam_eps}, {"epochs", epochs},
          {"batch_size", batch_size}, {"seed", seed}, {"smooth_l1_beta", smooth_l1_beta}};
}

ProbeConfig ProbeConfig::from_json(const nlohmann::json& j) {
  ProbeConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.smooth_l1_beta = j.value("smooth_l1_beta", c.smooth_l1_beta);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("probe", std::string("bad field type: ") + e.what());
  }
  return c;
}

Matrix ProbeModel::forward(const Matrix& x) const {
  if (x.rows() != w.cols()) {
    throw DataError("probe expects " + std::to_string(w.cols()) + "-dim features, got " + std::to_string(x.rows()));
  }
  Matrix y = w * x;
  y.colwise() += b;
  return y;
}

double smooth_l1(double u, double beta) {
  const double a = std::abs(u);
  return a < beta ? 0.5 * u * u / beta : a - 0.5 * beta;
}

double class_loss(const ProbeModel& probe, const Matrix& x, const std::vector<std::size_t>& labels,
                  ProbeGradients* grads) {
  const Matrix logits = probe.forward(x);
  const Eigen::Index n = x.cols();
  Matrix g(logits.rows(), n);
  double loss = 0.0;
  for (Eigen::Index c = 0; c < n; ++c) {
    const double mx = logits.col(c).maxCoeff();
    const Vector e = (logits.col(c).array() - mx).exp();
    const double z = e.sum();
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(c)]);
    loss += std::log(z) - (logits(y, c) - mx);
    g.col(c) = e / z;
    g(y, c) -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grads != nullptr) {
    g *= inv_n;
    grads->w = g * x.transpose();
    grads->b = g.rowwise().sum();
  }
  return loss * inv_n;
}

double loc_loss(const ProbeModel& probe, const Matrix& x, const Matrix& boxes, double beta, ProbeGradients* grads) {
  const Matrix u = probe.forward(x) - boxes;
  const double inv_n = 1.0 / static_cast<double>(x.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) loss += smooth_l1(u(i), beta);
  if (grads != nullptr) {
    const Matrix g = u.unaryExpr([beta](double v) { return std::clamp(v / beta, -1.0, 1.0); }) * inv_n;
    grads->w = g * x.transpose();
    grads->b = g.rowwise().sum();
  }
  return loss * inv_n;
}

void validate_box(const std::array<double, 4>& box, const std::string& where) {
  for (double v : box) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError(where + ": box component outside [0, 1]");
  }
  if (!(box[2] > 0.0 && box[3] > 0.0)) throw DataError(where + ": box width and height must be > 0");
}

namespace {

struct Adam {
  Matrix mw, vw;
  Vector mb, vb;
  std::uint64_t t = 0;
};

template <typename LossFn>
void fit(ProbeModel& probe, Eigen::Index n, const ProbeConfig& cfg, LossFn&& batch_loss) {
  Adam adam{Matrix::Zero(probe.w.rows(), probe.w.cols()), Matrix::Zero(probe.w.rows(), probe.w.cols()),
            Vector::Zero(probe.b.size()), Vector::Zero(probe.b.size())};
  Rng rng(cfg.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  ProbeGradients g;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
      const double loss = batch_loss(idx, g);
      if (!std::isfinite(loss) || !g.w.allFinite()) {
        throw NumericalError("probe loss became non-finite at epoch " + std::to_string(epoch) + " (layer " +
                             std::to_string(probe.layer_index) + ")");
      }
      ++adam.t;
      const double b1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.t));
      const double b2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.t));
      adam.mw = cfg.beta1 * adam.mw + (1 - cfg.beta1) * g.w;
      adam.vw = cfg.beta2 * adam.vw + (1 - cfg.beta2) * g.w.cwiseProduct(g.w);
      adam.mb = cfg.beta1 * adam.mb + (1 - cfg.beta1) * g.b;
      adam.vb = cfg.beta2 * adam.vb + (1 - cfg.beta2) * g.b.cwiseProduct(g.b);
      probe.w.array() -= cfg.lr * (adam.mw.array() / b1) / ((adam.vw.array() / b2).sqrt() + cfg.adam_eps);
      probe.b.array() -= cfg.lr * (adam.mb.array() / b1) / ((adam.vb.array() / b2).sqrt() + cfg.adam_eps);
    }
  }
}

void check_features(const Matrix& x) {
  if (x.cols() == 0) throw DataError("probe training needs at least one sample");
  if (!x.allFinite()) throw DataError("probe features contain non-finite values");
}

}  // namespace

ProbeModel train_class_probe(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t num_classes,
                             const ProbeConfig& config, std::uint16_t layer_index) {
  config.validate();
  check_features(x);
  if (labels.size() != static_cast<std::size_t>(x.cols())) throw DataError("one label per feature column required");
  std::set<std::size_t> present;
  for (auto y : labels) {
    if (y >= num_classes) throw DataError("label " + std::to_string(y) + " outside the label space");
    present.insert(y);
  }
  if (present.size() < 2) throw DataError("degenerate task: classification probe needs at least two classes present");

  ProbeModel probe{ProbeTask::classification, Matrix::Zero(static_cast<Eigen::Index>(num_classes), x.rows()),
                   Vector::Zero(static_cast<Eigen::Index>(num_classes)), layer_index};
  fit(probe, x.cols(), config, [&](const std::vector<Eigen::Index>& idx, ProbeGradients& g) {
    Matrix xb(x.rows(), static_cast<Eigen::Index>(idx.size()));
    std::vector<std::size_t> yb(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      xb.col(static_cast<Eigen::Index>(i)) = x.col(idx[i]);
      yb[i] = labels[static_cast<std::size_t>(idx[i])];
    }
    return class_loss(probe, xb, yb, &g);
  });
  return probe;
}

ProbeModel train_loc_probe(const Matrix& x, const Matrix& boxes, const ProbeConfig& config, std::uint16_t layer_index) {
  config.validate();
  check_features(x);
  if (boxes.rows() != 4 || boxes.cols() != x.cols()) throw DataError("localization targets must be 4 x N");
  for (Eigen::Index c = 0; c < boxes.cols(); ++c) {
    validate_box({boxes(0, c), boxes(1, c), boxes(2, c), boxes(3, c)}, "target " + std::to_string(c));
  }
  ProbeModel probe{ProbeTask::localization, Matrix::Zero(4, x.rows()), Vector::Zero(4), layer_index};
  fit(probe, x.cols(), config, [&](const std::vector<Eigen::Index>& idx, ProbeGradients& g) {
    Matrix xb(x.rows(), static_cast<Eigen::Index>(idx.size())), yb(4, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      xb.col(static_cast<Eigen::Index>(i)) = x.col(idx[i]);
      yb.col(static_cast<Eigen::Index>(i)) = boxes.col(idx[i]);
    }
    return loc_loss(probe, xb, yb, config.smooth_l1_beta, &g);
  });
  return probe;
}

}  // namespace prism::probe
