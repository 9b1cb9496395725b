#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace prism::probe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ProbeTask { classification, localization };

const char* to_string(ProbeTask t);

struct ProbeConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  /// Smooth L1 transition point.
  double smooth_l1_beta = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static ProbeConfig from_json(const nlohmann::json& j);
};

/// Linear read-out y = W x + b from one layer's features.
struct ProbeModel {
  ProbeTask task = ProbeTask::classification;
  Matrix w;
  Vector b;
  std::uint16_t layer_index = 0;

  std::size_t output_dim() const { return static_cast<std::size_t>(w.rows()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(w.cols()); }
  /// Columns of x are samples.
  Matrix forward(const Matrix& x) const;
};

struct ProbeGradients {
  Matrix w;
  Vector b;
};

double smooth_l1(double u, double beta = 1.0);

/// Mean softmax cross-entropy. Columns of x are samples.
double class_loss(const ProbeModel& probe, const Matrix& x, const std::vector<std::size_t>& labels,
                  ProbeGradients* grads = nullptr);

/// Mean over samples of the smooth L1 loss summed over 4 box coordinates.
/// Targets are 4 x N.
double loc_loss(const ProbeModel& probe, const Matrix& x, const Matrix& boxes, double beta = 1.0,
                ProbeGradients* grads = nullptr);

/// Throws DataError when fewer than two classes are present or a label is
/// outside [0, num_classes).
ProbeModel train_class_probe(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t num_classes,
                             const ProbeConfig& config, std::uint16_t layer_index = 0);

/// Throws DataError on a box component outside [0, 1] or a non-positive
/// width or height.
ProbeModel train_loc_probe(const Matrix& x, const Matrix& boxes, const ProbeConfig& config,
                           std::uint16_t layer_index = 0);

/// Validates a normalized (cx, cy, w, h) box.
void validate_box(const std::array<double, 4>& box, const std::string& where);

}  // namespace prism::probe
