#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace prism::ovd {

std::vector<double> default_iou_thresholds();

/// Label-mapping and evaluation controls. Each boolean toggles one ablation
/// axis; all default to off.
struct EvalConfig {
  std::string encoder_id = "hashed";
  std::size_t max_pred = 900;
  double min_conf = 0.0;
  bool use_objectness = false;
  bool use_topk = false;
  std::size_t k_map = 3;
  double topk_temperature = 0.01;
  bool use_negatives = false;
  bool use_parts = false;
  std::vector<std::string> negatives = {"an object", "a thing"};
  std::string part_template = "parts of {}";
  std::vector<double> iou_thresholds = default_iou_thresholds();
  std::size_t max_dets = 100;

  /// Throws ConfigError listing every invalid field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; the encoder id is stored as "encoder".
  static EvalConfig from_json(const nlohmann::json& j);
};

}  // namespace prism::ovd
