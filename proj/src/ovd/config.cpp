#include "prism/ovd/config.hpp"

#include <cmath>

#include "prism/core/error.hpp"

namespace prism::ovd {

std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

void EvalConfig::validate() const {
  std::vector<std::string> bad;
  if (encoder_id.empty()) bad.push_back("encoder: must not be empty");
  if (max_pred == 0) bad.push_back("max_pred: must be >= 1");
  if (!(min_conf >= 0.0 && min_conf <= 1.0)) bad.push_back("min_conf: must lie in [0, 1]");
  if (use_topk && k_map == 0) bad.push_back("k_map: must be >= 1");
  if (!(topk_temperature > 0.0) || !std::isfinite(topk_temperature)) bad.push_back("topk_temperature: must be > 0");
  if (part_template.find("{}") == std::string::npos) bad.push_back("part_template: must contain {}");
  if (iou_thresholds.empty()) bad.push_back("iou_thresholds: must not be empty");
  for (double t : iou_thresholds) {
    if (!(t > 0.0 && t <= 1.0)) {
      bad.push_back("iou_thresholds: values must lie in (0, 1]");
      break;
    }
  }
  if (max_dets == 0) bad.push_back("max_dets: must be >= 1");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

nlohmann::json EvalConfig::to_json() const {
  return {{"encoder", encoder_id},
          {"max_pred", max_pred},
          {"min_conf", min_conf},
          {"use_objectness", use_objectness},
          {"use_topk", use_topk},
          {"k_map", k_map},
          {"topk_temperature", topk_temperature},
          {"use_negatives", use_negatives},
          {"use_parts", use_parts},
          {"negatives", negatives},
          {"part_template", part_template},
          {"iou_thresholds", iou_thresholds},
          {"max_dets", max_dets}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("eval", "configuration must be a JSON object");
  EvalConfig c;
  std::vector<std::string> bad;
  auto read = [&](const char* key, auto& slot) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(slot);
    } catch (const nlohmann::json::exception&) {
      bad.push_back(std::string(key) + ": wrong type");
    }
  };
  read("encoder", c.encoder_id);
  read("max_pred", c.max_pred);
  read("min_conf", c.min_conf);
  read("use_objectness", c.use_objectness);
  read("use_topk", c.use_topk);
  read("k_map", c.k_map);
  read("topk_temperature", c.topk_temperature);
  read("use_negatives", c.use_negatives);
  read("use_parts", c.use_parts);
  read("negatives", c.negatives);
  read("part_template", c.part_template);
  read("iou_thresholds", c.iou_thresholds);
  read("max_dets", c.max_dets);
  if (!bad.empty()) throw ConfigError(std::move(bad));
  return c;
}

}  // namespace prism::ovd
