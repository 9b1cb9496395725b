#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/ovd/evaluator.hpp"
#include "prism/ovd/label_space.hpp"
#include "prism/ovd/mapping.hpp"

namespace prism::ovd {

struct ImageInfo {
  std::string sample_id;
  /// image_id exactly as it appeared in the source file.
  nlohmann::json raw_id;
  std::string file_name;
  double width = 0;
  double height = 0;
};

/// Ground truth in COCO layout. Classes are ordered by category id.
struct CocoDataset {
  std::vector<std::string> classes;
  std::vector<long long> category_ids;
  std::vector<ImageInfo> images;
  std::vector<GroundTruth> ground_truth;

  std::optional<std::size_t> class_of_category(long long category_id) const;
  const ImageInfo* find_image(const std::string& sample_id) const;
};

/// Image ids may be integers or strings; both become sample_id strings.
std::string image_key(const nlohmann::json& id);

CocoDataset parse_coco(const nlohmann::json& doc);
CocoDataset read_coco(const std::filesystem::path& path);

/// Open-vocabulary detections: a JSON array of {image_id, bbox [x,y,w,h],
/// text, score?, objectness?}.
std::vector<RawDetection> parse_raw_detections(const nlohmann::json& doc);
std::vector<RawDetection> read_raw_detections(const std::filesystem::path& path);

/// Closed-set detections: {image_id, bbox, category_id, score}.
std::vector<ScoredDetection> parse_scored_detections(const nlohmann::json& doc, const CocoDataset& dataset);

nlohmann::json raw_detections_to_json(const std::vector<RawDetection>& detections);

/// Kept detections as a COCO results array.
nlohmann::json mapped_to_coco_results(const std::vector<MappedDetection>& mapped, const CocoDataset& dataset);

/// {AP, AP50, AR, per_class: {name: {AP, AP50, AR, num_gt}}}; NaN becomes null.
nlohmann::json metrics_to_json(const EvalResult& result, const std::vector<std::string>& class_names);

/// One row per filtered detection and per detection whose confidence was
/// defaulted.
std::string provenance_csv(const std::vector<MappedDetection>& mapped, const std::vector<RawDetection>& raw,
                           const LabelSpace& space);

}  // namespace prism::ovd
