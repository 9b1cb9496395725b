#pragma once

#include <optional>
#include <string>
#include <vector>

#include "prism/ovd/box.hpp"
#include "prism/ovd/config.hpp"
#include "prism/ovd/mapping.hpp"

namespace prism::ovd {

struct GroundTruth {
  std::string sample_id;
  Box box;
  std::size_t class_index = 0;
};

/// A labeled, scored detection ready for matching.
struct ScoredDetection {
  std::string sample_id;
  Box box;
  std::size_t class_index = 0;
  double score = 0.0;
};

struct ClassMetrics {
  std::size_t num_gt = 0;
  double ap = 0.0;
  /// NaN when 0.5 is not among the IoU thresholds.
  double ap50 = 0.0;
  double ar = 0.0;
};

struct EvalResult {
  double ap = 0.0;
  double ap50 = 0.0;
  double ar = 0.0;
  /// Indexed by class; classes without ground truth are absent.
  std::vector<std::optional<ClassMetrics>> per_class;
  std::size_t num_detections = 0;
  std::size_t num_gt = 0;
};

/// The 101 recall levels used for interpolation.
const std::vector<double>& recall_grid();

/// COCO-scheme evaluation. Per class and image only the max_dets highest
/// scoring detections count. Classes without ground truth are excluded from
/// every average. Throws DataError on an empty reference set or a label
/// outside [0, num_classes).
EvalResult evaluate(const std::vector<ScoredDetection>& detections, const std::vector<GroundTruth>& ground_truth,
                    std::size_t num_classes, const EvalConfig& config);

/// Evaluates only the kept entries of a mapping result.
EvalResult evaluate(const std::vector<MappedDetection>& mapped, const std::vector<GroundTruth>& ground_truth,
                    std::size_t num_classes, const EvalConfig& config);

}  // namespace prism::ovd
