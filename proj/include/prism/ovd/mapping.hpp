#pragma once

#include <optional>
#include <string>
#include <vector>

#include "prism/ovd/box.hpp"
#include "prism/ovd/config.hpp"
#include "prism/ovd/embedding.hpp"
#include "prism/ovd/label_space.hpp"

namespace prism::ovd {

/// One open-vocabulary output before mapping.
struct RawDetection {
  std::string sample_id;
  Box box;
  std::string text;
  /// Missing confidence (unparsable model output) is treated as 1.0.
  std::optional<double> confidence;
  std::optional<double> objectness;
};

enum class Provenance {
  kept,
  filtered_conf,
  filtered_negative,
  filtered_part,
  filtered_unembeddable,
  truncated_maxpred,
};

const char* to_string(Provenance p);

struct MappedDetection {
  std::string sample_id;
  Box box;
  /// Class index into the label space; set for kept and truncated entries.
  std::optional<std::size_t> label;
  double score = 0.0;
  Provenance provenance = Provenance::kept;
  /// Index of the originating RawDetection.
  std::size_t source_index = 0;
  /// Prompt that won the argmax and its similarity, when computed.
  std::optional<std::size_t> prompt_index;
  double similarity = 0.0;
  bool confidence_defaulted = false;
};

/// Throws DataError when a detection violates its invariants.
void validate_detection(const RawDetection& d);

/// Maps every detection, in input order, onto the label space. Filtered
/// detections stay in the output with their provenance. With use_topk each
/// surviving detection expands into up to k_map adjacent candidates.
std::vector<MappedDetection> map_labels(const std::vector<RawDetection>& detections, const LabelSpace& space,
                                        const EvalConfig& config, const EmbeddingProvider& provider);

}  // namespace prism::ovd
