#pragma once

#include <array>
#include <string>
#include <vector>

#include "prism/ovd/evaluator.hpp"
#include "prism/probe/probe.hpp"

namespace prism::probe {

/// What a token slot should predict: ground truth or the model's own output.
enum class TargetSource { ground_truth, model_prediction };

const char* to_string(TargetSource s);
TargetSource parse_target_source(const std::string& s);

/// One reference object bound to a token slot; box is normalized (cx, cy, w, h).
struct Reference {
  std::string sample_id;
  std::uint32_t token_index = 0;
  std::size_t class_index = 0;
  std::array<double, 4> box{};
};

enum class ScoreMode { classification, localization, joint };

const char* to_string(ScoreMode m);

struct ProbeDetections {
  std::vector<ovd::ScoredDetection> detections;
  std::vector<ovd::GroundTruth> ground_truth;
};

/// Turns probe outputs into detections, one per reference token:
///   classification: reference box, predicted class, softmax confidence;
///   localization: predicted box, reference class, score 1;
///   joint: predicted class and confidence with the predicted box.
/// Columns of x align with refs.
ProbeDetections probe_detections(ScoreMode mode, const ProbeModel* cls, const ProbeModel* loc, const Matrix& x,
                                 const std::vector<Reference>& refs);

/// AP at IoU 0.5 of the probe detections. Throws DataError on an empty
/// reference set.
double score_probe(ScoreMode mode, const ProbeModel* cls, const ProbeModel* loc, const Matrix& x,
                   const std::vector<Reference>& refs, std::size_t num_classes);

}  // namespace prism::probe
