#include "prism/probe/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "prism/core/error.hpp"

namespace prism::probe {

const char* to_string(TargetSource s) { return s == TargetSource::ground_truth ? "ground_truth" : "model_prediction"; }

TargetSource parse_target_source(const std::string& s) {
  if (s == "ground_truth") return TargetSource::ground_truth;
  if (s == "model_prediction") return TargetSource::model_prediction;
  throw ConfigError("target_source", "expected ground_truth or model_prediction, got '" + s + "'");
}

const char* to_string(ScoreMode m) {
  switch (m) {
    case ScoreMode::classification:
      return "classification";
    case ScoreMode::localization:
      return "localization";
    case ScoreMode::joint:
      return "joint";
  }
  return "unknown";
}

namespace {

ovd::Box to_box(double cx, double cy, double w, double h) {
  // Degenerate predicted extents still form a (tiny) valid box.
  constexpr double kMinExtent = 1e-9;
  return ovd::Box::from_cxcywh({cx, cy, std::max(w, kMinExtent), std::max(h, kMinExtent)});
}

}  // namespace

ProbeDetections probe_detections(ScoreMode mode, const ProbeModel* cls, const ProbeModel* loc, const Matrix& x,
                                 const std::vector<Reference>& refs) {
  if (refs.empty()) throw DataError("probe scoring needs a non-empty reference set");
  if (static_cast<std::size_t>(x.cols()) != refs.size()) throw DataError("one feature column per reference required");
  const bool need_cls = mode != ScoreMode::localization;
  const bool need_loc = mode != ScoreMode::classification;
  if ((need_cls && (cls == nullptr || cls->task != ProbeTask::classification)) ||
      (need_loc && (loc == nullptr || loc->task != ProbeTask::localization))) {
    throw ConfigError("probe", std::string("scoring mode ") + to_string(mode) + " is missing a probe of the right task");
  }

  Matrix logits, boxes;
  if (need_cls) logits = cls->forward(x);
  if (need_loc) boxes = loc->forward(x);

  ProbeDetections out;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& r = refs[i];
    const auto c = static_cast<Eigen::Index>(i);
    out.ground_truth.push_back({r.sample_id, to_box(r.box[0], r.box[1], r.box[2], r.box[3]), r.class_index});
    ovd::ScoredDetection d;
    d.sample_id = r.sample_id;
    if (need_cls) {
      Eigen::Index best = 0;
      const double mx = logits.col(c).maxCoeff(&best);
      d.class_index = static_cast<std::size_t>(best);
      d.score = 1.0 / (logits.col(c).array() - mx).exp().sum();
    } else {
      d.class_index = r.class_index;
      d.score = 1.0;
    }
    d.box = need_loc ? to_box(boxes(0, c), boxes(1, c), boxes(2, c), boxes(3, c)) : out.ground_truth.back().box;
    out.detections.push_back(std::move(d));
  }
  return out;
}

double score_probe(ScoreMode mode, const ProbeModel* cls, const ProbeModel* loc, const Matrix& x,
                   const std::vector<Reference>& refs, std::size_t num_classes) {
  const auto pd = probe_detections(mode, cls, loc, x, refs);
  ovd::EvalConfig cfg;
  cfg.iou_thresholds = {0.5};
  return ovd::evaluate(pd.detections, pd.ground_truth, num_classes, cfg).ap50;
}

}  // namespace prism::probe
