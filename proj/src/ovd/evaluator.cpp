#include "prism/ovd/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace prism::ovd {

const std::vector<double>& recall_grid() {
  static const std::vector<double> grid = [] {
    // Same spacing as numpy.linspace(0, 1, 101).
    std::vector<double> g(101);
    for (int i = 0; i < 101; ++i) g[i] = i * 0.01;
    g[100] = 1.0;
    return g;
  }();
  return grid;
}

namespace {

struct ClassImage {
  std::vector<std::size_t> dets;
  std::vector<std::size_t> gts;
};

/// 101-point interpolated precision of a ranked TP/FP sequence.
double interpolated_ap(const std::vector<char>& tp, std::size_t num_gt) {
  const std::size_t n = tp.size();
  std::vector<double> recall(n), precision(n);
  std::size_t ctp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ctp += tp[i];
    recall[i] = static_cast<double>(ctp) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(ctp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (double r : recall_grid()) {
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / static_cast<double>(recall_grid().size());
}

}  // namespace

EvalResult evaluate(const std::vector<ScoredDetection>& detections, const std::vector<GroundTruth>& ground_truth,
                    std::size_t num_classes, const EvalConfig& config) {
  config.validate();
  if (ground_truth.empty()) throw DataError("evaluation needs a non-empty reference set");
  for (const auto& g : ground_truth) {
    if (g.class_index >= num_classes) {
      throw DataError("ground truth on '" + g.sample_id + "' has label " + std::to_string(g.class_index) +
                      " outside the label space");
    }
    if (!g.box.valid()) throw DataError("ground truth on '" + g.sample_id + "' has an invalid box");
  }
  for (const auto& d : detections) {
    if (d.class_index >= num_classes) throw DataError("detection on '" + d.sample_id + "' has a label outside the label space");
    if (!std::isfinite(d.score)) throw DataError("detection on '" + d.sample_id + "' has a non-finite score");
  }

  // class -> image (ordered by sample_id) -> members. The ordering makes the
  // result independent of input order up to exact score ties within an image.
  std::vector<std::map<std::string, ClassImage>> cells(num_classes);
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    cells[ground_truth[i].class_index][ground_truth[i].sample_id].gts.push_back(i);
  }
  for (std::size_t i = 0; i < detections.size(); ++i) {
    cells[detections[i].class_index][detections[i].sample_id].dets.push_back(i);
  }

  const auto& thresholds = config.iou_thresholds;
  const std::size_t nt = thresholds.size();
  std::optional<std::size_t> t50;
  for (std::size_t t = 0; t < nt; ++t) {
    if (std::abs(thresholds[t] - 0.5) < 1e-9) t50 = t;
  }

  EvalResult result;
  result.per_class.resize(num_classes);
  result.num_detections = detections.size();
  result.num_gt = ground_truth.size();
  double ap_sum = 0.0, ap50_sum = 0.0, ar_sum = 0.0;
  std::size_t valid = 0;

  for (std::size_t k = 0; k < num_classes; ++k) {
    std::size_t num_gt = 0;
    for (const auto& [image, cell] : cells[k]) num_gt += cell.gts.size();
    if (num_gt == 0) continue;

    // Ranked detections of this class: (score, tp flag per threshold).
    std::vector<std::pair<double, std::vector<char>>> ranked;
    for (auto& [image, cell] : cells[k]) {
      auto dets = cell.dets;
      std::stable_sort(dets.begin(), dets.end(),
                       [&](std::size_t a, std::size_t b) { return detections[a].score > detections[b].score; });
      if (dets.size() > config.max_dets) dets.resize(config.max_dets);
      std::vector<std::vector<char>> flags(dets.size(), std::vector<char>(nt, 0));
      for (std::size_t t = 0; t < nt; ++t) {
        std::vector<char> used(cell.gts.size(), 0);
        for (std::size_t j = 0; j < dets.size(); ++j) {
          double best_iou = thresholds[t];
          std::optional<std::size_t> match;
          for (std::size_t g = 0; g < cell.gts.size(); ++g) {
            if (used[g]) continue;
            const double v = iou(detections[dets[j]].box, ground_truth[cell.gts[g]].box);
            if (v >= best_iou && (!match || v > best_iou)) {
              best_iou = v;
              match = g;
            }
          }
          if (match) {
            used[*match] = 1;
            flags[j][t] = 1;
          }
        }
      }
      for (std::size_t j = 0; j < dets.size(); ++j) ranked.emplace_back(detections[dets[j]].score, std::move(flags[j]));
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    ClassMetrics cm;
    cm.num_gt = num_gt;
    cm.ap50 = std::numeric_limits<double>::quiet_NaN();
    std::vector<char> tp(ranked.size());
    for (std::size_t t = 0; t < nt; ++t) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < ranked.size(); ++i) {
        tp[i] = ranked[i].second[t];
        hits += tp[i];
      }
      const double ap = interpolated_ap(tp, num_gt);
      cm.ap += ap;
      cm.ar += static_cast<double>(hits) / static_cast<double>(num_gt);
      if (t50 && t == *t50) cm.ap50 = ap;
    }
    cm.ap /= static_cast<double>(nt);
    cm.ar /= static_cast<double>(nt);
    ap_sum += cm.ap;
    ar_sum += cm.ar;
    ap50_sum += cm.ap50;
    ++valid;
    result.per_class[k] = cm;
  }

  result.ap = ap_sum / static_cast<double>(valid);
  result.ar = ar_sum / static_cast<double>(valid);
  result.ap50 = t50 ? ap50_sum / static_cast<double>(valid) : std::numeric_limits<double>::quiet_NaN();
  return result;
}

EvalResult evaluate(const std::vector<MappedDetection>& mapped, const std::vector<GroundTruth>& ground_truth,
                    std::size_t num_classes, const EvalConfig& config) {
  std::vector<ScoredDetection> dets;
  for (const auto& m : mapped) {
    if (m.provenance != Provenance::kept || !m.label) continue;
    dets.push_back({m.sample_id, m.box, *m.label, m.score});
  }
  return evaluate(dets, ground_truth, num_classes, config);
}

}  // namespace prism::ovd
