#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/probe/probe.hpp"
#include "prism/probe/scoring.hpp"
#include "prism/probe/transition.hpp"
#include "prism/store/table.hpp"

namespace prism::probe {

/// Per-token probe targets for one label space.
struct TargetSet {
  TargetSource source = TargetSource::ground_truth;
  std::vector<std::string> classes;
  std::vector<Reference> references;
};

/// {"source", "classes": [...], "targets": [{sample_id, token_index,
/// class (name or index), box: [cx, cy, w, h]}]}
TargetSet parse_targets(const nlohmann::json& doc);
TargetSet load_targets(const std::filesystem::path& path);
nlohmann::json to_json(const TargetSet& targets);

/// Approximation-mode targets: the model's own predictions at a prediction
/// access point. The class is the argmax of the record vector (one logit
/// per class), the box comes from aux. Records whose objectness is below
/// min_conf are dropped; records without a box are skipped.
TargetSet targets_from_predictions(const store::FeatureTable& table, const store::AccessPointFilter& prediction_point,
                                   const std::vector<std::string>& classes, double min_conf);

/// Features of one access point paired with targets by (sample_id, token).
struct LayerData {
  store::AccessPointSpec point;
  Matrix x;
  std::vector<Reference> refs;
};

/// Activation access points selected by model and point-name prefix,
/// ordered by layer index. Throws ConfigError if two share a layer index.
std::vector<store::AccessPointSpec> probe_layers(const store::FeatureTableSchema& schema,
                                                 const std::optional<std::string>& model_id,
                                                 const std::optional<std::string>& point_prefix);

LayerData gather_layer(const store::FeatureTable& table, const store::AccessPointSpec& point, const TargetSet& targets);

/// Deterministic sample-level split; all tokens of a sample land together.
bool in_holdout(const std::string& sample_id, std::uint64_t seed, double fraction);

struct SweepOptions {
  ProbeConfig probe;
  double holdout_fraction = 0.2;
  std::optional<std::string> model_id;
  std::optional<std::string> point_prefix;
  double delta = kDefaultDipThreshold;
};

struct TrajectoryEntry {
  std::uint16_t layer_index = 0;
  std::string point_name;
  ScoreMode task = ScoreMode::classification;
  double ap50 = 0.0;
};

struct SweepResult {
  std::vector<TrajectoryEntry> trajectory;
  std::vector<ProbeModel> probes;
  /// Keyed by task; only present when at least 3 layers were probed.
  std::map<ScoreMode, TransitionReport> transitions;
  std::size_t train_examples = 0;
  std::size_t holdout_examples = 0;
};

/// Trains classification and localization probes on every selected layer
/// and scores them (per task and jointly) on the holdout split.
SweepResult run_probe_sweep(const store::FeatureTable& table, const TargetSet& targets, const SweepOptions& options);

nlohmann::json trajectory_to_json(const std::vector<TrajectoryEntry>& trajectory);
std::vector<TrajectoryEntry> trajectory_from_json(const nlohmann::json& doc);

/// Accuracies of one task ordered by layer.
std::pair<std::vector<double>, std::vector<std::uint16_t>> task_curve(const std::vector<TrajectoryEntry>& trajectory,
                                                                      ScoreMode task);

nlohmann::json probe_to_json(const ProbeModel& probe);
ProbeModel probe_from_json(const nlohmann::json& j);

/// Accuracy-vs-layer line chart, one polyline per task.
std::string trajectory_svg(const std::vector<TrajectoryEntry>& trajectory,
                           const std::map<ScoreMode, TransitionReport>& transitions = {});

ScoreMode parse_score_mode(const std::string& s);

}  // namespace prism::probe
