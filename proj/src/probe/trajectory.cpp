#include "prism/probe/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

#include "prism/core/error.hpp"
#include "prism/core/io.hpp"
#include "prism/core/rng.hpp"

namespace prism::probe {

using nlohmann::json;

namespace {

std::string key(const std::string& sample_id, std::uint32_t token) { return sample_id + '\x1f' + std::to_string(token); }

std::array<double, 4> read_box(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw DataError(where + ": box must be [cx, cy, w, h]");
  std::array<double, 4> b{};
  for (std::size_t i = 0; i < 4; ++i) b[i] = j[i].get<double>();
  validate_box(b, where);
  return b;
}

}  // namespace

ScoreMode parse_score_mode(const std::string& s) {
  for (auto m : {ScoreMode::classification, ScoreMode::localization, ScoreMode::joint}) {
    if (s == to_string(m)) return m;
  }
  throw DataError("unknown task '" + s + "'");
}

TargetSet parse_targets(const json& doc) {
  if (!doc.is_object()) throw DataError("targets file must be a JSON object");
  TargetSet t;
  try {
    t.source = parse_target_source(doc.value("source", "ground_truth"));
    t.classes = doc.at("classes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("targets file: ") + e.what());
  }
  std::unordered_map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < t.classes.size(); ++i) {
    if (!by_name.emplace(t.classes[i], i).second) throw DataError("targets file: duplicate class '" + t.classes[i] + "'");
  }
  std::set<std::string> seen;
  const auto& arr = doc.contains("targets") ? doc["targets"] : json::array();
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& e = arr[i];
    const std::string where = "target " + std::to_string(i);
    try {
      Reference r;
      r.sample_id = e.at("sample_id").get<std::string>();
      r.token_index = e.at("token_index").get<std::uint32_t>();
      const auto& c = e.at("class");
      if (c.is_string()) {
        const auto it = by_name.find(c.get<std::string>());
        if (it == by_name.end()) throw DataError(where + ": unknown class '" + c.get<std::string>() + "'");
        r.class_index = it->second;
      } else {
        r.class_index = c.get<std::size_t>();
        if (r.class_index >= t.classes.size()) throw DataError(where + ": class index out of range");
      }
      r.box = read_box(e.at("box"), where);
      if (!seen.insert(key(r.sample_id, r.token_index)).second) {
        throw DataError(where + ": duplicate target for (" + r.sample_id + ", " + std::to_string(r.token_index) + ")");
      }
      t.references.push_back(std::move(r));
    } catch (const json::exception& ex) {
      throw DataError(where + ": " + ex.what());
    }
  }
  return t;
}

TargetSet load_targets(const std::filesystem::path& path) { return parse_targets(read_json(path)); }

json to_json(const TargetSet& t) {
  json arr = json::array();
  for (const auto& r : t.references) {
    arr.push_back({{"sample_id", r.sample_id},
                   {"token_index", r.token_index},
                   {"class", t.classes.at(r.class_index)},
                   {"box", r.box}});
  }
  return {{"source", to_string(t.source)}, {"classes", t.classes}, {"targets", arr}};
}

TargetSet targets_from_predictions(const store::FeatureTable& table, const store::AccessPointFilter& prediction_point,
                                   const std::vector<std::string>& classes, double min_conf) {
  TargetSet t;
  t.source = TargetSource::model_prediction;
  t.classes = classes;
  for (const auto& rec : table.read_all(prediction_point)) {
    if (rec.vector.size() != classes.size()) {
      throw DataError("prediction record has " + std::to_string(rec.vector.size()) + " logits for " +
                      std::to_string(classes.size()) + " classes");
    }
    if (!rec.aux.box) continue;
    if (rec.aux.objectness && *rec.aux.objectness < min_conf) continue;
    Reference r;
    r.sample_id = rec.sample_id;
    r.token_index = rec.token_index;
    r.class_index = static_cast<std::size_t>(std::max_element(rec.vector.begin(), rec.vector.end()) - rec.vector.begin());
    for (std::size_t i = 0; i < 4; ++i) r.box[i] = (*rec.aux.box)[i];
    validate_box(r.box, "prediction (" + r.sample_id + ", " + std::to_string(r.token_index) + ")");
    t.references.push_back(std::move(r));
  }
  if (t.references.empty()) throw DataError("no model predictions survive the objectness filter");
  return t;
}

std::vector<store::AccessPointSpec> probe_layers(const store::FeatureTableSchema& schema,
                                                 const std::optional<std::string>& model_id,
                                                 const std::optional<std::string>& point_prefix) {
  std::vector<store::AccessPointSpec> out;
  for (const auto& ap : schema.access_points) {
    if (ap.spec.artifact_kind != store::ArtifactKind::activation) continue;
    if (model_id && ap.spec.model_id != *model_id) continue;
    if (point_prefix && ap.spec.point_name.rfind(*point_prefix, 0) != 0) continue;
    out.push_back(ap.spec);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.layer_index < b.layer_index; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].layer_index == out[i - 1].layer_index) {
      throw ConfigError("point_prefix", "points '" + out[i - 1].point_name + "' and '" + out[i].point_name +
                                            "' share layer " + std::to_string(out[i].layer_index) + "; narrow the selection");
    }
  }
  if (out.empty()) throw ConfigError("point_prefix", "no activation access points match");
  return out;
}

LayerData gather_layer(const store::FeatureTable& table, const store::AccessPointSpec& point, const TargetSet& targets) {
  std::unordered_map<std::string, const Reference*> index;
  for (const auto& r : targets.references) index.emplace(key(r.sample_id, r.token_index), &r);
  LayerData out;
  out.point = point;
  std::vector<std::vector<double>> cols;
  for (auto& rec : table.read_all({point.model_id, point.point_name})) {
    const auto it = index.find(key(rec.sample_id, rec.token_index));
    if (it == index.end()) continue;
    out.refs.push_back(*it->second);
    cols.push_back(std::move(rec.vector));
  }
  if (cols.empty()) throw DataError("no records of '" + point.point_name + "' have a probe target");
  out.x.resize(static_cast<Eigen::Index>(cols.front().size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    out.x.col(static_cast<Eigen::Index>(c)) = Eigen::Map<const Vector>(cols[c].data(), static_cast<Eigen::Index>(cols[c].size()));
  }
  return out;
}

bool in_holdout(const std::string& sample_id, std::uint64_t seed, double fraction) {
  Rng rng(fnv1a64(sample_id) ^ (seed * 0x9e3779b97f4a7c15ULL));
  return rng.uniform() < fraction;
}

SweepResult run_probe_sweep(const store::FeatureTable& table, const TargetSet& targets, const SweepOptions& options) {
  options.probe.validate();
  if (!(options.holdout_fraction > 0.0 && options.holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction", "must lie in (0, 1)");
  }
  if (targets.references.empty()) throw DataError("probe targets are empty");
  const auto layers = probe_layers(table.schema(), options.model_id, options.point_prefix);
  const std::size_t num_classes = targets.classes.size();

  SweepResult result;
  for (const auto& point : layers) {
    const auto data = gather_layer(table, point, targets);
    std::vector<Eigen::Index> train_cols, test_cols;
    for (std::size_t i = 0; i < data.refs.size(); ++i) {
      (in_holdout(data.refs[i].sample_id, options.probe.seed, options.holdout_fraction) ? test_cols : train_cols)
          .push_back(static_cast<Eigen::Index>(i));
    }
    if (train_cols.empty() || test_cols.empty()) throw DataError("holdout split left one side empty at '" + point.point_name + "'");
    Matrix xtr(data.x.rows(), static_cast<Eigen::Index>(train_cols.size()));
    Matrix xte(data.x.rows(), static_cast<Eigen::Index>(test_cols.size()));
    Matrix boxes(4, xtr.cols());
    std::vector<std::size_t> labels;
    std::vector<Reference> test_refs;
    for (std::size_t i = 0; i < train_cols.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      xtr.col(c) = data.x.col(train_cols[i]);
      const auto& r = data.refs[static_cast<std::size_t>(train_cols[i])];
      labels.push_back(r.class_index);
      for (int k = 0; k < 4; ++k) boxes(k, c) = r.box[static_cast<std::size_t>(k)];
    }
    for (std::size_t i = 0; i < test_cols.size(); ++i) {
      xte.col(static_cast<Eigen::Index>(i)) = data.x.col(test_cols[i]);
      test_refs.push_back(data.refs[static_cast<std::size_t>(test_cols[i])]);
    }
    result.train_examples = train_cols.size();
    result.holdout_examples = test_cols.size();

    auto cls = train_class_probe(xtr, labels, num_classes, options.probe, point.layer_index);
    auto loc = train_loc_probe(xtr, boxes, options.probe, point.layer_index);
    for (auto mode : {ScoreMode::classification, ScoreMode::localization, ScoreMode::joint}) {
      result.trajectory.push_back(
          {point.layer_index, point.point_name, mode, score_probe(mode, &cls, &loc, xte, test_refs, num_classes)});
    }
    result.probes.push_back(std::move(cls));
    result.probes.push_back(std::move(loc));
  }
  if (layers.size() >= 3) {
    for (auto mode : {ScoreMode::classification, ScoreMode::localization, ScoreMode::joint}) {
      const auto [acc, idx] = task_curve(result.trajectory, mode);
      result.transitions[mode] = detect_transition(acc, options.delta, idx);
    }
  }
  return result;
}

json trajectory_to_json(const std::vector<TrajectoryEntry>& trajectory) {
  json arr = json::array();
  for (const auto& e : trajectory) {
    json j = {{"layer_index", e.layer_index}, {"task", to_string(e.task)}, {"ap50", e.ap50}};
    if (!e.point_name.empty()) j["point_name"] = e.point_name;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<TrajectoryEntry> trajectory_from_json(const json& doc) {
  const json& arr = doc.is_object() && doc.contains("trajectory") ? doc["trajectory"] : doc;
  if (!arr.is_array()) throw DataError("trajectory must be a JSON array of {layer_index, task, ap50}");
  std::vector<TrajectoryEntry> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    try {
      TrajectoryEntry e;
      e.layer_index = arr[i].at("layer_index").get<std::uint16_t>();
      e.task = parse_score_mode(arr[i].value("task", "classification"));
      e.ap50 = arr[i].at("ap50").get<double>();
      e.point_name = arr[i].value("point_name", "");
      if (!(e.ap50 >= 0.0 && e.ap50 <= 1.0)) throw DataError("ap50 outside [0, 1]");
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw DataError("trajectory entry " + std::to_string(i) + ": " + ex.what());
    }
  }
  return out;
}

std::pair<std::vector<double>, std::vector<std::uint16_t>> task_curve(const std::vector<TrajectoryEntry>& trajectory,
                                                                      ScoreMode task) {
  std::vector<const TrajectoryEntry*> sel;
  for (const auto& e : trajectory) {
    if (e.task == task) sel.push_back(&e);
  }
  std::stable_sort(sel.begin(), sel.end(), [](auto* a, auto* b) { return a->layer_index < b->layer_index; });
  std::pair<std::vector<double>, std::vector<std::uint16_t>> out;
  for (std::size_t i = 0; i < sel.size(); ++i) {
    if (i > 0 && sel[i]->layer_index == sel[i - 1]->layer_index) {
      throw DataError(std::string("duplicate layer ") + std::to_string(sel[i]->layer_index) + " for task " + to_string(task));
    }
    out.first.push_back(sel[i]->ap50);
    out.second.push_back(sel[i]->layer_index);
  }
  return out;
}

json probe_to_json(const ProbeModel& p) {
  json w = json::array();
  for (Eigen::Index i = 0; i < p.w.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(p.w.cols()));
    for (Eigen::Index j = 0; j < p.w.cols(); ++j) row[static_cast<std::size_t>(j)] = p.w(i, j);
    w.push_back(row);
  }
  return {{"task", to_string(p.task)},
          {"layer_index", p.layer_index},
          {"w", w},
          {"b", std::vector<double>(p.b.data(), p.b.data() + p.b.size())}};
}

ProbeModel probe_from_json(const json& j) {
  try {
    ProbeModel p;
    const auto task = j.at("task").get<std::string>();
    if (task == "classification") {
      p.task = ProbeTask::classification;
    } else if (task == "localization") {
      p.task = ProbeTask::localization;
    } else {
      throw DataError("unknown probe task '" + task + "'");
    }
    p.layer_index = j.at("layer_index").get<std::uint16_t>();
    const auto rows = j.at("w").get<std::vector<std::vector<double>>>();
    const auto b = j.at("b").get<std::vector<double>>();
    if (rows.size() != b.size() || rows.empty()) throw DataError("probe weight and bias shapes disagree");
    p.w.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows[0].size()) throw DataError("ragged probe weight matrix");
      for (std::size_t k = 0; k < rows[i].size(); ++k) p.w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    p.b = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    if (p.task == ProbeTask::localization && p.w.rows() != 4) throw DataError("localization probe must have 4 outputs");
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("probe JSON: ") + e.what());
  }
}

std::string trajectory_svg(const std::vector<TrajectoryEntry>& trajectory,
                           const std::map<ScoreMode, TransitionReport>& transitions) {
  constexpr double W = 640, H = 400, L = 60, R = 140, T = 30, B = 50;
  std::uint16_t lo = 0, hi = 1;
  if (!trajectory.empty()) {
    lo = hi = trajectory.front().layer_index;
    for (const auto& e : trajectory) {
      lo = std::min(lo, e.layer_index);
      hi = std::max(hi, e.layer_index);
    }
    if (hi == lo) hi = static_cast<std::uint16_t>(lo + 1);
  }
  auto px = [&](double layer) { return L + (layer - lo) / (hi - lo) * (W - L - R); };
  auto py = [&](double acc) { return T + (1.0 - acc) * (H - T - B); };
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    os << "<text x=\"" << L - 8 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  for (int l = lo; l <= hi; ++l) {
    os << "<text x=\"" << px(l) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << l << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">layer</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (T + H - B) / 2
     << ")\" text-anchor=\"middle\">AP@IoU50</text>\n";
  const std::map<ScoreMode, const char*> colors = {
      {ScoreMode::classification, "#1f77b4"}, {ScoreMode::localization, "#d62728"}, {ScoreMode::joint, "#2ca02c"}};
  int legend = 0;
  for (const auto& [mode, color] : colors) {
    const auto [acc, layers] = task_curve(trajectory, mode);
    if (acc.empty()) continue;
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < acc.size(); ++i) os << (i ? " " : "") << px(layers[i]) << "," << py(acc[i]);
    os << "\"/>\n";
    for (std::size_t i = 0; i < acc.size(); ++i) {
      os << "<circle cx=\"" << px(layers[i]) << "\" cy=\"" << py(acc[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const auto tr = transitions.find(mode);
    if (tr != transitions.end() && tr->second.l_star) {
      os << "<line x1=\"" << px(*tr->second.l_star) << "\" y1=\"" << T << "\" x2=\"" << px(*tr->second.l_star) << "\" y2=\""
         << H - B << "\" stroke=\"" << color << "\" stroke-dasharray=\"4 3\"/>\n";
    }
    const double ly = T + 16 * legend++;
    os << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\">" << to_string(mode) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace prism::probe
