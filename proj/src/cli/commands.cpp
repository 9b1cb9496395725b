#include "commands.hpp"

#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "prism/attribution/attribution.hpp"
#include "prism/cli/cli.hpp"
#include "prism/core/error.hpp"
#include "prism/core/io.hpp"
#include "prism/ovd/coco.hpp"
#include "prism/ovd/embedding.hpp"
#include "prism/ovd/evaluator.hpp"
#include "prism/ovd/label_space.hpp"
#include "prism/ovd/mapping.hpp"
#include "prism/probe/trajectory.hpp"
#include "prism/sae/checkpoint.hpp"
#include "prism/sae/trainer.hpp"
#include "prism/store/align.hpp"
#include "prism/store/npy.hpp"
#include "prism/store/table.hpp"
#include "prism/synth/synth.hpp"

namespace prism::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const json kNullFilter = {{"model_id", nullptr}, {"point_name", nullptr}};

template <typename T>
T get(const json& section, const std::string& name, const std::string& key, Problems& p) {
  try {
    return section.at(key).get<T>();
  } catch (const json::exception&) {
    p.add(name + "." + key, "wrong type");
    return T{};
  }
}

std::optional<std::string> opt_string(const json& section, const std::string& name, const std::string& key,
                                      Problems& p) {
  const auto& v = section.at(key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_string()) {
    p.add(name + "." + key, "must be a string or null");
    return std::nullopt;
  }
  return v.get<std::string>();
}

fs::path required_path(const json& section, const std::string& name, const std::string& key, Problems& p) {
  const auto v = opt_string(section, name, key, p);
  if (!v || v->empty()) {
    p.add(name + "." + key, "required");
    return {};
  }
  return *v;
}

store::AccessPointFilter filter_from(const json& section, const std::string& name, const std::string& key,
                                     Problems& p) {
  store::AccessPointFilter f;
  const auto& j = section.at(key);
  if (j.is_null()) return f;
  if (!j.is_object()) {
    p.add(name + "." + key, "must be an object with model_id and point_name");
    return f;
  }
  const std::string where = name + "." + key;
  for (const auto& [k, v] : j.items()) {
    if (k != "model_id" && k != "point_name") p.add(where + "." + k, "unknown key");
    if (!v.is_null() && !v.is_string()) p.add(where + "." + k, "must be a string or null");
  }
  if (j.contains("model_id") && j["model_id"].is_string()) f.model_id = j["model_id"].get<std::string>();
  if (j.contains("point_name") && j["point_name"].is_string()) f.point_name = j["point_name"].get<std::string>();
  return f;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

/// Re-raises a library error with the offending file named first.
[[noreturn]] void rethrow_for_file(const std::string& file) {
  try {
    throw;
  } catch (const Error& e) {
    throw Error(e.kind(), file + ": " + e.what());
  } catch (const json::exception& e) {
    throw DataError(file + ": " + e.what());
  }
}

// ---------------------------------------------------------------- ingest

json ingest_defaults() { return {{"ingest", {{"dump", nullptr}, {"dtype", "f32"}, {"row_group_rows", 4096}}}}; }

json run_ingest(const json& cfg, const fs::path& out) {
  const auto& s = cfg["ingest"];
  Problems p;
  const auto dump = required_path(s, "ingest", "dump", p);
  store::Dtype dtype = store::Dtype::f32;
  p.check([&] {
    try {
      dtype = store::parse_dtype(get<std::string>(s, "ingest", "dtype", p));
    } catch (const DataError& e) {
      throw ConfigError("ingest.dtype", e.what());
    }
  });
  const auto rows = get<std::size_t>(s, "ingest", "row_group_rows", p);
  if (rows == 0) p.add("ingest.row_group_rows", "must be >= 1");
  p.raise();

  const auto manifest_path = dump / "manifest.json";
  json manifest;
  try {
    manifest = read_json(manifest_path);
  } catch (...) {
    rethrow_for_file(manifest_path.string());
  }
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw DataError(manifest_path.string() + ": needs a \"tensors\" array");
  }
  std::vector<store::FeatureRecord> records;
  for (const auto& entry : manifest["tensors"]) {
    std::string file = entry.value("file", std::string());
    if (file.empty()) throw DataError(manifest_path.string() + ": every tensor needs a \"file\"");
    try {
      store::LayoutDescriptor layout;
      layout.access_point = store::access_point_from_json(entry.at("access_point"));
      layout.axes = entry.at("axes").get<std::vector<std::string>>();
      layout.sample_ids = entry.value("sample_ids", std::vector<std::string>{});
      layout.pad_mask = entry.value("pad_mask", std::vector<std::uint8_t>{});
      layout.objectness = entry.value("objectness", std::vector<float>{});
      layout.boxes = entry.value("boxes", std::vector<float>{});
      layout.dtype = dtype;
      const auto raw = store::read_npy(dump / file);
      auto recs = store::align(raw, layout);
      records.insert(records.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
    } catch (...) {
      rethrow_for_file((dump / file).string());
    }
  }
  if (records.empty()) throw DataError(manifest_path.string() + ": no records");
  const auto schema = store::write_table(records, out / "table", dtype, rows);
  return {{"rows", schema.row_count}, {"table", "table"}, {"schema", store::to_json(schema)}};
}

// ---------------------------------------------------------------- synth

json synth_defaults() {
  const synth::StackConfig st;
  const synth::DictionaryConfig dc;
  const synth::DetectionConfig de;
  return {{"synth",
           {{"kind", "stack"},
            {"dtype", "f32"},
            {"stack",
             {{"layers", st.layers},
              {"bottleneck", st.bottleneck},
              {"dim", st.dim},
              {"classes", st.classes},
              {"images", st.images},
              {"tokens_per_image", st.tokens_per_image},
              {"noise", st.noise}}},
            {"dictionary",
             {{"dim", dc.dim},
              {"atoms", dc.atoms},
              {"k", dc.k},
              {"samples", dc.samples},
              {"min_coeff", dc.min_coeff},
              {"max_coeff", dc.max_coeff},
              {"noise", dc.noise}}},
            {"detections",
             {{"classes", de.classes},
              {"images", de.images},
              {"max_objects", de.max_objects},
              {"false_positive_rate", de.false_positive_rate},
              {"ungrounded_rate", de.ungrounded_rate},
              {"ungrounded_texts", de.ungrounded_texts},
              {"image_size", de.image_size}}}}}};
}

json run_synth(const json& cfg, const fs::path& out) {
  const auto& s = cfg["synth"];
  const auto seed = cfg["seed"].get<std::uint64_t>();
  Problems p;
  const auto kind = get<std::string>(s, "synth", "kind", p);
  store::Dtype dtype = store::Dtype::f32;
  try {
    dtype = store::parse_dtype(get<std::string>(s, "synth", "dtype", p));
  } catch (const DataError& e) {
    p.add("synth.dtype", e.what());
  }
  if (kind == "stack") {
    const auto& j = s["stack"];
    synth::StackConfig c;
    c.seed = seed;
    c.layers = get<std::size_t>(j, "synth.stack", "layers", p);
    c.bottleneck = get<std::size_t>(j, "synth.stack", "bottleneck", p);
    c.dim = get<std::size_t>(j, "synth.stack", "dim", p);
    c.classes = get<std::size_t>(j, "synth.stack", "classes", p);
    c.images = get<std::size_t>(j, "synth.stack", "images", p);
    c.tokens_per_image = get<std::size_t>(j, "synth.stack", "tokens_per_image", p);
    c.noise = get<double>(j, "synth.stack", "noise", p);
    p.raise();
    const auto data = synth::bottleneck_stack(c);
    const auto schema = store::write_table(data.records, out / "table", dtype);
    write_json(out / "targets.json", probe::to_json(data.targets));
    return {{"kind", kind},
            {"rows", schema.row_count},
            {"targets", data.targets.references.size()},
            {"signal", data.signal},
            {"table", "table"}};
  }
  if (kind == "dictionary") {
    const auto& j = s["dictionary"];
    synth::DictionaryConfig c;
    c.seed = seed;
    c.dim = get<std::size_t>(j, "synth.dictionary", "dim", p);
    c.atoms = get<std::size_t>(j, "synth.dictionary", "atoms", p);
    c.k = get<std::size_t>(j, "synth.dictionary", "k", p);
    c.samples = get<std::size_t>(j, "synth.dictionary", "samples", p);
    c.min_coeff = get<double>(j, "synth.dictionary", "min_coeff", p);
    c.max_coeff = get<double>(j, "synth.dictionary", "max_coeff", p);
    c.noise = get<double>(j, "synth.dictionary", "noise", p);
    p.raise();
    const auto data = synth::planted_dictionary(c);
    const auto schema = store::write_table(data.records, out / "table", dtype);
    store::RawTensor dict;
    dict.shape = {static_cast<std::size_t>(data.dictionary.rows()), static_cast<std::size_t>(data.dictionary.cols())};
    for (Eigen::Index r = 0; r < data.dictionary.rows(); ++r) {
      for (Eigen::Index col = 0; col < data.dictionary.cols(); ++col) dict.data.push_back(data.dictionary(r, col));
    }
    store::write_npy(out / "dictionary.npy", dict, store::Dtype::f64);
    return {{"kind", kind}, {"rows", schema.row_count}, {"table", "table"}, {"dictionary", "dictionary.npy"}};
  }
  if (kind == "detections") {
    const auto& j = s["detections"];
    synth::DetectionConfig c;
    c.seed = seed;
    c.classes = get<std::vector<std::string>>(j, "synth.detections", "classes", p);
    c.images = get<std::size_t>(j, "synth.detections", "images", p);
    c.max_objects = get<std::size_t>(j, "synth.detections", "max_objects", p);
    c.false_positive_rate = get<double>(j, "synth.detections", "false_positive_rate", p);
    c.ungrounded_rate = get<double>(j, "synth.detections", "ungrounded_rate", p);
    c.ungrounded_texts = get<std::vector<std::string>>(j, "synth.detections", "ungrounded_texts", p);
    c.image_size = get<double>(j, "synth.detections", "image_size", p);
    p.raise();
    const auto data = synth::planted_detections(c);
    write_json(out / "coco.json", data.coco);
    write_json(out / "detections.json", ovd::raw_detections_to_json(data.detections));
    return {{"kind", kind},
            {"images", data.dataset.images.size()},
            {"ground_truth", data.dataset.ground_truth.size()},
            {"detections", data.detections.size()}};
  }
  p.add("synth.kind", "must be one of stack, dictionary, detections");
  p.raise();
  return {};
}

// ---------------------------------------------------------------- train-sae

json sae_defaults() {
  const sae::SaeConfig c;
  return {{"sae",
           {{"table", nullptr},
            {"source", kNullFilter},
            {"target", nullptr},
            {"epochs", 1},
            {"max_steps", nullptr},
            {"input_dim", c.input_dim},
            {"output_dim", c.output_dim},
            {"expansion_factor", c.expansion_factor},
            {"variant", sae::to_string(c.variant)},
            {"k", c.k},
            {"l1_coeff", c.l1_coeff},
            {"aux_coeff", c.aux_coeff},
            {"aux_k", nullptr},
            {"dead_threshold_tokens", nullptr},
            {"matryoshka_prefixes", c.matryoshka_prefixes},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps}}}};
}

json run_train_sae(const json& cfg, const fs::path& out) {
  const auto& s = cfg["sae"];
  Problems p;
  const auto table_dir = required_path(s, "sae", "table", p);
  const auto source = filter_from(s, "sae", "source", p);
  std::optional<store::AccessPointFilter> target;
  if (!s["target"].is_null()) target = filter_from(s, "sae", "target", p);
  const auto epochs = get<std::size_t>(s, "sae", "epochs", p);
  std::optional<std::uint64_t> max_steps;
  if (!s["max_steps"].is_null()) max_steps = get<std::uint64_t>(s, "sae", "max_steps", p);
  if (epochs == 0 && !max_steps) p.add("sae.epochs", "0 means until max_steps, which is not set");
  sae::SaeConfig sc;
  p.check([&] {
    json j = s;
    for (const char* k : {"table", "source", "target", "epochs", "max_steps"}) j.erase(k);
    sc = sae::SaeConfig::from_json(j);
    if (sc.input_dim != 0) return sc.validate();
    // The dimension comes from the table later; checks that depend on it wait until then.
    auto probe = sc;
    probe.input_dim = 1;
    try {
      probe.validate();
    } catch (const ConfigError& e) {
      std::vector<std::string> kept;
      for (const auto& f : e.fields()) {
        const bool dim_dependent = f.rfind("matryoshka_prefixes", 0) == 0 || (f.rfind("k:", 0) == 0 && sc.k != 0);
        if (!dim_dependent) kept.push_back(f);
      }
      if (!kept.empty()) throw ConfigError(std::move(kept));
    }
  }, "sae");
  sc.seed = cfg["seed"].get<std::uint64_t>();
  p.raise();

  const auto table = store::FeatureTable::open(table_dir);
  const auto task = target ? sae::make_transcoder(sc, table, source, *target) : sae::make_autoencoder(sc, table, source);
  sae::TrainOptions opts;
  opts.epochs = epochs;
  opts.max_steps = max_steps;
  const auto res = sae::train_sae(table, task, opts);
  sae::save_checkpoint(out / "checkpoint.bin", res.model, res.optimizer);

  std::string log = "step,recon_loss,aux_loss,total_loss,fvu,dead_count,l0\n";
  for (const auto& r : res.reports) {
    log += std::to_string(r.step) + "," + fmt(r.recon_loss) + "," + fmt(r.aux_loss) + "," + fmt(r.total_loss) + "," +
           fmt(r.fvu) + "," + std::to_string(r.dead_count) + "," + fmt(r.l0) + "\n";
  }
  write_file_atomic(out / "train_log.csv", log);

  const auto& last = res.reports.back();
  return {{"checkpoint", "checkpoint.bin"},
          {"steps", res.optimizer.step},
          {"config", task.config.to_json()},
          {"final",
           {{"recon_loss", last.recon_loss},
            {"aux_loss", last.aux_loss},
            {"total_loss", last.total_loss},
            {"dead_count", last.dead_count},
            {"l0", last.l0}}},
          {"fvu", sae::evaluate_fvu(res.model, table, task)}};
}

// ---------------------------------------------------------------- train-probes

json probes_defaults() {
  const probe::ProbeConfig c;
  const probe::SweepOptions o;
  return {{"probes",
           {{"table", nullptr},
            {"targets", nullptr},
            {"target_source", "ground_truth"},
            {"prediction_point", kNullFilter},
            {"min_conf", 0.0},
            {"holdout_fraction", o.holdout_fraction},
            {"model_id", nullptr},
            {"point_prefix", nullptr},
            {"delta", o.delta},
            {"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"smooth_l1_beta", c.smooth_l1_beta}}}};
}

json transitions_json(const std::map<probe::ScoreMode, probe::TransitionReport>& transitions) {
  json j = json::object();
  for (const auto& [mode, report] : transitions) j[probe::to_string(mode)] = probe::to_json(report);
  return j;
}

json run_train_probes(const json& cfg, const fs::path& out) {
  const auto& s = cfg["probes"];
  Problems p;
  const auto table_dir = required_path(s, "probes", "table", p);
  const auto targets_path = opt_string(s, "probes", "targets", p);
  probe::TargetSource source = probe::TargetSource::ground_truth;
  p.check([&] {
    try {
      source = probe::parse_target_source(get<std::string>(s, "probes", "target_source", p));
    } catch (const Error& e) {
      throw ConfigError("probes.target_source", e.what());
    }
  });
  const auto prediction_point = filter_from(s, "probes", "prediction_point", p);
  const auto min_conf = get<double>(s, "probes", "min_conf", p);
  if (!(min_conf >= 0.0 && min_conf <= 1.0)) p.add("probes.min_conf", "must lie in [0, 1]");
  if (source == probe::TargetSource::ground_truth && !targets_path) {
    p.add("probes.targets", "required for ground-truth targets");
  }
  if (source == probe::TargetSource::model_prediction && !prediction_point.point_name) {
    p.add("probes.prediction_point.point_name", "required for model-prediction targets");
  }
  probe::SweepOptions opts;
  opts.holdout_fraction = get<double>(s, "probes", "holdout_fraction", p);
  if (!(opts.holdout_fraction > 0.0 && opts.holdout_fraction < 1.0)) {
    p.add("probes.holdout_fraction", "must lie in (0, 1)");
  }
  opts.model_id = opt_string(s, "probes", "model_id", p);
  opts.point_prefix = opt_string(s, "probes", "point_prefix", p);
  opts.delta = get<double>(s, "probes", "delta", p);
  if (!(opts.delta >= 0.0)) p.add("probes.delta", "must be >= 0");
  p.check([&] {
    opts.probe = probe::ProbeConfig::from_json(s);
    opts.probe.seed = cfg["seed"].get<std::uint64_t>();
    opts.probe.validate();
  }, "probes");
  p.raise();

  const auto table = store::FeatureTable::open(table_dir);
  probe::TargetSet targets;
  if (targets_path) {
    try {
      targets = probe::load_targets(*targets_path);
    } catch (...) {
      rethrow_for_file(*targets_path);
    }
  }
  if (source == probe::TargetSource::model_prediction) {
    auto classes = targets.classes;
    if (classes.empty()) {
      const auto& ap = sae::resolve_point(table.schema(), prediction_point, "prediction_point");
      for (std::uint32_t i = 0; i < ap.dimension; ++i) classes.push_back("class" + std::to_string(i));
    }
    targets = probe::targets_from_predictions(table, prediction_point, classes, min_conf);
    write_json(out / "targets.json", probe::to_json(targets));
  }
  const auto res = probe::run_probe_sweep(table, targets, opts);
  json probes = json::array();
  for (const auto& pr : res.probes) probes.push_back(probe::probe_to_json(pr));
  write_json(out / "probes.json", probes);
  write_json(out / "trajectory.json", probe::trajectory_to_json(res.trajectory));
  write_json(out / "transitions.json", transitions_json(res.transitions));
  write_file_atomic(out / "trajectory.svg", probe::trajectory_svg(res.trajectory, res.transitions));
  return {{"target_source", probe::to_string(targets.source)},
          {"targets", targets.references.size()},
          {"train_examples", res.train_examples},
          {"holdout_examples", res.holdout_examples},
          {"layers", res.probes.size() / 2},
          {"transitions", transitions_json(res.transitions)}};
}

// ---------------------------------------------------------------- map-labels / evaluate

json eval_defaults() {
  json e = ovd::EvalConfig{}.to_json();
  e["coco"] = nullptr;
  e["classes"] = nullptr;
  e["detections"] = nullptr;
  return {{"eval", e}};
}

json sweep_defaults() {
  return {{"sweep",
           {{"encoder", json::array()},
            {"max_pred", json::array()},
            {"min_conf", json::array()},
            {"use_objectness", json::array()},
            {"use_topk", json::array()},
            {"use_negatives", json::array()},
            {"use_parts", json::array()}}}};
}

struct MappingInputs {
  ovd::EvalConfig config;
  std::optional<ovd::CocoDataset> dataset;
  std::vector<std::string> classes;
  std::vector<ovd::RawDetection> detections;
};

MappingInputs load_mapping_inputs(const json& cfg, bool need_coco) {
  const auto& s = cfg["eval"];
  Problems p;
  MappingInputs in;
  p.check([&] {
    json j = s;
    for (const char* k : {"coco", "classes", "detections"}) j.erase(k);
    in.config = ovd::EvalConfig::from_json(j);
    in.config.validate();
  }, "eval");
  const auto coco = opt_string(s, "eval", "coco", p);
  const auto detections = required_path(s, "eval", "detections", p);
  if (!s["classes"].is_null()) in.classes = get<std::vector<std::string>>(s, "eval", "classes", p);
  if (need_coco && !coco) p.add("eval.coco", "required");
  if (!coco && in.classes.empty()) p.add("eval.classes", "required when no coco file is given");
  if (coco && !s["classes"].is_null()) p.add("eval.classes", "conflicts with eval.coco");
  p.raise();
  if (coco) {
    try {
      in.dataset = ovd::read_coco(*coco);
    } catch (...) {
      rethrow_for_file(*coco);
    }
    in.classes = in.dataset->classes;
  }
  try {
    in.detections = ovd::read_raw_detections(detections);
  } catch (...) {
    rethrow_for_file(detections.string());
  }
  return in;
}

json provenance_counts(const std::vector<ovd::MappedDetection>& mapped) {
  std::map<std::string, std::size_t> counts;
  std::set<std::size_t> sources;
  for (const auto& m : mapped) {
    if (sources.insert(m.source_index).second) ++counts[ovd::to_string(m.provenance)];
  }
  return counts;
}

json mapped_json(const MappingInputs& in, const std::vector<ovd::MappedDetection>& mapped) {
  if (in.dataset) return ovd::mapped_to_coco_results(mapped, *in.dataset);
  json arr = json::array();
  for (const auto& m : mapped) {
    if (m.provenance != ovd::Provenance::kept || !m.label) continue;
    arr.push_back({{"image_id", m.sample_id},
                   {"bbox", {m.box.x1, m.box.y1, m.box.width(), m.box.height()}},
                   {"label", in.classes[*m.label]},
                   {"score", m.score}});
  }
  return arr;
}

json run_map_labels(const json& cfg, const fs::path& out) {
  const auto in = load_mapping_inputs(cfg, false);
  const auto provider = ovd::make_embedding_provider(in.config.encoder_id);
  const auto space = ovd::build_label_space(in.classes, in.config, *provider);
  const auto mapped = ovd::map_labels(in.detections, space, in.config, *provider);
  write_json(out / "mapped.json", mapped_json(in, mapped));
  write_file_atomic(out / "provenance.csv", ovd::provenance_csv(mapped, in.detections, space));
  return {{"detections", in.detections.size()},
          {"prompts", space.prompts.size()},
          {"provenance", provenance_counts(mapped)},
          {"mapped", "mapped.json"}};
}

struct SweepAxis {
  std::string key;
  std::vector<json> values;
};

json run_evaluate(const json& cfg, const fs::path& out) {
  const auto in = load_mapping_inputs(cfg, true);
  const auto& sweep = cfg["sweep"];
  Problems p;
  std::vector<SweepAxis> axes;
  for (const auto& [key, values] : sweep.items()) {
    if (!values.is_array()) {
      p.add("sweep." + key, "must be a list");
      continue;
    }
    if (!values.empty()) axes.push_back({key, std::vector<json>(values.begin(), values.end())});
  }
  p.raise();

  const auto& dataset = *in.dataset;
  auto evaluate_with = [&](const ovd::EvalConfig& c, std::vector<ovd::MappedDetection>* keep, ovd::LabelSpace* keep_space) {
    const auto provider = ovd::make_embedding_provider(c.encoder_id);
    auto space = ovd::build_label_space(in.classes, c, *provider);
    auto mapped = ovd::map_labels(in.detections, space, c, *provider);
    auto result = ovd::evaluate(mapped, dataset.ground_truth, in.classes.size(), c);
    if (keep) *keep = std::move(mapped);
    if (keep_space) *keep_space = std::move(space);
    return result;
  };

  std::vector<ovd::MappedDetection> mapped;
  ovd::LabelSpace space;
  const auto result = evaluate_with(in.config, &mapped, &space);
  const auto metrics = ovd::metrics_to_json(result, in.classes);
  write_json(out / "metrics.json", metrics);
  write_json(out / "mapped.json", mapped_json(in, mapped));
  write_file_atomic(out / "provenance.csv", ovd::provenance_csv(mapped, in.detections, space));
  json summary = {{"AP", metrics["AP"]},
                  {"AP50", metrics["AP50"]},
                  {"AR", metrics["AR"]},
                  {"num_detections", result.num_detections},
                  {"num_gt", result.num_gt},
                  {"provenance", provenance_counts(mapped)}};

  if (!axes.empty()) {
    // Cartesian product, first axis slowest.
    std::size_t total = 1;
    for (const auto& a : axes) total *= a.values.size();
    json rows = json::array();
    std::string csv;
    for (const auto& a : axes) csv += a.key + ",";
    csv += "AP,AP50,AR\n";
    for (std::size_t t = 0; t < total; ++t) {
      std::vector<std::size_t> idx(axes.size());
      for (std::size_t i = axes.size(), rest = t; i-- > 0;) {
        idx[i] = rest % axes[i].values.size();
        rest /= axes[i].values.size();
      }
      json base = in.config.to_json();
      json settings = json::object();
      for (std::size_t i = 0; i < axes.size(); ++i) {
        base[axes[i].key] = axes[i].values[idx[i]];
        settings[axes[i].key] = axes[i].values[idx[i]];
      }
      ovd::EvalConfig c;
      Problems sweep_problems;
      sweep_problems.check([&] {
        c = ovd::EvalConfig::from_json(base);
        c.validate();
      }, "sweep");
      sweep_problems.raise();
      const auto r = evaluate_with(c, nullptr, nullptr);
      const auto m = ovd::metrics_to_json(r, in.classes);
      rows.push_back({{"settings", settings}, {"AP", m["AP"]}, {"AP50", m["AP50"]}, {"AR", m["AR"]}});
      for (std::size_t i = 0; i < axes.size(); ++i) {
        const auto& v = axes[i].values[idx[i]];
        csv += (v.is_string() ? v.get<std::string>() : v.dump()) + ",";
      }
      auto num = [](const json& v) { return v.is_null() ? std::string() : fmt(v.get<double>()); };
      csv += num(m["AP"]) + "," + num(m["AP50"]) + "," + num(m["AR"]) + "\n";
    }
    write_json(out / "sweep.json", rows);
    write_file_atomic(out / "sweep.csv", csv);
    summary["sweep"] = rows;
  }
  return summary;
}

// ---------------------------------------------------------------- attribute

json attribute_defaults() {
  return {{"attribute",
           {{"checkpoint", nullptr},
            {"table", nullptr},
            {"source", kNullFilter},
            {"top_n", attribution::kDefaultTopN},
            {"batch_size", 256},
            {"images", nullptr},
            {"image_pattern", "{}.jpg"},
            {"coco", nullptr},
            {"targets", nullptr},
            {"html", true}}}};
}

json run_attribute(const json& cfg, const fs::path& out) {
  const auto& s = cfg["attribute"];
  Problems p;
  const auto checkpoint = required_path(s, "attribute", "checkpoint", p);
  const auto table_dir = required_path(s, "attribute", "table", p);
  attribution::AttributeOptions opts;
  opts.source = filter_from(s, "attribute", "source", p);
  opts.top_n = get<std::size_t>(s, "attribute", "top_n", p);
  if (opts.top_n == 0) p.add("attribute.top_n", "must be >= 1");
  opts.batch_size = get<std::size_t>(s, "attribute", "batch_size", p);
  if (opts.batch_size == 0) p.add("attribute.batch_size", "must be >= 1");
  const auto images = opt_string(s, "attribute", "images", p);
  const auto pattern = get<std::string>(s, "attribute", "image_pattern", p);
  const auto coco = opt_string(s, "attribute", "coco", p);
  const auto targets_path = opt_string(s, "attribute", "targets", p);
  const auto html = get<bool>(s, "attribute", "html", p);
  p.raise();

  sae::Checkpoint ck;
  try {
    ck = sae::load_checkpoint(checkpoint);
  } catch (...) {
    rethrow_for_file(checkpoint.string());
  }
  std::shared_ptr<std::unordered_map<std::string, std::string>> labels;
  if (targets_path) {
    probe::TargetSet t;
    try {
      t = probe::load_targets(*targets_path);
    } catch (...) {
      rethrow_for_file(*targets_path);
    }
    labels = std::make_shared<std::unordered_map<std::string, std::string>>();
    for (const auto& r : t.references) {
      (*labels)[r.sample_id + '\x1f' + std::to_string(r.token_index)] = t.classes[r.class_index];
    }
    opts.labeler = [labels](const std::string& sid, std::uint32_t tok) -> std::optional<std::string> {
      const auto it = labels->find(sid + '\x1f' + std::to_string(tok));
      if (it == labels->end()) return std::nullopt;
      return it->second;
    };
  }
  const auto table = store::FeatureTable::open(table_dir);
  auto report = attribution::attribute(ck.model, table, opts);
  if (images || coco) {
    attribution::ImageSource src;
    if (images) src.dir = *images;
    src.pattern = pattern;
    if (coco) {
      ovd::CocoDataset ds;
      try {
        ds = ovd::read_coco(*coco);
      } catch (...) {
        rethrow_for_file(*coco);
      }
      for (const auto& im : ds.images) src.file_names[im.sample_id] = im.file_name;
    }
    attribution::resolve_images(report, src);
  }
  attribution::write_report(report, out, {html});
  return {{"records", report.records},
          {"latents", report.latents.size()},
          {"active_latents", report.active_latents()},
          {"coverage", report.coverage()},
          {"dead_latents", report.dead_latents().size()},
          {"missing_images", report.missing_images.size()},
          {"manifest", "manifest.json"}};
}

// ---------------------------------------------------------------- trajectory

json trajectory_defaults() { return {{"trajectory", {{"input", nullptr}, {"delta", probe::kDefaultDipThreshold}}}}; }

json run_trajectory(const json& cfg, const fs::path& out) {
  const auto& s = cfg["trajectory"];
  Problems p;
  const auto input = required_path(s, "trajectory", "input", p);
  const auto delta = get<double>(s, "trajectory", "delta", p);
  if (!(delta >= 0.0)) p.add("trajectory.delta", "must be >= 0");
  p.raise();
  std::vector<probe::TrajectoryEntry> trajectory;
  try {
    trajectory = probe::trajectory_from_json(read_json(input));
  } catch (...) {
    rethrow_for_file(input.string());
  }
  std::map<probe::ScoreMode, probe::TransitionReport> transitions;
  json skipped = json::array();
  for (auto mode : {probe::ScoreMode::classification, probe::ScoreMode::localization, probe::ScoreMode::joint}) {
    const auto [acc, layers] = probe::task_curve(trajectory, mode);
    if (acc.empty()) continue;
    if (acc.size() < 3) {
      skipped.push_back(probe::to_string(mode));
      continue;
    }
    transitions[mode] = probe::detect_transition(acc, delta, layers);
  }
  if (transitions.empty()) throw DataError(input.string() + ": no task has at least 3 layers");
  write_json(out / "transitions.json", transitions_json(transitions));
  write_file_atomic(out / "trajectory.svg", probe::trajectory_svg(trajectory, transitions));
  return {{"tasks", transitions_json(transitions)}, {"skipped", skipped}};
}

}  // namespace

std::vector<Command> commands() {
  std::vector<Command> out;

  out.push_back({"ingest", "Align raw tensor dumps into a feature table", ingest_defaults(),
                 [](CLI::App& app, Flags& f) {
                   f.option<std::string>(app, "--dump", "/ingest/dump", "Dump directory holding manifest.json");
                   f.option<std::string>(app, "--dtype", "/ingest/dtype", "Storage dtype: f32 or f64");
                 },
                 run_ingest});

  out.push_back({"train-sae", "Train a sparse autoencoder or transcoder", sae_defaults(),
                 [](CLI::App& app, Flags& f) {
                   f.option<std::string>(app, "--table", "/sae/table", "Feature table directory");
                   f.option<std::string>(app, "--model", "/sae/source/model_id", "Source model id");
                   f.option<std::string>(app, "--point", "/sae/source/point_name", "Source access point");
                   f.option<std::string>(app, "--variant", "/sae/variant", "relu, topk, batch_topk or matryoshka");
                   f.option<std::size_t>(app, "--k", "/sae/k", "Active latents per token");
                   f.option<std::size_t>(app, "--expansion", "/sae/expansion_factor", "Expansion factor");
                   f.option<double>(app, "--lr", "/sae/lr", "Learning rate");
                   f.option<std::size_t>(app, "--epochs", "/sae/epochs", "Passes over the table");
                   f.option<std::uint64_t>(app, "--max-steps", "/sae/max_steps", "Stop after this many steps");
                 },
                 run_train_sae});

  out.push_back({"train-probes", "Train per-layer probes and detect the transition layer", probes_defaults(),
                 [](CLI::App& app, Flags& f) {
                   f.option<std::string>(app, "--table", "/probes/table", "Feature table directory");
                   f.option<std::string>(app, "--targets", "/probes/targets", "Targets JSON");
                   f.option<std::string>(app, "--target-source", "/probes/target_source",
                                         "ground_truth or model_prediction");
                   f.option<std::string>(app, "--prediction-point", "/probes/prediction_point/point_name",
                                         "Access point with the model's own predictions");
                   f.option<double>(app, "--min-conf", "/probes/min_conf", "Objectness floor for prediction targets");
                   f.option<std::string>(app, "--model", "/probes/model_id", "Model id of the probed layers");
                   f.option<std::string>(app, "--prefix", "/probes/point_prefix", "Point-name prefix of probed layers");
                   f.option<std::size_t>(app, "--epochs", "/probes/epochs", "Probe training epochs");
                   f.option<double>(app, "--lr", "/probes/lr", "Probe learning rate");
                   f.option<double>(app, "--delta", "/probes/delta", "Dip threshold");
                 },
                 run_train_probes});

  auto mapping_flags = [](CLI::App& app, Flags& f) {
    f.option<std::string>(app, "--coco", "/eval/coco", "COCO ground-truth file");
    f.option<std::string>(app, "--detections", "/eval/detections", "Raw text detections JSON");
    f.option<std::string>(app, "--encoder", "/eval/encoder", "Text encoder: hashed, hashed:D or table:DIR");
    f.option<std::size_t>(app, "--max-pred", "/eval/max_pred", "Predictions kept per image (default 900)");
    f.option<double>(app, "--min-conf", "/eval/min_conf", "Confidence floor (default 0)");
    f.toggle(app, "objectness", "/eval/use_objectness", "Multiply scores by objectness");
    f.toggle(app, "topk", "/eval/use_topk", "Spread each detection over its top-k classes");
    f.toggle(app, "negatives", "/eval/use_negatives", "Add negative prompts");
    f.toggle(app, "parts", "/eval/use_parts", "Add part prompts");
  };
  json eval_and_sweep = eval_defaults();
  eval_and_sweep.update(sweep_defaults());
  out.push_back({"map-labels", "Map open-vocabulary detections onto a label space", eval_defaults(), mapping_flags,
                 run_map_labels});
  out.push_back({"evaluate", "Map detections and compute COCO-style AP/AR", eval_and_sweep, mapping_flags, run_evaluate});

  out.push_back({"attribute", "Top activating records per SAE latent", attribute_defaults(),
                 [](CLI::App& app, Flags& f) {
                   f.option<std::string>(app, "--checkpoint", "/attribute/checkpoint", "SAE checkpoint");
                   f.option<std::string>(app, "--table", "/attribute/table", "Feature table directory");
                   f.option<std::string>(app, "--model", "/attribute/source/model_id", "Source model id");
                   f.option<std::string>(app, "--point", "/attribute/source/point_name", "Source access point");
                   f.option<std::size_t>(app, "--top-n", "/attribute/top_n", "Entries kept per latent");
                   f.option<std::string>(app, "--images", "/attribute/images", "Image directory");
                   f.option<std::string>(app, "--targets", "/attribute/targets", "Targets JSON for class labels");
                   f.toggle(app, "html", "/attribute/html", "Write gallery.html");
                 },
                 run_attribute});

  out.push_back({"trajectory", "Detect the transition layer of accuracy curves", trajectory_defaults(),
                 [](CLI::App& app, Flags& f) {
                   f.option<std::string>(app, "--input", "/trajectory/input", "Trajectory JSON");
                   f.option<double>(app, "--delta", "/trajectory/delta", "Dip threshold");
                 },
                 run_trajectory});

  out.push_back({"synth", "Generate seeded synthetic fixtures", synth_defaults(),
                 [](CLI::App& app, Flags& f) {
                   f.option<std::string>(app, "--kind", "/synth/kind", "stack, dictionary or detections");
                 },
                 run_synth});
  return out;
}

std::vector<std::string> all_sections() {
  return {"ingest", "sae", "probes", "eval", "sweep", "attribute", "trajectory", "synth"};
}

}  // namespace prism::cli
