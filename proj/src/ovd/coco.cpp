#include "prism/ovd/coco.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "prism/core/io.hpp"

namespace prism::ovd {

using nlohmann::json;

std::optional<std::size_t> CocoDataset::class_of_category(long long category_id) const {
  for (std::size_t i = 0; i < category_ids.size(); ++i) {
    if (category_ids[i] == category_id) return i;
  }
  return std::nullopt;
}

const ImageInfo* CocoDataset::find_image(const std::string& sample_id) const {
  for (const auto& img : images) {
    if (img.sample_id == sample_id) return &img;
  }
  return nullptr;
}

std::string image_key(const json& id) {
  if (id.is_string()) return id.get<std::string>();
  if (id.is_number_integer()) return std::to_string(id.get<long long>());
  throw DataError("image_id must be an integer or a string, got " + id.dump());
}

namespace {

Box parse_xywh(const json& bbox, const std::string& where) {
  if (!bbox.is_array() || bbox.size() != 4) throw DataError(where + ": bbox must be [x, y, w, h]");
  std::array<double, 4> v{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!bbox[i].is_number()) throw DataError(where + ": bbox entries must be numbers");
    v[i] = bbox[i].get<double>();
  }
  const Box b = Box::from_xywh(v[0], v[1], v[2], v[3]);
  if (!b.valid()) throw DataError(where + ": degenerate or non-finite bbox");
  return b;
}

std::optional<double> optional_number(const json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw DataError(where + ": '" + key + "' must be a number");
  return it->get<double>();
}

const json& require(const json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw DataError(where + ": missing '" + key + "'");
  return *it;
}

json box_to_xywh(const Box& b) { return json::array({b.x1, b.y1, b.width(), b.height()}); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

CocoDataset parse_coco(const json& doc) {
  if (!doc.is_object()) throw DataError("COCO ground truth must be a JSON object");
  CocoDataset ds;

  std::vector<std::pair<long long, std::string>> cats;
  for (const auto& c : require(doc, "categories", "ground truth")) {
    cats.emplace_back(require(c, "id", "category").get<long long>(), require(c, "name", "category").get<std::string>());
  }
  std::sort(cats.begin(), cats.end());
  std::set<std::string> names;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    if (i > 0 && cats[i].first == cats[i - 1].first) throw DataError("duplicate category id " + std::to_string(cats[i].first));
    if (!names.insert(cats[i].second).second) throw DataError("duplicate category name '" + cats[i].second + "'");
    ds.category_ids.push_back(cats[i].first);
    ds.classes.push_back(cats[i].second);
  }

  std::set<std::string> image_ids;
  if (doc.contains("images")) {
    for (const auto& im : doc["images"]) {
      ImageInfo info;
      info.raw_id = require(im, "id", "image");
      info.sample_id = image_key(info.raw_id);
      info.file_name = im.value("file_name", "");
      info.width = im.value("width", 0.0);
      info.height = im.value("height", 0.0);
      if (!image_ids.insert(info.sample_id).second) throw DataError("duplicate image id '" + info.sample_id + "'");
      ds.images.push_back(std::move(info));
    }
  }

  for (const auto& a : require(doc, "annotations", "ground truth")) {
    const std::string sample = image_key(require(a, "image_id", "annotation"));
    const std::string where = "annotation on image '" + sample + "'";
    const auto cat = require(a, "category_id", where).get<long long>();
    const auto cls = ds.class_of_category(cat);
    if (!cls) throw DataError(where + ": category_id " + std::to_string(cat) + " is not in the label space");
    if (!image_ids.count(sample)) {
      image_ids.insert(sample);
      ds.images.push_back({sample, a["image_id"], "", 0, 0});
    }
    ds.ground_truth.push_back({sample, parse_xywh(require(a, "bbox", where), where), *cls});
  }
  return ds;
}

CocoDataset read_coco(const std::filesystem::path& path) { return parse_coco(read_json(path)); }

std::vector<RawDetection> parse_raw_detections(const json& doc) {
  const json& arr = doc.is_object() && doc.contains("detections") ? doc["detections"] : doc;
  if (!arr.is_array()) throw DataError("detections must be a JSON array");
  std::vector<RawDetection> out;
  out.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& d = arr[i];
    const std::string where = "detection " + std::to_string(i);
    RawDetection r;
    r.sample_id = image_key(require(d, "image_id", where));
    r.box = parse_xywh(require(d, "bbox", where), where);
    const auto& text = require(d, "text", where);
    if (!text.is_string()) throw DataError(where + ": 'text' must be a string");
    r.text = text.get<std::string>();
    r.confidence = optional_number(d, "score", where);
    r.objectness = optional_number(d, "objectness", where);
    validate_detection(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RawDetection> read_raw_detections(const std::filesystem::path& path) {
  return parse_raw_detections(read_json(path));
}

std::vector<ScoredDetection> parse_scored_detections(const json& doc, const CocoDataset& dataset) {
  if (!doc.is_array()) throw DataError("detections must be a JSON array");
  std::vector<ScoredDetection> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& d = doc[i];
    const std::string where = "detection " + std::to_string(i);
    const auto cat = require(d, "category_id", where).get<long long>();
    const auto cls = dataset.class_of_category(cat);
    if (!cls) throw DataError(where + ": category_id " + std::to_string(cat) + " is not in the label space");
    out.push_back({image_key(require(d, "image_id", where)), parse_xywh(require(d, "bbox", where), where), *cls,
                   require(d, "score", where).get<double>()});
  }
  return out;
}

json raw_detections_to_json(const std::vector<RawDetection>& detections) {
  json arr = json::array();
  for (const auto& d : detections) {
    json j = {{"image_id", d.sample_id}, {"bbox", box_to_xywh(d.box)}, {"text", d.text}};
    if (d.confidence) j["score"] = *d.confidence;
    if (d.objectness) j["objectness"] = *d.objectness;
    arr.push_back(std::move(j));
  }
  return arr;
}

json mapped_to_coco_results(const std::vector<MappedDetection>& mapped, const CocoDataset& dataset) {
  json arr = json::array();
  for (const auto& m : mapped) {
    if (m.provenance != Provenance::kept || !m.label) continue;
    const ImageInfo* img = dataset.find_image(m.sample_id);
    arr.push_back({{"image_id", img ? img->raw_id : json(m.sample_id)},
                   {"category_id", dataset.category_ids.at(*m.label)},
                   {"bbox", box_to_xywh(m.box)},
                   {"score", m.score}});
  }
  return arr;
}

json metrics_to_json(const EvalResult& result, const std::vector<std::string>& class_names) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json per_class = json::object();
  for (std::size_t k = 0; k < result.per_class.size() && k < class_names.size(); ++k) {
    const auto& cm = result.per_class[k];
    if (!cm) continue;
    per_class[class_names[k]] = {{"AP", num(cm->ap)}, {"AP50", num(cm->ap50)}, {"AR", num(cm->ar)}, {"num_gt", cm->num_gt}};
  }
  return {{"AP", num(result.ap)},
          {"AP50", num(result.ap50)},
          {"AR", num(result.ar)},
          {"num_detections", result.num_detections},
          {"num_gt", result.num_gt},
          {"per_class", per_class}};
}

std::string provenance_csv(const std::vector<MappedDetection>& mapped, const std::vector<RawDetection>& raw,
                           const LabelSpace& space) {
  std::string out = "source_index,sample_id,text,provenance,prompt,similarity,label,score,confidence_defaulted\n";
  for (const auto& m : mapped) {
    if (m.provenance == Provenance::kept && !m.confidence_defaulted) continue;
    const auto& r = raw.at(m.source_index);
    out += std::to_string(m.source_index) + "," + csv_field(m.sample_id) + "," + csv_field(r.text) + "," +
           to_string(m.provenance) + ",";
    out += m.prompt_index ? csv_field(space.prompts.at(*m.prompt_index).text) + "," + number(m.similarity) : ",";
    out += ",";
    out += m.label ? csv_field(space.classes.at(*m.label)) + "," + number(m.score) : ",";
    out += m.confidence_defaulted ? ",true\n" : ",false\n";
  }
  return out;
}

}  // namespace prism::ovd
