#include "prism/store/types.hpp"

#include "prism/core/error.hpp"

namespace prism::store {

std::string_view to_string(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::activation:
      return "activation";
    case ArtifactKind::prediction:
      return "prediction";
    case ArtifactKind::objectness:
      return "objectness";
    case ArtifactKind::box:
      return "box";
  }
  return "activation";
}

ArtifactKind parse_artifact_kind(std::string_view text) {
  if (text == "activation") return ArtifactKind::activation;
  if (text == "prediction") return ArtifactKind::prediction;
  if (text == "objectness") return ArtifactKind::objectness;
  if (text == "box") return ArtifactKind::box;
  throw SchemaError("unknown artifact kind '" + std::string(text) + "'");
}

std::string_view to_string(Dtype dtype) { return dtype == Dtype::f32 ? "f32" : "f64"; }

Dtype parse_dtype(std::string_view text) {
  if (text == "f32") return Dtype::f32;
  if (text == "f64") return Dtype::f64;
  throw SchemaError("unknown dtype '" + std::string(text) + "'");
}

std::optional<std::uint32_t> FeatureTableSchema::dimension() const {
  if (access_points.empty()) return std::nullopt;
  const std::uint32_t d = access_points.front().dimension;
  for (const auto& ap : access_points) {
    if (ap.dimension != d) return std::nullopt;
  }
  return d;
}

const AccessPointSchema* FeatureTableSchema::find(std::string_view model_id,
                                                  std::string_view point_name) const {
  for (const auto& ap : access_points) {
    if (ap.spec.model_id == model_id && ap.spec.point_name == point_name) return &ap;
  }
  return nullptr;
}

nlohmann::json to_json(const AccessPointSpec& spec) {
  return {{"model_id", spec.model_id},
          {"point_name", spec.point_name},
          {"layer_index", spec.layer_index},
          {"artifact_kind", std::string(to_string(spec.artifact_kind))}};
}

AccessPointSpec access_point_from_json(const nlohmann::json& j) {
  try {
    AccessPointSpec spec;
    spec.model_id = j.at("model_id").get<std::string>();
    spec.point_name = j.at("point_name").get<std::string>();
    spec.layer_index = j.at("layer_index").get<std::uint16_t>();
    spec.artifact_kind = parse_artifact_kind(j.value("artifact_kind", std::string("activation")));
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad access point entry: ") + e.what());
  }
}

nlohmann::json to_json(const FeatureTableSchema& schema) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& ap : schema.access_points) {
    nlohmann::json entry = to_json(ap.spec);
    entry["dimension"] = ap.dimension;
    entry["row_count"] = ap.row_count;
    points.push_back(std::move(entry));
  }
  nlohmann::json j = {{"format", std::string(kSchemaFormatTag)},
                      {"dtype", std::string(to_string(schema.dtype))},
                      {"row_count", schema.row_count},
                      {"access_points", std::move(points)}};
  if (auto d = schema.dimension()) {
    j["dimension"] = *d;
  } else {
    j["dimension"] = nullptr;
  }
  return j;
}

FeatureTableSchema schema_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", std::string()) != kSchemaFormatTag) {
      throw SchemaError("unsupported schema format tag '" + j.value("format", std::string()) + "'");
    }
    FeatureTableSchema schema;
    schema.dtype = parse_dtype(j.at("dtype").get<std::string>());
    schema.row_count = j.at("row_count").get<std::uint64_t>();
    for (const auto& entry : j.at("access_points")) {
      AccessPointSchema ap;
      ap.spec = access_point_from_json(entry);
      ap.dimension = entry.at("dimension").get<std::uint32_t>();
      ap.row_count = entry.at("row_count").get<std::uint64_t>();
      schema.access_points.push_back(std::move(ap));
    }
    return schema;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad schema.json: ") + e.what());
  }
}

}  // namespace prism::store
