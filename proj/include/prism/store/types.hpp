#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace prism::store {

enum class ArtifactKind { activation, prediction, objectness, box };

std::string_view to_string(ArtifactKind kind);
ArtifactKind parse_artifact_kind(std::string_view text);

/// Named capture location inside a model.
struct AccessPointSpec {
  std::string model_id;
  std::string point_name;  // e.g. "decoder.layer4.residual"
  std::uint16_t layer_index = 0;
  ArtifactKind artifact_kind = ArtifactKind::activation;

  bool same_location(const AccessPointSpec& other) const {
    return model_id == other.model_id && point_name == other.point_name;
  }
  friend bool operator==(const AccessPointSpec&, const AccessPointSpec&) = default;
};

/// Normalized (cx, cy, w, h) in [0, 1].
using NormBox = std::array<float, 4>;

struct RecordAux {
  std::optional<float> objectness;
  std::optional<NormBox> box;

  friend bool operator==(const RecordAux&, const RecordAux&) = default;
};

/// One aligned activation vector with its provenance.
///
/// For prediction-style artifacts token_index is the detector's query or
/// proposal slot.
struct FeatureRecord {
  AccessPointSpec access_point;
  std::string sample_id;
  std::uint32_t token_index = 0;
  std::vector<double> vector;
  RecordAux aux;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

enum class Dtype { f32, f64 };

std::string_view to_string(Dtype dtype);
Dtype parse_dtype(std::string_view text);

struct AccessPointSchema {
  AccessPointSpec spec;
  std::uint32_t dimension = 0;
  std::uint64_t row_count = 0;

  friend bool operator==(const AccessPointSchema&, const AccessPointSchema&) = default;
};

struct FeatureTableSchema {
  Dtype dtype = Dtype::f32;
  std::uint64_t row_count = 0;
  std::vector<AccessPointSchema> access_points;

  /// Common vector length when every access point agrees, else nullopt.
  std::optional<std::uint32_t> dimension() const;

  const AccessPointSchema* find(std::string_view model_id, std::string_view point_name) const;

  friend bool operator==(const FeatureTableSchema&, const FeatureTableSchema&) = default;
};

inline constexpr std::string_view kSchemaFormatTag = "prism.feature-table/1";

nlohmann::json to_json(const FeatureTableSchema& schema);
FeatureTableSchema schema_from_json(const nlohmann::json& j);

nlohmann::json to_json(const AccessPointSpec& spec);
AccessPointSpec access_point_from_json(const nlohmann::json& j);

}  // namespace prism::store
