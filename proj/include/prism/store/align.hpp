#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prism/store/types.hpp"

namespace prism::store {

enum class AxisRole { batch, token, channel };

/// Throws SchemaError for anything other than "batch", "token" or "channel".
AxisRole parse_axis_role(std::string_view name);

/// Dense row-major tensor as dumped by a capture hook.
struct RawTensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

/// Describes how the axes of a RawTensor map onto (batch, token, channel).
///
/// `axes` names one role per tensor axis, in tensor order. The batch and
/// token axes may be absent, in which case they have extent 1. Per-token side
/// data (`pad_mask`, `objectness`, `boxes`) is always laid out canonically as
/// [batch][token] (and [batch][token][4] for boxes).
struct LayoutDescriptor {
  AccessPointSpec access_point;
  std::vector<std::string> axes;
  std::vector<std::string> sample_ids;  // one per batch entry; defaults to "0", "1", ...
  std::vector<std::uint8_t> pad_mask;   // nonzero marks a padded token
  std::vector<float> objectness;
  std::vector<float> boxes;             // cx, cy, w, h
  Dtype dtype = Dtype::f32;
};

/// One record per (sample, unpadded token), channel axis flattened into the
/// vector. With f32 dtype values are rounded to float precision here so that
/// storage is lossless afterwards.
std::vector<FeatureRecord> align(const RawTensor& raw, const LayoutDescriptor& layout);

}  // namespace prism::store
