#include "prism/store/align.hpp"

#include <array>
#include <cmath>
#include <optional>

#include "prism/core/error.hpp"

namespace prism::store {

AxisRole parse_axis_role(std::string_view name) {
  if (name == "batch") return AxisRole::batch;
  if (name == "token") return AxisRole::token;
  if (name == "channel") return AxisRole::channel;
  throw SchemaError("unknown axis role '" + std::string(name) + "'");
}

namespace {

struct AxisMap {
  std::size_t batch_extent = 1, token_extent = 1, channel_extent = 0;
  std::size_t batch_stride = 0, token_stride = 0, channel_stride = 0;
};

AxisMap resolve_axes(const RawTensor& raw, const LayoutDescriptor& layout) {
  if (layout.axes.size() != raw.shape.size()) {
    throw SchemaError("layout declares " + std::to_string(layout.axes.size()) +
                      " axes but tensor has rank " + std::to_string(raw.shape.size()));
  }
  std::size_t expected = 1;
  for (std::size_t e : raw.shape) expected *= e;
  if (expected != raw.data.size()) {
    throw SchemaError("tensor data holds " + std::to_string(raw.data.size()) +
                      " values, shape implies " + std::to_string(expected));
  }

  std::vector<std::size_t> strides(raw.shape.size(), 1);
  for (std::size_t i = raw.shape.size(); i-- > 1;) strides[i - 1] = strides[i] * raw.shape[i];

  AxisMap map;
  std::array<bool, 3> seen{};
  for (std::size_t i = 0; i < layout.axes.size(); ++i) {
    const AxisRole role = parse_axis_role(layout.axes[i]);
    auto& flag = seen[static_cast<std::size_t>(role)];
    if (flag) throw SchemaError("axis role '" + layout.axes[i] + "' declared twice");
    flag = true;
    switch (role) {
      case AxisRole::batch:
        map.batch_extent = raw.shape[i];
        map.batch_stride = strides[i];
        break;
      case AxisRole::token:
        map.token_extent = raw.shape[i];
        map.token_stride = strides[i];
        break;
      case AxisRole::channel:
        map.channel_extent = raw.shape[i];
        map.channel_stride = strides[i];
        break;
    }
  }
  if (!seen[static_cast<std::size_t>(AxisRole::channel)]) {
    throw SchemaError("layout has no channel axis");
  }
  if (map.channel_extent == 0) throw SchemaError("channel axis has zero extent");
  return map;
}

void check_side_data(const LayoutDescriptor& layout, const AxisMap& map) {
  const std::size_t slots = map.batch_extent * map.token_extent;
  if (!layout.sample_ids.empty() && layout.sample_ids.size() != map.batch_extent) {
    throw SchemaError("expected " + std::to_string(map.batch_extent) + " sample ids, got " +
                      std::to_string(layout.sample_ids.size()));
  }
  if (!layout.pad_mask.empty() && layout.pad_mask.size() != slots) {
    throw SchemaError("pad mask must have batch*token = " + std::to_string(slots) + " entries");
  }
  if (!layout.objectness.empty() && layout.objectness.size() != slots) {
    throw SchemaError("objectness must have batch*token = " + std::to_string(slots) + " entries");
  }
  if (!layout.boxes.empty() && layout.boxes.size() != 4 * slots) {
    throw SchemaError("boxes must have batch*token*4 = " + std::to_string(4 * slots) + " entries");
  }
}

std::string describe(const FeatureRecord& rec) {
  return rec.access_point.point_name + "/" + rec.sample_id + "#" + std::to_string(rec.token_index);
}

}  // namespace

std::vector<FeatureRecord> align(const RawTensor& raw, const LayoutDescriptor& layout) {
  const AxisMap map = resolve_axes(raw, layout);
  check_side_data(layout, map);

  std::vector<FeatureRecord> records;
  records.reserve(map.batch_extent * map.token_extent);
  for (std::size_t b = 0; b < map.batch_extent; ++b) {
    for (std::size_t t = 0; t < map.token_extent; ++t) {
      const std::size_t slot = b * map.token_extent + t;
      if (!layout.pad_mask.empty() && layout.pad_mask[slot] != 0) continue;

      FeatureRecord rec;
      rec.access_point = layout.access_point;
      rec.sample_id = layout.sample_ids.empty() ? std::to_string(b) : layout.sample_ids[b];
      rec.token_index = static_cast<std::uint32_t>(t);
      rec.vector.resize(map.channel_extent);
      const std::size_t base = b * map.batch_stride + t * map.token_stride;
      for (std::size_t c = 0; c < map.channel_extent; ++c) {
        double v = raw.data[base + c * map.channel_stride];
        if (layout.dtype == Dtype::f32) v = static_cast<double>(static_cast<float>(v));
        if (!std::isfinite(v)) {
          throw AlignmentError("non-finite value at channel " + std::to_string(c) + " of record " +
                               describe(rec));
        }
        rec.vector[c] = v;
      }
      if (!layout.objectness.empty()) {
        const float o = layout.objectness[slot];
        if (!std::isfinite(o)) throw AlignmentError("non-finite objectness in record " + describe(rec));
        rec.aux.objectness = o;
      }
      if (!layout.boxes.empty()) {
        NormBox box;
        for (std::size_t k = 0; k < 4; ++k) {
          box[k] = layout.boxes[4 * slot + k];
          if (!std::isfinite(box[k])) throw AlignmentError("non-finite box in record " + describe(rec));
        }
        rec.aux.box = box;
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

}  // namespace prism::store
