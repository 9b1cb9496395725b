#include "prism/store/table.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <sstream>

#include "prism/core/error.hpp"
#include "prism/core/io.hpp"
#include "prism/store/parquet.hpp"

namespace prism::store {

namespace fs = std::filesystem;
namespace pq = parquet;

namespace {

constexpr const char* kSchemaKey = "prism.schema";
constexpr const char* kCreatedBy = "prism feature-store 1.0";

std::vector<pq::SchemaElement> table_schema(Dtype dtype) {
  using pq::Annotation;
  using pq::PhysicalType;
  using pq::Repetition;
  const PhysicalType vec_type = dtype == Dtype::f32 ? PhysicalType::float32 : PhysicalType::float64;
  return {
      {"schema", std::nullopt, Repetition::required, 8, Annotation::none},
      {"model_id", PhysicalType::byte_array, Repetition::required, 0, Annotation::string},
      {"point_name", PhysicalType::byte_array, Repetition::required, 0, Annotation::string},
      {"layer_index", PhysicalType::int32, Repetition::required, 0, Annotation::uint16},
      {"sample_id", PhysicalType::byte_array, Repetition::required, 0, Annotation::string},
      {"token_index", PhysicalType::int32, Repetition::required, 0, Annotation::uint32},
      {"vector", std::nullopt, Repetition::required, 1, Annotation::list},
      {"list", std::nullopt, Repetition::repeated, 1, Annotation::none},
      {"element", vec_type, Repetition::required, 0, Annotation::none},
      {"aux_objectness", PhysicalType::float32, Repetition::optional, 0, Annotation::none},
      {"aux_box", std::nullopt, Repetition::optional, 1, Annotation::list},
      {"list", std::nullopt, Repetition::repeated, 1, Annotation::none},
      {"element", PhysicalType::float32, Repetition::required, 0, Annotation::none},
  };
}

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

std::string describe(const FeatureRecord& r) {
  return r.access_point.model_id + "/" + r.access_point.point_name + "/" + r.sample_id + "#" +
         std::to_string(r.token_index);
}

}  // namespace

// ---------------------------------------------------------------- writer

struct FeatureTableWriter::ParquetState {
  std::ofstream out;
  std::vector<pq::LeafDescriptor> leaves;
  std::unique_ptr<pq::FileWriter> writer;
};

FeatureTableWriter::FeatureTableWriter(fs::path dir, Dtype dtype, std::size_t row_group_rows)
    : dir_(std::move(dir)), dtype_(dtype), row_group_rows_(std::max<std::size_t>(1, row_group_rows)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create table directory " + dir_.string() + ": " + ec.message());
  lock_path_ = dir_ / ".write.lock";
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw IoError("table " + dir_.string() + " is locked by another writer (" + lock_path_.string() + ")");
  }
  ::close(fd);

  schema_.dtype = dtype_;
  tmp_path_ = dir_ / (std::string(kDataFileName) + ".tmp");
  parquet_ = std::make_unique<ParquetState>();
  parquet_->out.open(tmp_path_, std::ios::binary | std::ios::trunc);
  if (!parquet_->out) {
    release();
    throw IoError("cannot open " + tmp_path_.string() + " for writing");
  }
  auto schema = table_schema(dtype_);
  parquet_->leaves = pq::resolve_leaves(schema);
  parquet_->writer = std::make_unique<pq::FileWriter>(parquet_->out, std::move(schema));
}

FeatureTableWriter::~FeatureTableWriter() {
  if (!finished_) {
    parquet_.reset();
    std::error_code ec;
    fs::remove(tmp_path_, ec);
    release();
  }
}

void FeatureTableWriter::release() {
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

void FeatureTableWriter::append(const FeatureRecord& record) {
  if (finished_) throw DataError("append after finish on " + dir_.string());
  if (record.vector.empty()) throw SchemaError("empty vector in record " + describe(record));
  for (double v : record.vector) {
    if (!std::isfinite(v)) throw AlignmentError("non-finite value in record " + describe(record));
  }
  AccessPointSchema* entry = nullptr;
  for (auto& ap : schema_.access_points) {
    if (ap.spec.same_location(record.access_point)) entry = &ap;
  }
  if (entry == nullptr) {
    schema_.access_points.push_back({record.access_point, static_cast<std::uint32_t>(record.vector.size()), 0});
    entry = &schema_.access_points.back();
  } else {
    if (entry->spec.layer_index != record.access_point.layer_index) {
      throw SchemaError("access point " + record.access_point.point_name + " has layer_index " +
                        std::to_string(entry->spec.layer_index) + " and " +
                        std::to_string(record.access_point.layer_index));
    }
    if (entry->spec.artifact_kind != record.access_point.artifact_kind) {
      throw SchemaError("access point " + record.access_point.point_name + " has conflicting artifact kinds");
    }
    if (entry->dimension != record.vector.size()) {
      throw SchemaError("dimension mismatch at access point " + record.access_point.point_name + ": expected " +
                        std::to_string(entry->dimension) + ", record " + describe(record) + " has " +
                        std::to_string(record.vector.size()));
    }
  }
  ++entry->row_count;
  ++schema_.row_count;
  pending_.push_back(record);
  if (pending_.size() >= row_group_rows_) flush_row_group();
}

void FeatureTableWriter::flush_row_group() {
  if (pending_.empty()) return;
  const auto& leaves = parquet_->leaves;
  std::vector<pq::ColumnChunkInput> cols(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) cols[i].leaf = leaves[i];
  auto& model = cols[0];
  auto& point = cols[1];
  auto& layer = cols[2];
  auto& sample = cols[3];
  auto& token = cols[4];
  auto& vec = cols[5];
  auto& obj = cols[6];
  auto& box = cols[7];

  for (const auto& r : pending_) {
    put_string(model.plain_values, r.access_point.model_id);
    put_string(point.plain_values, r.access_point.point_name);
    put(layer.plain_values, static_cast<std::int32_t>(r.access_point.layer_index));
    put_string(sample.plain_values, r.sample_id);
    put(token.plain_values, static_cast<std::int32_t>(r.token_index));
    for (std::size_t k = 0; k < r.vector.size(); ++k) {
      vec.rep_levels.push_back(k == 0 ? 0 : 1);
      vec.def_levels.push_back(1);
      if (dtype_ == Dtype::f32) {
        put(vec.plain_values, static_cast<float>(r.vector[k]));
      } else {
        put(vec.plain_values, r.vector[k]);
      }
    }
    vec.num_entries += static_cast<std::int64_t>(r.vector.size());
    if (r.aux.objectness) {
      obj.def_levels.push_back(1);
      put(obj.plain_values, *r.aux.objectness);
    } else {
      obj.def_levels.push_back(0);
    }
    if (r.aux.box) {
      for (std::size_t k = 0; k < 4; ++k) {
        box.rep_levels.push_back(k == 0 ? 0 : 1);
        box.def_levels.push_back(2);
        put(box.plain_values, (*r.aux.box)[k]);
      }
      box.num_entries += 4;
    } else {
      box.rep_levels.push_back(0);
      box.def_levels.push_back(0);
      box.num_entries += 1;
    }
  }
  const auto rows = static_cast<std::int64_t>(pending_.size());
  for (std::size_t i = 0; i < 5; ++i) cols[i].num_entries = rows;
  obj.num_entries = rows;
  parquet_->writer->write_row_group(rows, std::move(cols));
  pending_.clear();
}

FeatureTableSchema FeatureTableWriter::finish() {
  if (finished_) return schema_;
  if (schema_.row_count == 0) throw DataError("refusing to write empty table " + dir_.string());
  flush_row_group();
  parquet_->writer->finish({{kSchemaKey, to_json(schema_).dump()}}, kCreatedBy);
  parquet_->out.flush();
  if (!parquet_->out) throw IoError("write failed: " + tmp_path_.string());
  parquet_->out.close();
  std::error_code ec;
  fs::rename(tmp_path_, dir_ / kDataFileName, ec);
  if (ec) throw IoError("cannot move table into place at " + dir_.string() + ": " + ec.message());
  write_json(dir_ / kSchemaFileName, to_json(schema_));
  finished_ = true;
  release();
  return schema_;
}

FeatureTableSchema write_table(const std::vector<FeatureRecord>& records, const fs::path& dir, Dtype dtype,
                               std::size_t row_group_rows) {
  if (records.empty()) throw DataError("write_table needs at least one record");
  FeatureTableWriter writer(dir, dtype, row_group_rows);
  for (const auto& r : records) writer.append(r);
  return writer.finish();
}

// ---------------------------------------------------------------- reader

struct BatchStream::TableState {
  fs::path dir;
  std::unique_ptr<pq::FileReader> file;
  FeatureTableSchema schema;
  std::vector<std::string> warnings;
  // leaf index per logical column; aux columns may be absent
  std::size_t model_leaf = 0, point_leaf = 0, layer_leaf = 0, sample_leaf = 0, token_leaf = 0, vector_leaf = 0;
  std::optional<std::size_t> objectness_leaf, box_leaf;

  std::vector<FeatureRecord> read_group(std::istream& in, std::size_t group, const AccessPointFilter& filter) const;
};

namespace {

template <typename T>
const std::vector<T>& values_as(const pq::ColumnData& col, const std::string& name) {
  const auto* v = std::get_if<std::vector<T>>(&col.values);
  if (v == nullptr) throw DataError("column " + name + " has an unexpected physical type");
  return *v;
}

/// Expands a scalar column to one optional per row.
template <typename T>
std::vector<std::optional<T>> scalar_rows(const pq::ColumnData& col, const pq::LeafDescriptor& leaf,
                                          std::size_t rows, const std::string& name) {
  const auto& values = values_as<T>(col, name);
  std::vector<std::optional<T>> out;
  out.reserve(rows);
  if (leaf.max_def == 0) {
    for (const auto& v : values) out.emplace_back(v);
  } else {
    std::size_t next = 0;
    for (auto d : col.def_levels) {
      if (d == leaf.max_def) {
        out.emplace_back(values.at(next++));
      } else {
        out.emplace_back(std::nullopt);
      }
    }
  }
  if (out.size() != rows) throw DataError("column " + name + " has " + std::to_string(out.size()) + " rows, expected " + std::to_string(rows));
  return out;
}

/// Expands a list column of floating values to one optional vector per row.
template <typename T>
std::vector<std::optional<std::vector<T>>> list_rows(const pq::ColumnData& col, const pq::LeafDescriptor& leaf,
                                                     std::size_t rows, const std::string& name) {
  const auto& values = values_as<T>(col, name);
  std::vector<std::optional<std::vector<T>>> out;
  out.reserve(rows);
  std::size_t next = 0;
  for (std::size_t i = 0; i < col.def_levels.size(); ++i) {
    const auto d = col.def_levels[i];
    const auto r = leaf.max_rep > 0 ? col.rep_levels.at(i) : 0;
    if (r == 0) {
      if (d < leaf.list_defined) {
        out.emplace_back(std::nullopt);
        continue;
      }
      out.emplace_back(std::vector<T>{});
    }
    if (out.empty() || !out.back()) throw DataError("column " + name + " has malformed repetition levels");
    if (d < leaf.list_nonempty) continue;
    if (d < leaf.max_def) throw DataError("column " + name + " contains a null element");
    out.back()->push_back(values.at(next++));
  }
  if (out.size() != rows) throw DataError("column " + name + " has " + std::to_string(out.size()) + " rows, expected " + std::to_string(rows));
  return out;
}

template <typename T>
std::vector<std::optional<std::vector<double>>> widen_rows(std::vector<std::optional<std::vector<T>>> in) {
  std::vector<std::optional<std::vector<double>>> out;
  out.reserve(in.size());
  for (auto& row : in) {
    if (!row) {
      out.emplace_back(std::nullopt);
    } else {
      out.emplace_back(std::vector<double>(row->begin(), row->end()));
    }
  }
  return out;
}

}  // namespace

std::vector<FeatureRecord> BatchStream::TableState::read_group(std::istream& in, std::size_t group,
                                                               const AccessPointFilter& filter) const {
  const auto rows = static_cast<std::size_t>(file->meta().row_groups.at(group).num_rows);
  const auto& leaves = file->leaves();
  const auto read = [&](std::size_t leaf) { return file->read_column(in, group, leaf); };

  const auto points = scalar_rows<std::string>(read(point_leaf), leaves[point_leaf], rows, "point_name");
  const auto models = scalar_rows<std::string>(read(model_leaf), leaves[model_leaf], rows, "model_id");
  std::vector<char> keep(rows, 0);
  bool any = false;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!points[i] || !models[i]) throw DataError("null model_id/point_name in " + dir.string());
    const bool match = (!filter.model_id || *filter.model_id == *models[i]) &&
                       (!filter.point_name || *filter.point_name == *points[i]);
    keep[i] = match ? 1 : 0;
    any = any || match;
  }
  if (!any) return {};

  const auto layers = scalar_rows<std::int32_t>(read(layer_leaf), leaves[layer_leaf], rows, "layer_index");
  const auto samples = scalar_rows<std::string>(read(sample_leaf), leaves[sample_leaf], rows, "sample_id");
  const auto tokens = scalar_rows<std::int32_t>(read(token_leaf), leaves[token_leaf], rows, "token_index");
  const auto vec_col = read(vector_leaf);
  const auto vectors = leaves[vector_leaf].type == pq::PhysicalType::float32
                           ? widen_rows(list_rows<float>(vec_col, leaves[vector_leaf], rows, "vector"))
                           : list_rows<double>(vec_col, leaves[vector_leaf], rows, "vector");
  std::vector<std::optional<float>> objectness(rows);
  if (objectness_leaf) {
    objectness = scalar_rows<float>(read(*objectness_leaf), leaves[*objectness_leaf], rows, "aux_objectness");
  }
  std::vector<std::optional<std::vector<float>>> boxes(rows);
  if (box_leaf) boxes = list_rows<float>(read(*box_leaf), leaves[*box_leaf], rows, "aux_box");

  std::vector<FeatureRecord> out;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!keep[i]) continue;
    FeatureRecord rec;
    rec.access_point.model_id = *models[i];
    rec.access_point.point_name = *points[i];
    if (!layers[i] || !samples[i] || !tokens[i] || !vectors[i]) {
      throw DataError("null required field in row " + std::to_string(i) + " of " + dir.string());
    }
    rec.access_point.layer_index = static_cast<std::uint16_t>(*layers[i]);
    if (const auto* ap = schema.find(rec.access_point.model_id, rec.access_point.point_name)) {
      rec.access_point.artifact_kind = ap->spec.artifact_kind;
    }
    rec.sample_id = *samples[i];
    rec.token_index = static_cast<std::uint32_t>(*tokens[i]);
    rec.vector = *vectors[i];
    rec.aux.objectness = objectness[i];
    if (boxes[i]) {
      if (boxes[i]->size() != 4) throw DataError("aux_box with " + std::to_string(boxes[i]->size()) + " entries in " + dir.string());
      rec.aux.box = NormBox{(*boxes[i])[0], (*boxes[i])[1], (*boxes[i])[2], (*boxes[i])[3]};
    }
    out.push_back(std::move(rec));
  }
  return out;
}

namespace {

/// Rebuilds the schema by scanning when the sidecar is unavailable.
FeatureTableSchema scan_schema(const BatchStream::TableState& state, Dtype dtype) {
  FeatureTableSchema schema;
  schema.dtype = dtype;
  std::ifstream in(state.file->path(), std::ios::binary);
  for (std::size_t g = 0; g < state.file->meta().row_groups.size(); ++g) {
    for (const auto& r : state.read_group(in, g, {})) {
      AccessPointSchema* entry = nullptr;
      for (auto& ap : schema.access_points) {
        if (ap.spec.same_location(r.access_point)) entry = &ap;
      }
      if (entry == nullptr) {
        schema.access_points.push_back({r.access_point, static_cast<std::uint32_t>(r.vector.size()), 0});
        entry = &schema.access_points.back();
      }
      ++entry->row_count;
      ++schema.row_count;
    }
  }
  return schema;
}

}  // namespace

FeatureTable FeatureTable::open(const fs::path& dir) {
  auto state = std::make_shared<BatchStream::TableState>();
  state->dir = dir;
  const fs::path data = dir / kDataFileName;
  if (!fs::exists(data)) throw IoError("feature table " + dir.string() + " has no " + kDataFileName);
  state->file = std::make_unique<pq::FileReader>(data);

  const auto need = [&](const char* name) {
    auto leaf = state->file->find_leaf(name);
    if (!leaf) throw SchemaError(data.string() + " lacks required column '" + name + "'");
    return *leaf;
  };
  state->model_leaf = need("model_id");
  state->point_leaf = need("point_name");
  state->layer_leaf = need("layer_index");
  state->sample_leaf = need("sample_id");
  state->token_leaf = need("token_index");
  state->vector_leaf = need("vector");
  state->objectness_leaf = state->file->find_leaf("aux_objectness");
  state->box_leaf = state->file->find_leaf("aux_box");
  if (!state->objectness_leaf) state->warnings.push_back("column aux_objectness absent; treated as all-null");
  if (!state->box_leaf) state->warnings.push_back("column aux_box absent; treated as all-null");

  const auto vec_type = state->file->leaves()[state->vector_leaf].type;
  if (vec_type != pq::PhysicalType::float32 && vec_type != pq::PhysicalType::float64) {
    throw SchemaError(data.string() + " vector column must hold float or double values");
  }
  const Dtype dtype = vec_type == pq::PhysicalType::float32 ? Dtype::f32 : Dtype::f64;

  const fs::path sidecar = dir / kSchemaFileName;
  if (fs::exists(sidecar)) {
    state->schema = schema_from_json(read_json(sidecar));
  } else {
    state->warnings.push_back(std::string(kSchemaFileName) + " missing; schema rebuilt from data");
    bool from_meta = false;
    for (const auto& [k, v] : state->file->meta().key_value) {
      if (k == kSchemaKey) {
        state->schema = schema_from_json(nlohmann::json::parse(v));
        from_meta = true;
      }
    }
    if (!from_meta) state->schema = scan_schema(*state, dtype);
  }
  if (state->schema.dtype != dtype) {
    throw SchemaError(sidecar.string() + " declares dtype " + std::string(to_string(state->schema.dtype)) +
                      " but data holds " + std::string(to_string(dtype)));
  }
  if (state->schema.row_count != static_cast<std::uint64_t>(state->file->meta().num_rows)) {
    throw DataError(dir.string() + ": schema row_count " + std::to_string(state->schema.row_count) +
                    " disagrees with data row count " + std::to_string(state->file->meta().num_rows));
  }
  return FeatureTable(std::move(state));
}

const FeatureTableSchema& FeatureTable::schema() const { return state_->schema; }
const std::vector<std::string>& FeatureTable::warnings() const { return state_->warnings; }
std::size_t FeatureTable::row_group_count() const { return state_->file->meta().row_groups.size(); }

BatchStream FeatureTable::stream(const StreamOptions& options) const { return BatchStream(state_, options); }

std::vector<FeatureRecord> FeatureTable::read_all(const AccessPointFilter& filter) const {
  std::vector<FeatureRecord> out;
  std::ifstream in(state_->file->path(), std::ios::binary);
  if (!in) throw IoError("cannot open " + state_->file->path().string());
  for (std::size_t g = 0; g < row_group_count(); ++g) {
    auto part = state_->read_group(in, g, filter);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

BatchStream::BatchStream(std::shared_ptr<const TableState> table, StreamOptions options)
    : table_(std::move(table)), options_(std::move(options)) {
  if (options_.batch_size == 0) throw ConfigError("batch_size", "must be >= 1");
  in_.open(table_->file->path(), std::ios::binary);
  if (!in_) throw IoError("cannot open " + table_->file->path().string());

  bool known = false;
  for (const auto& ap : table_->schema.access_points) known = known || options_.filter.matches(ap.spec);
  if (!known) {
    std::string what = options_.filter.point_name.value_or("*");
    if (options_.filter.model_id) what = *options_.filter.model_id + "/" + what;
    warning_ = "no access point matches '" + what + "' in " + table_->dir.string();
    return;
  }
  group_order_.resize(table_->file->meta().row_groups.size());
  std::iota(group_order_.begin(), group_order_.end(), std::size_t{0});
  if (options_.shuffle_seed) {
    rng_.emplace(*options_.shuffle_seed);
    rng_->shuffle(std::span<std::size_t>(group_order_));
  }
}

bool BatchStream::load_next_group() {
  while (next_group_ < group_order_.size()) {
    buffered_ = table_->read_group(in_, group_order_[next_group_++], options_.filter);
    buffered_pos_ = 0;
    if (buffered_.empty()) continue;
    if (rng_) rng_->shuffle(std::span<FeatureRecord>(buffered_));
    return true;
  }
  return false;
}

std::optional<RecordBatch> BatchStream::next() {
  std::vector<FeatureRecord> batch;
  batch.reserve(options_.batch_size);
  while (batch.size() < options_.batch_size) {
    if (buffered_pos_ >= buffered_.size()) {
      buffered_.clear();
      if (!load_next_group()) break;
    }
    batch.push_back(std::move(buffered_[buffered_pos_++]));
  }
  if (batch.empty()) return std::nullopt;
  return RecordBatch(std::move(batch));
}

}  // namespace prism::store
