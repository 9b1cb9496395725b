#pragma once

// A self-contained subset of the Apache Parquet file format.
//
// Writing: data page v1, PLAIN values, RLE levels, no compression.
// Reading: data page v1 and v2, PLAIN and dictionary encodings, uncompressed
// or Snappy. That covers what pyarrow emits with default settings.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace prism::store::parquet {

enum class PhysicalType : std::int32_t {
  boolean = 0,
  int32 = 1,
  int64 = 2,
  int96 = 3,
  float32 = 4,
  float64 = 5,
  byte_array = 6,
  fixed_len_byte_array = 7,
};

enum class Repetition : std::int32_t { required = 0, optional = 1, repeated = 2 };

/// Annotation written both as a legacy ConvertedType and as a LogicalType.
enum class Annotation { none, string, list, uint16, uint32 };

struct SchemaElement {
  std::string name;
  std::optional<PhysicalType> type;  // absent for groups
  Repetition repetition = Repetition::required;
  std::int32_t num_children = 0;
  Annotation annotation = Annotation::none;
};

struct ColumnMeta {
  PhysicalType type = PhysicalType::int32;
  std::vector<std::int32_t> encodings;
  std::vector<std::string> path;
  std::int32_t codec = 0;
  std::int64_t num_values = 0;
  std::int64_t total_uncompressed_size = 0;
  std::int64_t total_compressed_size = 0;
  std::int64_t data_page_offset = 0;
  std::optional<std::int64_t> dictionary_page_offset;
};

struct RowGroupMeta {
  std::vector<ColumnMeta> columns;
  std::int64_t total_byte_size = 0;
  std::int64_t num_rows = 0;
};

struct FileMeta {
  std::int32_t version = 1;
  std::vector<SchemaElement> schema;  // depth-first, root first
  std::int64_t num_rows = 0;
  std::vector<RowGroupMeta> row_groups;
  std::vector<std::pair<std::string, std::string>> key_value;
  std::string created_by;
};

std::string encode_file_meta(const FileMeta& meta);
FileMeta decode_file_meta(const std::uint8_t* data, std::size_t size);

/// A leaf column resolved from the schema tree.
struct LeafDescriptor {
  std::vector<std::string> path;
  PhysicalType type = PhysicalType::int32;
  std::int16_t max_def = 0;
  std::int16_t max_rep = 0;
  /// List columns only: a definition level below `list_defined` means the
  /// list is null, below `list_nonempty` that it is empty, and below
  /// `max_def` that the element is null.
  std::int16_t list_defined = 0;
  std::int16_t list_nonempty = 0;
};

std::vector<LeafDescriptor> resolve_leaves(const std::vector<SchemaElement>& schema);

using Values = std::variant<std::vector<std::int32_t>, std::vector<std::int64_t>, std::vector<float>,
                            std::vector<double>, std::vector<std::string>>;

/// Decoded contents of one column chunk. `values` holds only non-null leaves.
struct ColumnData {
  std::vector<std::int16_t> def_levels;
  std::vector<std::int16_t> rep_levels;
  Values values;
};

/// Column chunk ready for writing; `plain_values` is PLAIN-encoded.
struct ColumnChunkInput {
  LeafDescriptor leaf;
  std::vector<std::int16_t> def_levels;
  std::vector<std::int16_t> rep_levels;
  std::string plain_values;
  std::int64_t num_entries = 0;  // level entries (rows + list elements + nulls)
};

class FileWriter {
 public:
  FileWriter(std::ostream& out, std::vector<SchemaElement> schema);

  void write_row_group(std::int64_t num_rows, std::vector<ColumnChunkInput> columns);
  /// Writes the footer. `key_value` goes into the file metadata.
  void finish(std::vector<std::pair<std::string, std::string>> key_value, std::string created_by);

 private:
  std::ostream& out_;
  std::int64_t offset_ = 0;
  FileMeta meta_;
};

/// Parsed footer; immutable, so one instance may serve many threads, each
/// reading through its own stream.
class FileReader {
 public:
  explicit FileReader(const std::filesystem::path& path);

  const FileMeta& meta() const { return meta_; }
  const std::vector<LeafDescriptor>& leaves() const { return leaves_; }
  const std::filesystem::path& path() const { return path_; }

  /// Index into leaves() of the leaf whose path starts with `top`, if any.
  std::optional<std::size_t> find_leaf(const std::string& top) const;

  ColumnData read_column(std::istream& in, std::size_t row_group, std::size_t leaf) const;

 private:
  std::filesystem::path path_;
  FileMeta meta_;
  std::vector<LeafDescriptor> leaves_;
};

/// Snappy raw-format decompression.
std::string snappy_decompress(const std::uint8_t* data, std::size_t size);

}  // namespace prism::store::parquet
