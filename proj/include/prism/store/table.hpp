#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "prism/core/rng.hpp"
#include "prism/store/types.hpp"

namespace prism::store {

/// A feature table is a directory holding `data.parquet` and its `schema.json`
/// sidecar.
inline constexpr const char* kDataFileName = "data.parquet";
inline constexpr const char* kSchemaFileName = "schema.json";
inline constexpr std::size_t kDefaultRowGroupRows = 4096;

/// Streams records into a table, one row group at a time. Both files appear
/// atomically on finish(); an unfinished writer leaves nothing behind. Only
/// one writer may hold a table directory at a time.
class FeatureTableWriter {
 public:
  FeatureTableWriter(std::filesystem::path dir, Dtype dtype,
                     std::size_t row_group_rows = kDefaultRowGroupRows);
  ~FeatureTableWriter();

  FeatureTableWriter(const FeatureTableWriter&) = delete;
  FeatureTableWriter& operator=(const FeatureTableWriter&) = delete;

  void append(const FeatureRecord& record);
  FeatureTableSchema finish();

 private:
  void flush_row_group();
  void release();

  std::filesystem::path dir_;
  std::filesystem::path tmp_path_;
  std::filesystem::path lock_path_;
  Dtype dtype_;
  std::size_t row_group_rows_;
  std::vector<FeatureRecord> pending_;
  FeatureTableSchema schema_;
  struct ParquetState;
  std::unique_ptr<ParquetState> parquet_;
  bool finished_ = false;
};

FeatureTableSchema write_table(const std::vector<FeatureRecord>& records, const std::filesystem::path& dir,
                               Dtype dtype = Dtype::f32, std::size_t row_group_rows = kDefaultRowGroupRows);

struct AccessPointFilter {
  std::optional<std::string> model_id;
  std::optional<std::string> point_name;

  bool matches(const AccessPointSpec& spec) const {
    return (!model_id || *model_id == spec.model_id) && (!point_name || *point_name == spec.point_name);
  }
};

struct StreamOptions {
  AccessPointFilter filter;
  std::size_t batch_size = 256;
  /// When set, row groups and the rows inside each group are visited in a
  /// seeded random order. The same seed always yields the same batches.
  std::optional<std::uint64_t> shuffle_seed;
};

/// Immutable batch; cheap to copy and safe to hand to another thread.
class RecordBatch {
 public:
  explicit RecordBatch(std::vector<FeatureRecord> records)
      : records_(std::make_shared<const std::vector<FeatureRecord>>(std::move(records))) {}

  std::size_t size() const { return records_->size(); }
  const FeatureRecord& operator[](std::size_t i) const { return (*records_)[i]; }
  auto begin() const { return records_->begin(); }
  auto end() const { return records_->end(); }

 private:
  std::shared_ptr<const std::vector<FeatureRecord>> records_;
};

class FeatureTable;

/// One epoch over the matching records of a table. Holds at most one decoded
/// row group plus the batch under construction.
class BatchStream {
 public:
  std::optional<RecordBatch> next();

  /// Set when the filter names no access point in the table; the stream is
  /// then empty rather than failing.
  const std::optional<std::string>& warning() const { return warning_; }

  /// Opaque shared state of an open table.
  struct TableState;

 private:
  friend class FeatureTable;
  BatchStream(std::shared_ptr<const TableState> table, StreamOptions options);
  bool load_next_group();

  std::shared_ptr<const TableState> table_;
  StreamOptions options_;
  std::ifstream in_;
  std::vector<std::size_t> group_order_;
  std::size_t next_group_ = 0;
  std::vector<FeatureRecord> buffered_;
  std::size_t buffered_pos_ = 0;
  std::optional<Rng> rng_;
  std::optional<std::string> warning_;
};

/// Read side of a table. Opening parses only the footer and sidecar; the
/// handle is immutable and may be shared across threads.
class FeatureTable {
 public:
  static FeatureTable open(const std::filesystem::path& dir);

  const FeatureTableSchema& schema() const;
  /// Non-fatal findings from open(), e.g. a missing sidecar.
  const std::vector<std::string>& warnings() const;
  std::size_t row_group_count() const;

  BatchStream stream(const StreamOptions& options) const;

  /// Every matching record in on-disk order.
  std::vector<FeatureRecord> read_all(const AccessPointFilter& filter = {}) const;

 private:
  explicit FeatureTable(std::shared_ptr<const BatchStream::TableState> state) : state_(std::move(state)) {}
  std::shared_ptr<const BatchStream::TableState> state_;
};

}  // namespace prism::store
