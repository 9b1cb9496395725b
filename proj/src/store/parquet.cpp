#include "prism/store/parquet.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "prism/core/error.hpp"
#include "thrift_compact.hpp"

namespace prism::store::parquet {

namespace {

using thrift::CompactReader;
using thrift::CompactWriter;

static_assert(std::endian::native == std::endian::little, "parquet codec assumes a little-endian host");

constexpr char kMagic[] = "PAR1";
constexpr std::int32_t kEncodingPlain = 0;
constexpr std::int32_t kEncodingPlainDictionary = 2;
constexpr std::int32_t kEncodingRle = 3;
constexpr std::int32_t kEncodingRleDictionary = 8;
constexpr std::int32_t kCodecUncompressed = 0;
constexpr std::int32_t kCodecSnappy = 1;
constexpr std::int32_t kPageData = 0;
constexpr std::int32_t kPageDictionary = 2;
constexpr std::int32_t kPageDataV2 = 3;

[[noreturn]] void corrupt(const std::string& why) { throw DataError("corrupt parquet file: " + why); }

// ---------------------------------------------------------------- metadata

void encode_schema_element(CompactWriter& w, const SchemaElement& e, bool is_root) {
  w.begin_struct();
  if (e.type) w.field_i32(1, static_cast<std::int32_t>(*e.type));
  if (!is_root) w.field_i32(3, static_cast<std::int32_t>(e.repetition));
  w.field_binary(4, e.name);
  if (!e.type) w.field_i32(5, e.num_children);
  switch (e.annotation) {
    case Annotation::none:
      break;
    case Annotation::string:
      w.field_i32(6, 0);
      w.field_struct(10);
      w.field_struct(1);
      w.end_struct();
      w.end_struct();
      break;
    case Annotation::list:
      w.field_i32(6, 3);
      w.field_struct(10);
      w.field_struct(3);
      w.end_struct();
      w.end_struct();
      break;
    case Annotation::uint16:
    case Annotation::uint32:
      w.field_i32(6, e.annotation == Annotation::uint16 ? 12 : 13);
      w.field_struct(10);
      w.field_struct(10);
      w.field_byte(1, e.annotation == Annotation::uint16 ? 16 : 32);
      w.field_bool(2, false);
      w.end_struct();
      w.end_struct();
      break;
  }
  w.end_struct();
}

// Body only; the caller opens and closes the struct.
void encode_column_meta_fields(CompactWriter& w, const ColumnMeta& c) {
  w.field_i32(1, static_cast<std::int32_t>(c.type));
  w.field_list(2, thrift::kI32, c.encodings.size());
  for (auto e : c.encodings) w.element_i32(e);
  w.field_list(3, thrift::kBinary, c.path.size());
  for (const auto& p : c.path) w.binary(p);
  w.field_i32(4, c.codec);
  w.field_i64(5, c.num_values);
  w.field_i64(6, c.total_uncompressed_size);
  w.field_i64(7, c.total_compressed_size);
  w.field_i64(9, c.data_page_offset);
  if (c.dictionary_page_offset) w.field_i64(11, *c.dictionary_page_offset);
}

Annotation annotation_from_converted(std::int32_t converted) {
  switch (converted) {
    case 0:
      return Annotation::string;
    case 3:
      return Annotation::list;
    case 12:
      return Annotation::uint16;
    case 13:
      return Annotation::uint32;
    default:
      return Annotation::none;
  }
}

SchemaElement decode_schema_element(CompactReader& r) {
  SchemaElement e;
  e.repetition = Repetition::required;
  r.read_struct([&](std::int16_t id, thrift::Type) {
    switch (id) {
      case 1:
        e.type = static_cast<PhysicalType>(r.read_i32());
        return true;
      case 3:
        e.repetition = static_cast<Repetition>(r.read_i32());
        return true;
      case 4:
        e.name = r.read_binary();
        return true;
      case 5:
        e.num_children = r.read_i32();
        return true;
      case 6:
        e.annotation = annotation_from_converted(r.read_i32());
        return true;
      default:
        return false;
    }
  });
  return e;
}

ColumnMeta decode_column_meta(CompactReader& r) {
  ColumnMeta c;
  r.read_struct([&](std::int16_t id, thrift::Type) {
    switch (id) {
      case 1:
        c.type = static_cast<PhysicalType>(r.read_i32());
        return true;
      case 2: {
        auto [t, n] = r.read_list_header();
        for (std::size_t i = 0; i < n; ++i) c.encodings.push_back(r.read_i32());
        return true;
      }
      case 3: {
        auto [t, n] = r.read_list_header();
        for (std::size_t i = 0; i < n; ++i) c.path.push_back(r.read_binary());
        return true;
      }
      case 4:
        c.codec = r.read_i32();
        return true;
      case 5:
        c.num_values = r.read_i64();
        return true;
      case 6:
        c.total_uncompressed_size = r.read_i64();
        return true;
      case 7:
        c.total_compressed_size = r.read_i64();
        return true;
      case 9:
        c.data_page_offset = r.read_i64();
        return true;
      case 11:
        c.dictionary_page_offset = r.read_i64();
        return true;
      default:
        return false;
    }
  });
  return c;
}

RowGroupMeta decode_row_group(CompactReader& r) {
  RowGroupMeta g;
  r.read_struct([&](std::int16_t id, thrift::Type) {
    switch (id) {
      case 1: {
        auto [t, n] = r.read_list_header();
        for (std::size_t i = 0; i < n; ++i) {
          ColumnMeta meta;
          bool has_meta = false;
          r.read_struct([&](std::int16_t cid, thrift::Type) {
            if (cid == 3) {
              meta = decode_column_meta(r);
              has_meta = true;
              return true;
            }
            return false;
          });
          if (!has_meta) corrupt("column chunk without inline metadata");
          g.columns.push_back(std::move(meta));
        }
        return true;
      }
      case 2:
        g.total_byte_size = r.read_i64();
        return true;
      case 3:
        g.num_rows = r.read_i64();
        return true;
      default:
        return false;
    }
  });
  return g;
}

// ---------------------------------------------------------------- pages

struct PageHeader {
  std::int32_t type = -1;
  std::int32_t uncompressed_size = 0;
  std::int32_t compressed_size = 0;
  std::int32_t num_values = 0;
  std::int32_t encoding = kEncodingPlain;
  // v2 only
  std::int32_t def_bytes = 0;
  std::int32_t rep_bytes = 0;
  bool v2_compressed = true;
};

PageHeader decode_page_header(CompactReader& r) {
  PageHeader h;
  r.read_struct([&](std::int16_t id, thrift::Type) {
    switch (id) {
      case 1:
        h.type = r.read_i32();
        return true;
      case 2:
        h.uncompressed_size = r.read_i32();
        return true;
      case 3:
        h.compressed_size = r.read_i32();
        return true;
      case 5:
        r.read_struct([&](std::int16_t fid, thrift::Type) {
          if (fid == 1) {
            h.num_values = r.read_i32();
            return true;
          }
          if (fid == 2) {
            h.encoding = r.read_i32();
            return true;
          }
          return false;
        });
        return true;
      case 7:
        r.read_struct([&](std::int16_t fid, thrift::Type) {
          if (fid == 1) {
            h.num_values = r.read_i32();
            return true;
          }
          if (fid == 2) {
            h.encoding = r.read_i32();
            return true;
          }
          return false;
        });
        return true;
      case 8:
        r.read_struct([&](std::int16_t fid, thrift::Type type) {
          switch (fid) {
            case 1:
              h.num_values = r.read_i32();
              return true;
            case 4:
              h.encoding = r.read_i32();
              return true;
            case 5:
              h.def_bytes = r.read_i32();
              return true;
            case 6:
              h.rep_bytes = r.read_i32();
              return true;
            case 7:
              h.v2_compressed = r.bool_value(type);
              return true;
            default:
              return false;
          }
        });
        return true;
      default:
        return false;
    }
  });
  return h;
}

int bit_width(std::uint32_t max_value) { return static_cast<int>(std::bit_width(max_value)); }

void append_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

void append_varint(std::string& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<char>((v & 0x7f) | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<char>(v));
}

/// RLE/bit-packed hybrid, written as RLE runs only.
std::string encode_levels(const std::vector<std::int16_t>& levels, int width) {
  std::string out;
  const int value_bytes = (width + 7) / 8;
  std::size_t i = 0;
  while (i < levels.size()) {
    std::size_t j = i;
    while (j < levels.size() && levels[j] == levels[i]) ++j;
    append_varint(out, static_cast<std::uint64_t>(j - i) << 1);
    const auto v = static_cast<std::uint32_t>(levels[i]);
    for (int b = 0; b < value_bytes; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
    i = j;
  }
  return out;
}

class ByteCursor {
 public:
  ByteCursor(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::size_t remaining() const { return size_ - pos_; }
  const std::uint8_t* here() const { return data_ + pos_; }
  void advance(std::size_t n) {
    if (n > remaining()) corrupt("page data truncated");
    pos_ += n;
  }
  std::uint8_t byte() {
    if (pos_ >= size_) corrupt("page data truncated");
    return data_[pos_++];
  }
  std::uint32_t u32() {
    if (remaining() < 4) corrupt("page data truncated");
    std::uint32_t v;
    std::memcpy(&v, here(), 4);
    pos_ += 4;
    return v;
  }
  std::uint64_t varint() {
    std::uint64_t result = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const std::uint8_t b = byte();
      result |= static_cast<std::uint64_t>(b & 0x7f) << shift;
      if ((b & 0x80) == 0) return result;
    }
    corrupt("varint too long");
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

/// Decodes `count` values of the RLE/bit-packed hybrid encoding.
template <typename T>
void decode_hybrid(ByteCursor& in, int width, std::size_t count, std::vector<T>& out) {
  const std::size_t start = out.size();
  const int value_bytes = (width + 7) / 8;
  while (out.size() - start < count) {
    const std::uint64_t header = in.varint();
    if (header & 1) {
      const std::size_t groups = static_cast<std::size_t>(header >> 1);
      const std::size_t bytes = groups * static_cast<std::size_t>(width);
      if (bytes > in.remaining()) corrupt("bit-packed run overruns page");
      const std::uint8_t* p = in.here();
      for (std::size_t k = 0; k < groups * 8 && out.size() - start < count; ++k) {
        std::uint64_t v = 0;
        const std::size_t bit = k * static_cast<std::size_t>(width);
        for (int b = 0; b < width; ++b) {
          const std::size_t pos = bit + static_cast<std::size_t>(b);
          v |= static_cast<std::uint64_t>((p[pos / 8] >> (pos % 8)) & 1) << b;
        }
        out.push_back(static_cast<T>(v));
      }
      in.advance(bytes);
    } else {
      const std::size_t run = static_cast<std::size_t>(header >> 1);
      std::uint64_t v = 0;
      for (int b = 0; b < value_bytes; ++b) v |= static_cast<std::uint64_t>(in.byte()) << (8 * b);
      if (run == 0) corrupt("empty RLE run");
      for (std::size_t k = 0; k < run && out.size() - start < count; ++k) out.push_back(static_cast<T>(v));
    }
  }
}

Values empty_values(PhysicalType type) {
  switch (type) {
    case PhysicalType::int32:
      return std::vector<std::int32_t>{};
    case PhysicalType::int64:
      return std::vector<std::int64_t>{};
    case PhysicalType::float32:
      return std::vector<float>{};
    case PhysicalType::float64:
      return std::vector<double>{};
    case PhysicalType::byte_array:
      return std::vector<std::string>{};
    default:
      throw DataError("unsupported parquet physical type " + std::to_string(static_cast<int>(type)));
  }
}

void decode_plain(ByteCursor& in, std::size_t count, Values& values) {
  std::visit(
      [&](auto& vec) {
        using T = typename std::decay_t<decltype(vec)>::value_type;
        if constexpr (std::is_same_v<T, std::string>) {
          for (std::size_t i = 0; i < count; ++i) {
            const std::uint32_t len = in.u32();
            if (len > in.remaining()) corrupt("byte array overruns page");
            vec.emplace_back(reinterpret_cast<const char*>(in.here()), len);
            in.advance(len);
          }
        } else {
          if (count * sizeof(T) > in.remaining()) corrupt("plain values overrun page");
          const std::size_t old = vec.size();
          vec.resize(old + count);
          std::memcpy(vec.data() + old, in.here(), count * sizeof(T));
          in.advance(count * sizeof(T));
        }
      },
      values);
}

void gather_dictionary(const Values& dictionary, const std::vector<std::uint32_t>& indices, Values& out) {
  std::visit(
      [&](auto& vec) {
        using V = std::decay_t<decltype(vec)>;
        const auto* dict = std::get_if<V>(&dictionary);
        if (dict == nullptr) corrupt("dictionary type mismatch");
        for (auto idx : indices) {
          if (idx >= dict->size()) corrupt("dictionary index out of range");
          vec.push_back((*dict)[idx]);
        }
      },
      out);
}

std::string decompress(std::int32_t codec, const std::uint8_t* data, std::size_t size,
                       std::size_t expected) {
  if (codec == kCodecUncompressed) return std::string(reinterpret_cast<const char*>(data), size);
  if (codec == kCodecSnappy) {
    std::string out = snappy_decompress(data, size);
    if (out.size() != expected) corrupt("snappy page size mismatch");
    return out;
  }
  throw DataError("unsupported parquet compression codec " + std::to_string(codec) +
                  " (supported: uncompressed, snappy)");
}

}  // namespace

// ---------------------------------------------------------------- public

std::string encode_file_meta(const FileMeta& meta) {
  CompactWriter w;
  w.begin_struct();
  w.field_i32(1, meta.version);
  w.field_list(2, thrift::kStruct, meta.schema.size());
  for (std::size_t i = 0; i < meta.schema.size(); ++i) encode_schema_element(w, meta.schema[i], i == 0);
  w.field_i64(3, meta.num_rows);
  w.field_list(4, thrift::kStruct, meta.row_groups.size());
  for (const auto& g : meta.row_groups) {
    w.begin_struct();
    w.field_list(1, thrift::kStruct, g.columns.size());
    for (const auto& c : g.columns) {
      w.begin_struct();
      w.field_i64(2, c.dictionary_page_offset.value_or(c.data_page_offset));
      w.field_struct(3);
      encode_column_meta_fields(w, c);
      w.end_struct();
      w.end_struct();
    }
    w.field_i64(2, g.total_byte_size);
    w.field_i64(3, g.num_rows);
    w.end_struct();
  }
  if (!meta.key_value.empty()) {
    w.field_list(5, thrift::kStruct, meta.key_value.size());
    for (const auto& [k, v] : meta.key_value) {
      w.begin_struct();
      w.field_binary(1, k);
      w.field_binary(2, v);
      w.end_struct();
    }
  }
  if (!meta.created_by.empty()) w.field_binary(6, meta.created_by);
  w.end_struct();
  return w.take();
}


FileMeta decode_file_meta(const std::uint8_t* data, std::size_t size) {
  CompactReader r(data, size);
  FileMeta meta;
  r.read_struct([&](std::int16_t id, thrift::Type) {
    switch (id) {
      case 1:
        meta.version = r.read_i32();
        return true;
      case 2: {
        auto [t, n] = r.read_list_header();
        for (std::size_t i = 0; i < n; ++i) meta.schema.push_back(decode_schema_element(r));
        return true;
      }
      case 3:
        meta.num_rows = r.read_i64();
        return true;
      case 4: {
        auto [t, n] = r.read_list_header();
        for (std::size_t i = 0; i < n; ++i) meta.row_groups.push_back(decode_row_group(r));
        return true;
      }
      case 5: {
        auto [t, n] = r.read_list_header();
        for (std::size_t i = 0; i < n; ++i) {
          std::pair<std::string, std::string> kv;
          r.read_struct([&](std::int16_t fid, thrift::Type) {
            if (fid == 1) {
              kv.first = r.read_binary();
              return true;
            }
            if (fid == 2) {
              kv.second = r.read_binary();
              return true;
            }
            return false;
          });
          meta.key_value.push_back(std::move(kv));
        }
        return true;
      }
      case 6:
        meta.created_by = r.read_binary();
        return true;
      default:
        return false;
    }
  });
  if (meta.schema.empty()) corrupt("empty schema");
  return meta;
}

namespace {

void resolve_node(const std::vector<SchemaElement>& schema, std::size_t& index,
                  std::vector<std::string>& path, std::int16_t def, std::int16_t rep,
                  std::int16_t list_defined, std::int16_t list_nonempty,
                  std::vector<LeafDescriptor>& out) {
  if (index >= schema.size()) corrupt("schema tree truncated");
  const SchemaElement& e = schema[index++];
  if (e.repetition == Repetition::optional) ++def;
  if (e.repetition == Repetition::repeated) {
    if (rep == 0) {
      list_defined = def;
      list_nonempty = static_cast<std::int16_t>(def + 1);
    }
    ++def;
    ++rep;
  }
  path.push_back(e.name);
  if (e.type) {
    LeafDescriptor leaf;
    leaf.path = path;
    leaf.type = *e.type;
    leaf.max_def = def;
    leaf.max_rep = rep;
    leaf.list_defined = list_defined;
    leaf.list_nonempty = list_nonempty;
    out.push_back(std::move(leaf));
  } else {
    for (std::int32_t c = 0; c < e.num_children; ++c) {
      resolve_node(schema, index, path, def, rep, list_defined, list_nonempty, out);
    }
  }
  path.pop_back();
}

}  // namespace

std::vector<LeafDescriptor> resolve_leaves(const std::vector<SchemaElement>& schema) {
  std::vector<LeafDescriptor> leaves;
  if (schema.empty()) return leaves;
  std::size_t index = 1;
  std::vector<std::string> path;
  for (std::int32_t c = 0; c < schema[0].num_children; ++c) {
    resolve_node(schema, index, path, 0, 0, 0, 0, leaves);
  }
  return leaves;
}

// ---------------------------------------------------------------- writer

FileWriter::FileWriter(std::ostream& out, std::vector<SchemaElement> schema) : out_(out) {
  meta_.schema = std::move(schema);
  out_.write(kMagic, 4);
  offset_ = 4;
}

void FileWriter::write_row_group(std::int64_t num_rows, std::vector<ColumnChunkInput> columns) {
  RowGroupMeta group;
  group.num_rows = num_rows;
  for (auto& col : columns) {
    std::string page;
    if (col.leaf.max_rep > 0) {
      const std::string enc = encode_levels(col.rep_levels, bit_width(static_cast<std::uint32_t>(col.leaf.max_rep)));
      append_u32(page, static_cast<std::uint32_t>(enc.size()));
      page += enc;
    }
    if (col.leaf.max_def > 0) {
      const std::string enc = encode_levels(col.def_levels, bit_width(static_cast<std::uint32_t>(col.leaf.max_def)));
      append_u32(page, static_cast<std::uint32_t>(enc.size()));
      page += enc;
    }
    page += col.plain_values;

    CompactWriter h;
    h.begin_struct();
    h.field_i32(1, kPageData);
    h.field_i32(2, static_cast<std::int32_t>(page.size()));
    h.field_i32(3, static_cast<std::int32_t>(page.size()));
    h.field_struct(5);
    h.field_i32(1, static_cast<std::int32_t>(col.num_entries));
    h.field_i32(2, kEncodingPlain);
    h.field_i32(3, kEncodingRle);
    h.field_i32(4, kEncodingRle);
    h.end_struct();
    h.end_struct();
    const std::string header = h.take();

    ColumnMeta meta;
    meta.type = col.leaf.type;
    meta.encodings = {kEncodingPlain, kEncodingRle};
    meta.path = col.leaf.path;
    meta.codec = kCodecUncompressed;
    meta.num_values = col.num_entries;
    meta.total_uncompressed_size = static_cast<std::int64_t>(header.size() + page.size());
    meta.total_compressed_size = meta.total_uncompressed_size;
    meta.data_page_offset = offset_;

    out_.write(header.data(), static_cast<std::streamsize>(header.size()));
    out_.write(page.data(), static_cast<std::streamsize>(page.size()));
    offset_ += meta.total_compressed_size;
    group.total_byte_size += meta.total_uncompressed_size;
    group.columns.push_back(std::move(meta));
  }
  meta_.num_rows += num_rows;
  meta_.row_groups.push_back(std::move(group));
}

void FileWriter::finish(std::vector<std::pair<std::string, std::string>> key_value, std::string created_by) {
  meta_.key_value = std::move(key_value);
  meta_.created_by = std::move(created_by);
  const std::string footer = encode_file_meta(meta_);
  out_.write(footer.data(), static_cast<std::streamsize>(footer.size()));
  const auto len = static_cast<std::uint32_t>(footer.size());
  out_.write(reinterpret_cast<const char*>(&len), 4);
  out_.write(kMagic, 4);
}

// ---------------------------------------------------------------- reader

FileReader::FileReader(const std::filesystem::path& path) : path_(path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::int64_t>(in.tellg());
  if (size < 12) corrupt(path.string() + " is too small");
  char tail[8];
  in.seekg(size - 8);
  in.read(tail, 8);
  if (std::memcmp(tail + 4, kMagic, 4) != 0) corrupt(path.string() + " lacks trailing magic");
  std::uint32_t footer_len;
  std::memcpy(&footer_len, tail, 4);
  if (static_cast<std::int64_t>(footer_len) > size - 12) corrupt(path.string() + " footer length out of range");
  std::vector<std::uint8_t> footer(footer_len);
  in.seekg(size - 8 - footer_len);
  in.read(reinterpret_cast<char*>(footer.data()), footer_len);
  if (!in) corrupt(path.string() + " footer unreadable");
  try {
    meta_ = decode_file_meta(footer.data(), footer.size());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  leaves_ = resolve_leaves(meta_.schema);
  for (const auto& g : meta_.row_groups) {
    if (g.columns.size() != leaves_.size()) corrupt(path.string() + " row group column count mismatch");
  }
}

std::optional<std::size_t> FileReader::find_leaf(const std::string& top) const {
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    if (!leaves_[i].path.empty() && leaves_[i].path.front() == top) return i;
  }
  return std::nullopt;
}

ColumnData FileReader::read_column(std::istream& in, std::size_t row_group, std::size_t leaf_index) const {
  const ColumnMeta& meta = meta_.row_groups.at(row_group).columns.at(leaf_index);
  const LeafDescriptor& leaf = leaves_.at(leaf_index);
  std::int64_t start = meta.data_page_offset;
  if (meta.dictionary_page_offset && *meta.dictionary_page_offset > 0) {
    start = std::min(start, *meta.dictionary_page_offset);
  }
  std::vector<std::uint8_t> chunk(static_cast<std::size_t>(meta.total_compressed_size));
  in.clear();
  in.seekg(start);
  in.read(reinterpret_cast<char*>(chunk.data()), static_cast<std::streamsize>(chunk.size()));
  if (!in) corrupt(path_.string() + " column chunk truncated");

  ColumnData data;
  data.values = empty_values(leaf.type);
  std::optional<Values> dictionary;
  const int def_width = bit_width(static_cast<std::uint32_t>(leaf.max_def));
  const int rep_width = bit_width(static_cast<std::uint32_t>(leaf.max_rep));

  std::size_t pos = 0;
  std::int64_t seen = 0;
  while (seen < meta.num_values) {
    if (pos >= chunk.size()) corrupt(path_.string() + " column chunk ends before all values");
    CompactReader hr(chunk.data() + pos, chunk.size() - pos);
    const PageHeader h = decode_page_header(hr);
    pos += hr.position();
    if (h.compressed_size < 0 || static_cast<std::size_t>(h.compressed_size) > chunk.size() - pos) {
      corrupt(path_.string() + " page overruns column chunk");
    }
    const std::uint8_t* body = chunk.data() + pos;
    pos += static_cast<std::size_t>(h.compressed_size);

    if (h.type == kPageDictionary) {
      const std::string plain = decompress(meta.codec, body, static_cast<std::size_t>(h.compressed_size),
                                           static_cast<std::size_t>(h.uncompressed_size));
      ByteCursor cur(reinterpret_cast<const std::uint8_t*>(plain.data()), plain.size());
      dictionary = empty_values(leaf.type);
      decode_plain(cur, static_cast<std::size_t>(h.num_values), *dictionary);
      continue;
    }
    if (h.type != kPageData && h.type != kPageDataV2) continue;

    const auto count = static_cast<std::size_t>(h.num_values);
    std::string values_buf;
    std::string v1_buf;
    const std::size_t def_start = data.def_levels.size();
    ByteCursor values_cur(nullptr, 0);
    if (h.type == kPageData) {
      v1_buf = decompress(meta.codec, body, static_cast<std::size_t>(h.compressed_size),
                          static_cast<std::size_t>(h.uncompressed_size));
      ByteCursor cur(reinterpret_cast<const std::uint8_t*>(v1_buf.data()), v1_buf.size());
      if (leaf.max_rep > 0) {
        const std::uint32_t len = cur.u32();
        ByteCursor lv(cur.here(), len);
        cur.advance(len);
        decode_hybrid(lv, rep_width, count, data.rep_levels);
      }
      if (leaf.max_def > 0) {
        const std::uint32_t len = cur.u32();
        ByteCursor lv(cur.here(), len);
        cur.advance(len);
        decode_hybrid(lv, def_width, count, data.def_levels);
      }
      values_cur = cur;
    } else {
      const auto level_bytes = static_cast<std::size_t>(h.rep_bytes + h.def_bytes);
      if (level_bytes > static_cast<std::size_t>(h.compressed_size)) corrupt("v2 levels overrun page");
      if (leaf.max_rep > 0) {
        ByteCursor lv(body, static_cast<std::size_t>(h.rep_bytes));
        decode_hybrid(lv, rep_width, count, data.rep_levels);
      }
      if (leaf.max_def > 0) {
        ByteCursor lv(body + h.rep_bytes, static_cast<std::size_t>(h.def_bytes));
        decode_hybrid(lv, def_width, count, data.def_levels);
      }
      const std::uint8_t* vbody = body + level_bytes;
      const std::size_t vsize = static_cast<std::size_t>(h.compressed_size) - level_bytes;
      if (h.v2_compressed && meta.codec != kCodecUncompressed) {
        values_buf = decompress(meta.codec, vbody, vsize,
                                static_cast<std::size_t>(h.uncompressed_size) - level_bytes);
      } else {
        values_buf.assign(reinterpret_cast<const char*>(vbody), vsize);
      }
      values_cur = ByteCursor(reinterpret_cast<const std::uint8_t*>(values_buf.data()), values_buf.size());
    }

    std::size_t present = count;
    if (leaf.max_def > 0) {
      present = 0;
      for (std::size_t i = def_start; i < data.def_levels.size(); ++i) {
        if (data.def_levels[i] == leaf.max_def) ++present;
      }
    }
    if (h.encoding == kEncodingPlain) {
      decode_plain(values_cur, present, data.values);
    } else if (h.encoding == kEncodingRleDictionary || h.encoding == kEncodingPlainDictionary) {
      if (!dictionary) corrupt(path_.string() + " dictionary-encoded page without dictionary");
      std::vector<std::uint32_t> indices;
      if (present > 0) {
        const int width = values_cur.byte();
        decode_hybrid(values_cur, width, present, indices);
      }
      gather_dictionary(*dictionary, indices, data.values);
    } else {
      throw DataError(path_.string() + ": unsupported parquet value encoding " + std::to_string(h.encoding));
    }
    seen += h.num_values;
  }
  return data;
}

// ---------------------------------------------------------------- snappy

std::string snappy_decompress(const std::uint8_t* data, std::size_t size) {
  ByteCursor in(data, size);
  const std::uint64_t expected = in.varint();
  std::string out;
  out.reserve(static_cast<std::size_t>(expected));
  while (in.remaining() > 0) {
    const std::uint8_t tag = in.byte();
    switch (tag & 3) {
      case 0: {
        std::size_t len = tag >> 2;
        if (len >= 60) {
          const std::size_t extra = len - 59;
          len = 0;
          for (std::size_t b = 0; b < extra; ++b) len |= static_cast<std::size_t>(in.byte()) << (8 * b);
        }
        len += 1;
        if (len > in.remaining()) corrupt("snappy literal overruns input");
        out.append(reinterpret_cast<const char*>(in.here()), len);
        in.advance(len);
        break;
      }
      default: {
        std::size_t len;
        std::size_t offset;
        if ((tag & 3) == 1) {
          len = 4 + ((tag >> 2) & 7);
          offset = (static_cast<std::size_t>(tag >> 5) << 8) | in.byte();
        } else if ((tag & 3) == 2) {
          len = 1 + (tag >> 2);
          offset = in.byte();
          offset |= static_cast<std::size_t>(in.byte()) << 8;
        } else {
          len = 1 + (tag >> 2);
          offset = in.u32();
        }
        if (offset == 0 || offset > out.size()) corrupt("snappy copy offset out of range");
        const std::size_t from = out.size() - offset;
        for (std::size_t k = 0; k < len; ++k) out.push_back(out[from + k]);
        break;
      }
    }
  }
  if (out.size() != expected) corrupt("snappy length mismatch");
  return out;
}

}  // namespace prism::store::parquet
