#pragma once

// Minimal Thrift compact protocol codec, enough for Parquet file metadata.

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace prism::store::thrift {

enum Type : std::uint8_t {
  kStop = 0,
  kTrue = 1,
  kFalse = 2,
  kByte = 3,
  kI16 = 4,
  kI32 = 5,
  kI64 = 6,
  kDouble = 7,
  kBinary = 8,
  kList = 9,
  kSet = 10,
  kMap = 11,
  kStruct = 12,
};

class CompactWriter {
 public:
  void begin_struct() { last_ids_.push_back(0); }
  void end_struct() {
    out_.push_back(static_cast<char>(kStop));
    last_ids_.pop_back();
  }

  void field_i32(std::int16_t id, std::int32_t v) {
    field_header(id, kI32);
    varint(zigzag(v));
  }
  void field_i64(std::int16_t id, std::int64_t v) {
    field_header(id, kI64);
    varint(zigzag(v));
  }
  void field_byte(std::int16_t id, std::int8_t v) {
    field_header(id, kByte);
    out_.push_back(static_cast<char>(v));
  }
  void field_bool(std::int16_t id, bool v) { field_header(id, v ? kTrue : kFalse); }
  void field_binary(std::int16_t id, std::string_view v) {
    field_header(id, kBinary);
    binary(v);
  }
  /// Writes the field header; the caller then emits the nested struct body.
  void field_struct(std::int16_t id) {
    field_header(id, kStruct);
    begin_struct();
  }
  void field_list(std::int16_t id, Type element, std::size_t size) {
    field_header(id, kList);
    list_header(element, size);
  }

  void list_header(Type element, std::size_t size) {
    if (size < 15) {
      out_.push_back(static_cast<char>((size << 4) | element));
    } else {
      out_.push_back(static_cast<char>(0xf0 | element));
      varint(size);
    }
  }
  void element_i32(std::int32_t v) { varint(zigzag(v)); }
  void binary(std::string_view v) {
    varint(v.size());
    out_.append(v);
  }

  const std::string& bytes() const { return out_; }
  std::string take() { return std::move(out_); }

 private:
  static std::uint64_t zigzag(std::int64_t v) {
    return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
  }
  void varint(std::uint64_t v) {
    while (v >= 0x80) {
      out_.push_back(static_cast<char>((v & 0x7f) | 0x80));
      v >>= 7;
    }
    out_.push_back(static_cast<char>(v));
  }
  void field_header(std::int16_t id, Type type) {
    std::int16_t& last = last_ids_.back();
    if (id > last && id - last <= 15) {
      out_.push_back(static_cast<char>(((id - last) << 4) | type));
    } else {
      out_.push_back(static_cast<char>(type));
      varint(zigzag(id));
    }
    last = id;
  }

  std::string out_;
  std::vector<std::int16_t> last_ids_;
};

class CompactReader {
 public:
  CompactReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::size_t position() const { return pos_; }

  /// Calls `on_field(id, type)` for every field of the struct at the cursor.
  /// The callback must consume the value (via the read_* helpers) and return
  /// true, or return false to have it skipped.
  void read_struct(const std::function<bool(std::int16_t, Type)>& on_field);

  std::int32_t read_i32() { return static_cast<std::int32_t>(unzigzag(varint())); }
  std::int64_t read_i64() { return unzigzag(varint()); }
  std::int8_t read_byte() { return static_cast<std::int8_t>(byte()); }
  std::string read_binary();
  /// Returns (element type, size).
  std::pair<Type, std::size_t> read_list_header();
  bool bool_value(Type field_type) const { return field_type == kTrue; }
  bool read_bool_element() { return byte() == kTrue; }

  void skip(Type type);

 private:
  std::uint8_t byte();
  std::uint64_t varint();
  static std::int64_t unzigzag(std::uint64_t v) {
    return static_cast<std::int64_t>(v >> 1) ^ -static_cast<std::int64_t>(v & 1);
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace prism::store::thrift
