#include "thrift_compact.hpp"

#include "prism/core/error.hpp"

namespace prism::store::thrift {

std::uint8_t CompactReader::byte() {
  if (pos_ >= size_) throw DataError("corrupt parquet metadata: unexpected end of thrift data");
  return data_[pos_++];
}

std::uint64_t CompactReader::varint() {
  std::uint64_t result = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    const std::uint8_t b = byte();
    result |= static_cast<std::uint64_t>(b & 0x7f) << shift;
    if ((b & 0x80) == 0) return result;
  }
  throw DataError("corrupt parquet metadata: varint too long");
}

std::string CompactReader::read_binary() {
  const std::uint64_t len = varint();
  if (len > size_ - pos_) throw DataError("corrupt parquet metadata: binary overruns buffer");
  std::string out(reinterpret_cast<const char*>(data_ + pos_), static_cast<std::size_t>(len));
  pos_ += static_cast<std::size_t>(len);
  return out;
}

std::pair<Type, std::size_t> CompactReader::read_list_header() {
  const std::uint8_t b = byte();
  std::size_t size = b >> 4;
  const auto element = static_cast<Type>(b & 0x0f);
  if (size == 15) size = static_cast<std::size_t>(varint());
  return {element, size};
}

void CompactReader::read_struct(const std::function<bool(std::int16_t, Type)>& on_field) {
  std::int16_t last = 0;
  for (;;) {
    const std::uint8_t header = byte();
    if (header == kStop) return;
    const auto type = static_cast<Type>(header & 0x0f);
    const int delta = header >> 4;
    const std::int16_t id = delta != 0 ? static_cast<std::int16_t>(last + delta)
                                       : static_cast<std::int16_t>(unzigzag(varint()));
    last = id;
    if (!on_field(id, type)) skip(type);
  }
}

void CompactReader::skip(Type type) {
  switch (type) {
    case kTrue:
    case kFalse:
      return;  // value lives in the field header
    case kByte:
      byte();
      return;
    case kI16:
    case kI32:
    case kI64:
      varint();
      return;
    case kDouble:
      for (int i = 0; i < 8; ++i) byte();
      return;
    case kBinary:
      read_binary();
      return;
    case kList:
    case kSet: {
      auto [element, size] = read_list_header();
      for (std::size_t i = 0; i < size; ++i) {
        if (element == kTrue || element == kFalse) {
          byte();
        } else {
          skip(element);
        }
      }
      return;
    }
    case kMap: {
      const std::uint64_t size = varint();
      if (size == 0) return;
      const std::uint8_t kv = byte();
      for (std::uint64_t i = 0; i < size; ++i) {
        skip(static_cast<Type>(kv >> 4));
        skip(static_cast<Type>(kv & 0x0f));
      }
      return;
    }
    case kStruct:
      read_struct([](std::int16_t, Type) { return false; });
      return;
    default:
      throw DataError("corrupt parquet metadata: unknown thrift type " + std::to_string(type));
  }
}

}  // namespace prism::store::thrift
