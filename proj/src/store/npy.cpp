#include "prism/store/npy.hpp"

#include <bit>
#include <cstring>
#include <regex>
#include <sstream>

#include "prism/core/error.hpp"
#include "prism/core/io.hpp"

namespace prism::store {

namespace {

static_assert(std::endian::native == std::endian::little, "npy codec assumes a little-endian host");

template <typename T>
void widen(const char* src, std::size_t count, std::vector<double>& out) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    T v;
    std::memcpy(&v, src + i * sizeof(T), sizeof(T));
    out[i] = static_cast<double>(v);
  }
}

}  // namespace

RawTensor read_npy(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto fail = [&](const std::string& why) -> DataError {
    return DataError("corrupt npy file " + path.string() + ": " + why);
  };
  if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0) throw fail("bad magic");
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw fail("truncated header");
    std::uint32_t len;
    std::memcpy(&len, bytes.data() + 8, 4);
    header_len = len;
    offset = 12;
  } else {
    throw fail("unsupported version " + std::to_string(major));
  }
  if (offset + header_len > bytes.size()) throw fail("truncated header");
  const std::string header = bytes.substr(offset, header_len);
  offset += header_len;

  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']+)')"))) throw fail("no descr");
  const std::string descr = m[1];
  if (!std::regex_search(header, m, std::regex(R"('fortran_order'\s*:\s*(True|False))"))) {
    throw fail("no fortran_order");
  }
  if (m[1] == "True") throw fail("fortran-ordered arrays are not supported");
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) throw fail("no shape");

  RawTensor tensor;
  std::stringstream dims(m[1].str());
  std::string item;
  while (std::getline(dims, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    tensor.shape.push_back(static_cast<std::size_t>(std::stoull(item.substr(first))));
  }
  std::size_t count = 1;
  for (auto e : tensor.shape) count *= e;

  struct Kind {
    const char* descr;
    std::size_t width;
    void (*convert)(const char*, std::size_t, std::vector<double>&);
  };
  static const Kind kinds[] = {
      {"<f4", 4, widen<float>},          {"<f8", 8, widen<double>},
      {"<i4", 4, widen<std::int32_t>},   {"<i8", 8, widen<std::int64_t>},
      {"|u1", 1, widen<std::uint8_t>},   {"|b1", 1, widen<std::uint8_t>},
      {"|i1", 1, widen<std::int8_t>},    {"<u4", 4, widen<std::uint32_t>},
  };
  for (const auto& kind : kinds) {
    if (descr != kind.descr) continue;
    if (bytes.size() - offset < count * kind.width) throw fail("truncated payload");
    kind.convert(bytes.data() + offset, count, tensor.data);
    return tensor;
  }
  throw fail("unsupported dtype '" + descr + "'");
}

void write_npy(const std::filesystem::path& path, const RawTensor& tensor, Dtype dtype) {
  std::string shape = "(";
  for (std::size_t i = 0; i < tensor.shape.size(); ++i) {
    shape += std::to_string(tensor.shape[i]);
    if (tensor.shape.size() == 1 || i + 1 < tensor.shape.size()) shape += ",";
    if (i + 1 < tensor.shape.size()) shape += " ";
  }
  shape += ")";
  std::string header = std::string("{'descr': '") + (dtype == Dtype::f32 ? "<f4" : "<f8") +
                       "', 'fortran_order': False, 'shape': " + shape + ", }";
  // Pad so the payload starts on a 64-byte boundary.
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header += '\n';

  std::string out("\x93NUMPY\x01\x00", 8);
  out.push_back(static_cast<char>(header.size() & 0xff));
  out.push_back(static_cast<char>((header.size() >> 8) & 0xff));
  out += header;
  for (double v : tensor.data) {
    if (dtype == Dtype::f32) {
      const float f = static_cast<float>(v);
      out.append(reinterpret_cast<const char*>(&f), 4);
    } else {
      out.append(reinterpret_cast<const char*>(&v), 8);
    }
  }
  write_file_atomic(path, out);
}

}  // namespace prism::store
