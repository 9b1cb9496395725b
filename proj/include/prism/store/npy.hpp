#pragma once

#include <filesystem>
#include <vector>

#include "prism/store/align.hpp"

namespace prism::store {

/// Reads a C-order NumPy .npy array of float, integer or bool dtype as doubles.
RawTensor read_npy(const std::filesystem::path& path);

/// Writes a little-endian C-order .npy file, `<f4` or `<f8` depending on dtype.
void write_npy(const std::filesystem::path& path, const RawTensor& tensor, Dtype dtype);

}  // namespace prism::store
