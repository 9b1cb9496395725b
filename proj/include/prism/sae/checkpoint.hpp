#pragma once

#include <filesystem>

#include "prism/sae/model.hpp"

namespace prism::sae {

inline constexpr const char* kCheckpointMagic = "PRSMSAE";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  SaeModel model;
  OptimizerState optimizer;
};

/// Layout: 8-byte magic, u32 version, u64 header length, JSON header
/// (config, shapes, step, stats scales), then little-endian f64 arrays in
/// row-major order and the u64 last_fired counters.
std::string serialize_checkpoint(const SaeModel& model, const OptimizerState& optimizer);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const SaeModel& model, const OptimizerState& optimizer);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace prism::sae
