#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

namespace prism::probe {

inline constexpr double kDefaultDipThreshold = 0.05;

struct TransitionReport {
  /// Layer index of the dip, present only when dip_depth >= delta.
  std::optional<std::uint16_t> l_star;
  /// Depth of the interior minimum: the smaller of its margins below the best
  /// earlier and the best later layer. Reported even when l_star is absent.
  double dip_depth = 0.0;
  double delta = kDefaultDipThreshold;
  std::vector<std::uint16_t> extraction;
  std::vector<std::uint16_t> reorganization;
  std::vector<std::uint16_t> refinement;
};

/// acc[i] is the accuracy of layers[i]; layers defaults to 0..n-1 and must
/// be increasing. Throws DataError for fewer than 3 layers.
TransitionReport detect_transition(std::span<const double> acc, double delta = kDefaultDipThreshold,
                                   std::span<const std::uint16_t> layers = {});

nlohmann::json to_json(const TransitionReport& r);

}  // namespace prism::probe
