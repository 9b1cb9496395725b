#include "prism/probe/transition.hpp"

#include <algorithm>
#include <numeric>

#include "prism/core/error.hpp"

namespace prism::probe {

TransitionReport detect_transition(std::span<const double> acc, double delta, std::span<const std::uint16_t> layers) {
  const std::size_t n = acc.size();
  if (n < 3) throw DataError("transition detection needs at least 3 layers");
  std::vector<std::uint16_t> idx(layers.begin(), layers.end());
  if (idx.empty()) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::uint16_t{0});
  }
  if (idx.size() != n) throw DataError("one layer index per accuracy required");
  for (std::size_t i = 1; i < n; ++i) {
    if (idx[i] <= idx[i - 1]) throw DataError("layer indices must be strictly increasing");
  }

  std::size_t dip = 1;
  for (std::size_t i = 2; i + 1 < n; ++i) {
    if (acc[i] < acc[dip]) dip = i;
  }
  const double earlier = *std::max_element(acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>(dip)) - acc[dip];
  const double later = *std::max_element(acc.begin() + static_cast<std::ptrdiff_t>(dip) + 1, acc.end()) - acc[dip];

  TransitionReport r;
  r.delta = delta;
  r.dip_depth = std::min(earlier, later);
  if (earlier >= delta && later >= delta) {
    r.l_star = idx[dip];
    r.extraction.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(dip));
    r.reorganization = {idx[dip]};
    r.refinement.assign(idx.begin() + static_cast<std::ptrdiff_t>(dip) + 1, idx.end());
  }
  return r;
}

nlohmann::json to_json(const TransitionReport& r) {
  nlohmann::json j = {{"l_star", r.l_star ? nlohmann::json(*r.l_star) : nlohmann::json()},
                      {"dip_depth", r.dip_depth},
                      {"delta", r.delta}};
  if (r.l_star) {
    j["phases"] = {{"extraction", r.extraction}, {"reorganization", r.reorganization}, {"refinement", r.refinement}};
  } else {
    j["phases"] = nullptr;
  }
  return j;
}

}  // namespace prism::probe
