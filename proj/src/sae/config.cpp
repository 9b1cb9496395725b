#include "prism/sae/config.hpp"

#include <cmath>

#include "prism/core/error.hpp"

namespace prism::sae {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::relu:
      return "relu";
    case Variant::topk:
      return "topk";
    case Variant::batch_topk:
      return "batch_topk";
    case Variant::matryoshka:
      return "matryoshka";
  }
  return "unknown";
}

Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::relu, Variant::topk, Variant::batch_topk, Variant::matryoshka}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("variant", "unknown variant '" + s + "' (expected relu, topk, batch_topk or matryoshka)");
}

void SaeConfig::validate() const {
  std::vector<std::string> bad;
  const std::size_t m = latent_dim();
  if (input_dim == 0) bad.push_back("input_dim: must be >= 1");
  if (expansion_factor == 0) bad.push_back("expansion_factor: must be >= 1");
  if (is_topk_family() && (k == 0 || k > m)) bad.push_back("k: must lie in [1, m]");
  if (!(l1_coeff >= 0.0) || !std::isfinite(l1_coeff)) bad.push_back("l1_coeff: must be >= 0");
  if (!(aux_coeff >= 0.0) || !std::isfinite(aux_coeff)) bad.push_back("aux_coeff: must be >= 0");
  if (batch_size == 0) bad.push_back("batch_size: must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) bad.push_back("lr: must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) bad.push_back("beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) bad.push_back("beta2: must lie in [0, 1)");
  if (!(adam_eps > 0.0)) bad.push_back("adam_eps: must be > 0");
  if (variant == Variant::matryoshka) {
    const auto& p = matryoshka_prefixes;
    bool ok = !p.empty() && p.back() == m && p.front() >= 1;
    for (std::size_t i = 1; ok && i < p.size(); ++i) ok = p[i] > p[i - 1];
    if (!ok) bad.push_back("matryoshka_prefixes: must be strictly increasing, >= 1, and end at m");
    if (ok && p.front() < k) bad.push_back("matryoshka_prefixes: smallest prefix must be >= k");
  } else if (!matryoshka_prefixes.empty()) {
    bad.push_back("matryoshka_prefixes: only valid for the matryoshka variant");
  }
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

nlohmann::json SaeConfig::to_json() const {
  nlohmann::json j = {{"input_dim", input_dim},
                      {"output_dim", target_dim()},
                      {"expansion_factor", expansion_factor},
                      {"latent_dim", latent_dim()},
                      {"variant", to_string(variant)},
                      {"k", k},
                      {"l1_coeff", l1_coeff},
                      {"aux_coeff", aux_coeff},
                      {"aux_k", effective_aux_k()},
                      {"dead_threshold_tokens", effective_dead_threshold()},
                      {"matryoshka_prefixes", matryoshka_prefixes},
                      {"seed", seed},
                      {"batch_size", batch_size},
                      {"lr", lr},
                      {"beta1", beta1},
                      {"beta2", beta2},
                      {"adam_eps", adam_eps}};
  return j;
}

SaeConfig SaeConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("sae", "configuration must be a JSON object");
  SaeConfig c;
  try {
    c.input_dim = j.value("input_dim", c.input_dim);
    c.output_dim = j.value("output_dim", c.output_dim);
    c.expansion_factor = j.value("expansion_factor", c.expansion_factor);
    if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
    c.k = j.value("k", c.k);
    c.l1_coeff = j.value("l1_coeff", c.l1_coeff);
    c.aux_coeff = j.value("aux_coeff", c.aux_coeff);
    if (j.contains("aux_k") && !j["aux_k"].is_null()) c.aux_k = j["aux_k"].get<std::size_t>();
    if (j.contains("dead_threshold_tokens") && !j["dead_threshold_tokens"].is_null()) {
      c.dead_threshold_tokens = j["dead_threshold_tokens"].get<std::uint64_t>();
    }
    c.matryoshka_prefixes = j.value("matryoshka_prefixes", c.matryoshka_prefixes);
    c.seed = j.value("seed", c.seed);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("sae", std::string("bad field type: ") + e.what());
  }
  return c;
}

}  // namespace prism::sae
