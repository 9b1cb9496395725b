#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace prism::sae {

enum class Variant { relu, topk, batch_topk, matryoshka };

const char* to_string(Variant v);
Variant parse_variant(const std::string& s);

struct SaeConfig {
  std::size_t input_dim = 0;
  /// Reconstruction target dimension; 0 means same as input (autoencoder).
  std::size_t output_dim = 0;
  std::size_t expansion_factor = 1;
  Variant variant = Variant::topk;
  std::size_t k = 1;
  double l1_coeff = 0.0;
  double aux_coeff = 1.0 / 32.0;
  /// Defaults to 2k.
  std::optional<std::size_t> aux_k;
  /// Defaults to 1000 batches worth of tokens.
  std::optional<std::uint64_t> dead_threshold_tokens;
  std::vector<std::size_t> matryoshka_prefixes;
  std::uint64_t seed = 0;

  std::size_t batch_size = 256;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  std::size_t latent_dim() const { return input_dim * expansion_factor; }
  std::size_t target_dim() const { return output_dim == 0 ? input_dim : output_dim; }
  /// The decoder bias is subtracted from the input only when input and
  /// target live in the same space.
  bool uses_pre_bias() const { return target_dim() == input_dim; }
  std::size_t effective_aux_k() const { return aux_k.value_or(2 * k); }
  std::uint64_t effective_dead_threshold() const { return dead_threshold_tokens.value_or(1000ULL * batch_size); }
  bool is_topk_family() const { return variant != Variant::relu; }

  /// Throws ConfigError naming every invalid field.
  void validate() const;

  nlohmann::json to_json() const;
  static SaeConfig from_json(const nlohmann::json& j);
};

}  // namespace prism::sae
