#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prism/core/error.hpp"

namespace prism::ovd {

class EmbeddingError : public DataError {
 public:
  explicit EmbeddingError(const std::string& message) : DataError("embedding error: " + message) {}
};

/// Text encoder f: text -> R^D. Implementations must be deterministic per text.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dimension() const = 0;
  /// Throws EmbeddingError when the text cannot be embedded.
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

/// Lowercases ASCII, collapses runs of whitespace and trims.
std::string canonical_text(std::string_view text);

/// Deterministic stand-in encoder: a unit vector drawn from a generator
/// seeded by the hash of the canonical text. Equal texts collide exactly;
/// distinct texts are nearly orthogonal for large D.
class HashedEmbedder final : public EmbeddingProvider {
 public:
  explicit HashedEmbedder(std::size_t dimension = 512, std::uint64_t seed = 0);
  std::string id() const override;
  std::size_t dimension() const override { return dimension_; }
  std::vector<double> embed(std::string_view text) const override;

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

/// Precomputed embeddings stored as a feature table: sample_id holds the
/// text, vector holds its embedding. Lookup is by exact text.
class TableEmbedder final : public EmbeddingProvider {
 public:
  explicit TableEmbedder(const std::filesystem::path& table_dir);
  std::string id() const override { return "table:" + source_; }
  std::size_t dimension() const override { return dimension_; }
  std::vector<double> embed(std::string_view text) const override;

 private:
  std::string source_;
  std::size_t dimension_ = 0;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

/// "hashed", "hashed:<D>" or "table:<dir>".
std::unique_ptr<EmbeddingProvider> make_embedding_provider(const std::string& encoder_id);

}  // namespace prism::ovd
