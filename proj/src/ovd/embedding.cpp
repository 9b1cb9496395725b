#include "prism/ovd/embedding.hpp"

#include <cctype>
#include <cmath>

#include "prism/core/rng.hpp"
#include "prism/store/table.hpp"

namespace prism::ovd {

std::string canonical_text(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

HashedEmbedder::HashedEmbedder(std::size_t dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed) {
  if (dimension_ == 0) throw ConfigError("encoder", "hashed embedder needs dimension >= 1");
}

std::string HashedEmbedder::id() const { return "hashed:" + std::to_string(dimension_); }

std::vector<double> HashedEmbedder::embed(std::string_view text) const {
  Rng rng(fnv1a64(canonical_text(text)) ^ (seed_ * 0x9e3779b97f4a7c15ULL));
  std::vector<double> v(dimension_);
  double norm2 = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

TableEmbedder::TableEmbedder(const std::filesystem::path& table_dir) : source_(table_dir.string()) {
  const auto table = store::FeatureTable::open(table_dir);
  for (auto& rec : table.read_all()) {
    if (dimension_ == 0) dimension_ = rec.vector.size();
    if (rec.vector.size() != dimension_) {
      throw EmbeddingError("embedding table " + source_ + " mixes dimensions");
    }
    vectors_.insert_or_assign(rec.sample_id, std::move(rec.vector));
  }
  if (vectors_.empty()) throw EmbeddingError("embedding table " + source_ + " is empty");
}

std::vector<double> TableEmbedder::embed(std::string_view text) const {
  const auto it = vectors_.find(std::string(text));
  if (it == vectors_.end()) throw EmbeddingError("no precomputed embedding for '" + std::string(text) + "'");
  return it->second;
}

std::unique_ptr<EmbeddingProvider> make_embedding_provider(const std::string& encoder_id) {
  if (encoder_id == "hashed") return std::make_unique<HashedEmbedder>();
  if (encoder_id.rfind("hashed:", 0) == 0) {
    try {
      return std::make_unique<HashedEmbedder>(std::stoul(encoder_id.substr(7)));
    } catch (const std::logic_error&) {
      throw ConfigError("encoder", "bad hashed dimension in '" + encoder_id + "'");
    }
  }
  if (encoder_id.rfind("table:", 0) == 0) return std::make_unique<TableEmbedder>(encoder_id.substr(6));
  throw ConfigError("encoder", "unknown encoder '" + encoder_id + "' (expected hashed[:D] or table:<dir>)");
}

}  // namespace prism::ovd
