#pragma once

#include <string>
#include <vector>

#include "prism/ovd/config.hpp"
#include "prism/ovd/embedding.hpp"

namespace prism::ovd {

enum class PromptKind { class_name, negative, part };

const char* to_string(PromptKind kind);

struct Prompt {
  std::string text;
  PromptKind kind = PromptKind::class_name;
  /// Owning class for class and part prompts; unused for negatives.
  std::size_t class_index = 0;
};

/// Candidate labels plus auxiliary prompts, each with a unit embedding.
/// Prompts are ordered: classes, then negatives, then parts.
struct LabelSpace {
  std::vector<std::string> classes;
  std::vector<std::string> negatives;
  std::vector<std::string> part_prompts;
  std::vector<Prompt> prompts;
  std::vector<std::vector<double>> embeddings;
  std::string encoder_id;

  std::size_t dimension() const { return embeddings.empty() ? 0 : embeddings.front().size(); }
};

/// Scales v to unit length. Throws EmbeddingError on a zero or non-finite vector.
void normalize_embedding(std::vector<double>& v, const std::string& text);

LabelSpace build_label_space(const std::vector<std::string>& classes, const EvalConfig& config,
                             const EmbeddingProvider& provider);

}  // namespace prism::ovd
