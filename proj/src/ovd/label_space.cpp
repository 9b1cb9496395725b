#include "prism/ovd/label_space.hpp"

#include <cmath>
#include <set>

namespace prism::ovd {

const char* to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::class_name:
      return "class";
    case PromptKind::negative:
      return "negative";
    case PromptKind::part:
      return "part";
  }
  return "unknown";
}

void normalize_embedding(std::vector<double>& v, const std::string& text) {
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  if (!(norm2 > 0.0) || !std::isfinite(norm2)) {
    throw EmbeddingError("embedding of '" + text + "' has zero or non-finite norm");
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
}

namespace {

std::string apply_template(const std::string& tmpl, const std::string& name) {
  std::string out = tmpl;
  const auto pos = out.find("{}");
  out.replace(pos, 2, name);
  return out;
}

}  // namespace

LabelSpace build_label_space(const std::vector<std::string>& classes, const EvalConfig& config,
                             const EmbeddingProvider& provider) {
  config.validate();
  if (classes.empty()) throw ConfigError("classes", "label space needs at least one class");
  std::set<std::string> seen;
  for (const auto& c : classes) {
    if (!seen.insert(c).second) throw ConfigError("classes", "duplicate class '" + c + "'");
  }

  LabelSpace space;
  space.classes = classes;
  space.encoder_id = provider.id();
  for (std::size_t i = 0; i < classes.size(); ++i) space.prompts.push_back({classes[i], PromptKind::class_name, i});
  if (config.use_negatives) {
    space.negatives = config.negatives;
    for (const auto& n : config.negatives) space.prompts.push_back({n, PromptKind::negative, 0});
  }
  if (config.use_parts) {
    for (std::size_t i = 0; i < classes.size(); ++i) {
      space.part_prompts.push_back(apply_template(config.part_template, classes[i]));
      space.prompts.push_back({space.part_prompts.back(), PromptKind::part, i});
    }
  }

  for (const auto& p : space.prompts) {
    std::vector<double> e;
    try {
      e = provider.embed(p.text);
    } catch (const EmbeddingError& ex) {
      throw EmbeddingError(std::string(to_string(p.kind)) + " prompt '" + p.text + "': " + ex.what());
    }
    if (!space.embeddings.empty() && e.size() != space.embeddings.front().size()) {
      throw EmbeddingError("prompt '" + p.text + "' has a different embedding dimension");
    }
    normalize_embedding(e, p.text);
    space.embeddings.push_back(std::move(e));
  }
  return space;
}

}  // namespace prism::ovd
