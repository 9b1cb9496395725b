#include "prism/ovd/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

namespace prism::ovd {

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::kept:
      return "kept";
    case Provenance::filtered_conf:
      return "filtered_conf";
    case Provenance::filtered_negative:
      return "filtered_negative";
    case Provenance::filtered_part:
      return "filtered_part";
    case Provenance::filtered_unembeddable:
      return "filtered_unembeddable";
    case Provenance::truncated_maxpred:
      return "truncated_maxpred";
  }
  return "unknown";
}

void validate_detection(const RawDetection& d) {
  if (!d.box.valid()) throw DataError("detection on '" + d.sample_id + "' has an invalid box");
  auto unit = [](const std::optional<double>& v) { return !v || (*v >= 0.0 && *v <= 1.0); };
  if (!unit(d.confidence)) throw DataError("detection on '" + d.sample_id + "' has confidence outside [0, 1]");
  if (!unit(d.objectness)) throw DataError("detection on '" + d.sample_id + "' has objectness outside [0, 1]");
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::vector<MappedDetection> map_labels(const std::vector<RawDetection>& detections, const LabelSpace& space,
                                        const EvalConfig& config, const EmbeddingProvider& provider) {
  config.validate();
  if (space.prompts.empty()) throw ConfigError("classes", "label space is empty");

  // Embedding cache; nullopt marks text the provider rejected.
  std::unordered_map<std::string, std::optional<std::vector<double>>> cache;
  auto embed = [&](const std::string& text) -> const std::optional<std::vector<double>>& {
    auto it = cache.find(text);
    if (it != cache.end()) return it->second;
    std::optional<std::vector<double>> e;
    try {
      auto v = provider.embed(text);
      if (v.size() == space.dimension()) {
        normalize_embedding(v, text);
        e = std::move(v);
      }
    } catch (const EmbeddingError&) {
    }
    return cache.emplace(text, std::move(e)).first->second;
  };

  std::vector<MappedDetection> out;
  out.reserve(detections.size());
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    validate_detection(d);
    MappedDetection m;
    m.sample_id = d.sample_id;
    m.box = d.box;
    m.source_index = i;
    m.confidence_defaulted = !d.confidence.has_value();
    const double conf = d.confidence.value_or(1.0);
    if (conf < config.min_conf) {
      m.provenance = Provenance::filtered_conf;
      out.push_back(std::move(m));
      continue;
    }
    const auto& e = embed(d.text);
    if (!e) {
      m.provenance = Provenance::filtered_unembeddable;
      out.push_back(std::move(m));
      continue;
    }

    std::vector<double> sims(space.prompts.size());
    for (std::size_t p = 0; p < sims.size(); ++p) sims[p] = dot(*e, space.embeddings[p]);
    const std::size_t best = static_cast<std::size_t>(std::max_element(sims.begin(), sims.end()) - sims.begin());
    m.prompt_index = best;
    m.similarity = sims[best];
    const auto kind = space.prompts[best].kind;
    if (kind != PromptKind::class_name) {
      m.provenance = kind == PromptKind::negative ? Provenance::filtered_negative : Provenance::filtered_part;
      out.push_back(std::move(m));
      continue;
    }

    double score = conf;
    if (config.use_objectness && d.objectness) score *= *d.objectness;

    if (!config.use_topk) {
      m.label = space.prompts[best].class_index;
      m.score = score;
      out.push_back(std::move(m));
      continue;
    }

    // Candidate expansion: the k_map most similar class prompts, weighted by
    // a temperature softmax over their similarities.
    std::vector<std::size_t> cls;
    for (std::size_t p = 0; p < space.prompts.size(); ++p) {
      if (space.prompts[p].kind == PromptKind::class_name) cls.push_back(p);
    }
    std::stable_sort(cls.begin(), cls.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    cls.resize(std::min(cls.size(), config.k_map));
    std::vector<double> w(cls.size());
    double total = 0.0;
    for (std::size_t j = 0; j < cls.size(); ++j) {
      w[j] = std::exp((sims[cls[j]] - sims[cls[0]]) / config.topk_temperature);
      total += w[j];
    }
    for (std::size_t j = 0; j < cls.size(); ++j) {
      MappedDetection c = m;
      c.prompt_index = cls[j];
      c.similarity = sims[cls[j]];
      c.label = space.prompts[cls[j]].class_index;
      c.score = score * w[j] / total;
      out.push_back(std::move(c));
    }
  }

  // Per-image cap on surviving candidates, highest score first.
  std::map<std::string, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].provenance == Provenance::kept) by_image[out[i].sample_id].push_back(i);
  }
  for (auto& [image, idx] : by_image) {
    if (idx.size() <= config.max_pred) continue;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return out[a].score > out[b].score; });
    for (std::size_t j = config.max_pred; j < idx.size(); ++j) out[idx[j]].provenance = Provenance::truncated_maxpred;
  }
  return out;
}

}  // namespace prism::ovd
