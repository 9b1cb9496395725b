#include "prism/synth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prism/core/error.hpp"
#include "prism/core/rng.hpp"

namespace prism::synth {

namespace {

Eigen::MatrixXd random_orthogonal(Rng& rng, std::size_t n) {
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
}

}  // namespace

DictionaryData planted_dictionary(const DictionaryConfig& c) {
  if (c.dim == 0 || c.atoms == 0 || c.k == 0 || c.k > c.atoms || c.samples == 0) {
    throw ConfigError("synth.dictionary", "need dim, atoms, samples >= 1 and 1 <= k <= atoms");
  }
  Rng rng(c.seed);
  DictionaryData out;
  out.dictionary.resize(static_cast<Eigen::Index>(c.dim), static_cast<Eigen::Index>(c.atoms));
  for (Eigen::Index j = 0; j < out.dictionary.cols(); ++j) {
    for (Eigen::Index i = 0; i < out.dictionary.rows(); ++i) out.dictionary(i, j) = rng.normal();
    out.dictionary.col(j).normalize();
  }
  std::vector<std::size_t> atoms(c.atoms);
  out.records.reserve(c.samples);
  for (std::size_t s = 0; s < c.samples; ++s) {
    std::iota(atoms.begin(), atoms.end(), std::size_t{0});
    // Partial Fisher-Yates: the first k entries are a uniform k-subset.
    for (std::size_t i = 0; i < c.k; ++i) std::swap(atoms[i], atoms[i + rng.below(c.atoms - i)]);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.dim));
    for (std::size_t i = 0; i < c.k; ++i) {
      x += rng.uniform(c.min_coeff, c.max_coeff) * out.dictionary.col(static_cast<Eigen::Index>(atoms[i]));
    }
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += c.noise * rng.normal();
    store::FeatureRecord r;
    r.access_point = {"synthetic-dictionary", "residual", 0, store::ArtifactKind::activation};
    r.sample_id = "s" + std::to_string(s);
    r.token_index = 0;
    r.vector.assign(x.data(), x.data() + x.size());
    out.records.push_back(std::move(r));
  }
  return out;
}

std::vector<double> default_signal_profile(std::size_t layers, std::size_t bottleneck) {
  std::vector<double> s(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    if (l < bottleneck) {
      s[l] = 1.0 - 0.6 * static_cast<double>(l) / static_cast<double>(bottleneck);
    } else if (l == bottleneck) {
      s[l] = 0.0;
    } else {
      s[l] = std::min(1.0, 0.5 + 0.5 * static_cast<double>(l - bottleneck - 1) / std::max<double>(1.0, static_cast<double>(layers - bottleneck - 2)));
    }
  }
  return s;
}

std::string stack_point_name(std::size_t layer) { return "decoder.layer" + std::to_string(layer) + ".residual"; }

StackData bottleneck_stack(const StackConfig& c) {
  if (c.layers < 3 || c.bottleneck == 0 || c.bottleneck + 1 >= c.layers || c.classes < 2 || c.dim < c.classes + 4 ||
      c.images == 0 || c.tokens_per_image == 0) {
    throw ConfigError("synth.stack", "need layers >= 3, an interior bottleneck, >= 2 classes and dim >= classes + 4");
  }
  StackData out;
  out.signal = c.signal.empty() ? default_signal_profile(c.layers, c.bottleneck) : c.signal;
  if (out.signal.size() != c.layers) throw ConfigError("synth.signal", "one signal level per layer required");

  Rng rng(c.seed);
  const auto d = static_cast<Eigen::Index>(c.dim);
  std::vector<Eigen::MatrixXd> rotations;
  for (std::size_t l = 0; l < c.layers; ++l) rotations.push_back(random_orthogonal(rng, c.dim));

  out.targets.source = probe::TargetSource::ground_truth;
  const std::vector<std::string> names = {"cat", "dog", "car", "person", "bicycle", "bird", "boat", "chair"};
  for (std::size_t k = 0; k < c.classes; ++k) {
    out.targets.classes.push_back(k < names.size() ? names[k] : "class" + std::to_string(k));
  }

  // Task signal: class one-hot in the first `classes` coordinates and the
  // centered box in the next four, before the per-layer rotation.
  const double class_scale = 1.5, box_scale = 20.0;
  for (std::size_t img = 0; img < c.images; ++img) {
    const std::string sample = "img" + std::to_string(img);
    for (std::size_t t = 0; t < c.tokens_per_image; ++t) {
      probe::Reference ref;
      ref.sample_id = sample;
      ref.token_index = static_cast<std::uint32_t>(t);
      ref.class_index = rng.below(c.classes);
      ref.box = {rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)};
      Eigen::VectorXd signal = Eigen::VectorXd::Zero(d);
      signal(static_cast<Eigen::Index>(ref.class_index)) = class_scale;
      for (std::size_t i = 0; i < 4; ++i) {
        signal(static_cast<Eigen::Index>(c.classes + i)) = box_scale * (ref.box[i] - (i < 2 ? 0.5 : 0.25));
      }
      Eigen::VectorXd noise(d);
      for (std::size_t l = 0; l < c.layers; ++l) {
        for (Eigen::Index i = 0; i < d; ++i) noise(i) = rng.normal(0.0, c.noise);
        const Eigen::VectorXd x = rotations[l] * (out.signal[l] * signal + noise);
        store::FeatureRecord r;
        r.access_point = {kStackModel, stack_point_name(l), static_cast<std::uint16_t>(l), store::ArtifactKind::activation};
        r.sample_id = sample;
        r.token_index = ref.token_index;
        r.vector.assign(x.data(), x.data() + x.size());
        out.records.push_back(std::move(r));
      }
      // Detector head output: class logits plus box and objectness.
      store::FeatureRecord head;
      head.access_point = {kStackModel, kHeadPoint, static_cast<std::uint16_t>(c.layers), store::ArtifactKind::prediction};
      head.sample_id = sample;
      head.token_index = ref.token_index;
      head.vector.assign(c.classes, 0.0);
      for (auto& v : head.vector) v = rng.normal(0.0, 0.5);
      head.vector[ref.class_index] += 3.0;
      store::NormBox box{};
      for (std::size_t i = 0; i < 4; ++i) {
        box[i] = static_cast<float>(std::clamp(ref.box[i] + rng.normal(0.0, 0.01), 0.01, 0.99));
      }
      head.aux.box = box;
      head.aux.objectness = static_cast<float>(rng.uniform(0.2, 1.0));
      out.records.push_back(std::move(head));
      out.targets.references.push_back(std::move(ref));
    }
  }
  return out;
}

DetectionData planted_detections(const DetectionConfig& c) {
  if (c.classes.empty() || c.images == 0 || c.max_objects == 0) {
    throw ConfigError("synth.detections", "need classes, images and max_objects >= 1");
  }
  Rng rng(c.seed);
  DetectionData out;
  nlohmann::json images = nlohmann::json::array(), annotations = nlohmann::json::array(),
                 categories = nlohmann::json::array();
  for (std::size_t k = 0; k < c.classes.size(); ++k) {
    categories.push_back({{"id", k + 1}, {"name", c.classes[k]}});
  }
  const double S = c.image_size;
  long long ann_id = 1;
  for (std::size_t img = 0; img < c.images; ++img) {
    const auto image_id = static_cast<long long>(img + 1);
    const std::string sample = std::to_string(image_id);
    images.push_back({{"id", image_id}, {"file_name", "img" + sample + ".jpg"}, {"width", S}, {"height", S}});
    // Objects live in the left 60% of the image; clutter and ungrounded
    // boxes in the right 40%, so the two never overlap.
    const std::size_t objects = 1 + rng.below(c.max_objects);
    for (std::size_t o = 0; o < objects; ++o) {
      const std::size_t cls = rng.below(c.classes.size());
      const double w = rng.uniform(0.08, 0.2) * S, h = rng.uniform(0.08, 0.3) * S;
      const double x = rng.uniform(0.0, 0.6 * S - w), y = rng.uniform(0.0, S - h);
      annotations.push_back({{"id", ann_id++}, {"image_id", image_id}, {"category_id", cls + 1}, {"bbox", {x, y, w, h}},
                             {"area", w * h}, {"iscrowd", 0}});
      // Grounded detection of this object: informative objectness, noisy
      // confidence.
      const double jx = rng.uniform(-0.04, 0.04) * w, jy = rng.uniform(-0.04, 0.04) * h;
      ovd::RawDetection d;
      d.sample_id = sample;
      d.box = ovd::Box::from_xywh(x + jx, y + jy, w, h);
      d.text = c.classes[cls];
      d.confidence = rng.uniform(0.3, 1.0);
      d.objectness = rng.uniform(0.7, 1.0);
      out.detections.push_back(std::move(d));
    }
    auto clutter_box = [&] {
      const double w = rng.uniform(0.05, 0.15) * S, h = rng.uniform(0.05, 0.2) * S;
      const double x = rng.uniform(0.62 * S, S - w), y = rng.uniform(0.0, S - h);
      return ovd::Box::from_xywh(x, y, w, h);
    };
    for (std::size_t f = 0; f < objects; ++f) {
      if (rng.uniform() >= c.false_positive_rate) continue;
      ovd::RawDetection d;
      d.sample_id = sample;
      d.box = clutter_box();
      d.text = c.classes[rng.below(c.classes.size())];
      d.confidence = rng.uniform(0.3, 1.0);
      d.objectness = rng.uniform(0.0, 0.4);
      out.detections.push_back(std::move(d));
    }
    for (std::size_t u = 0; u < objects; ++u) {
      if (rng.uniform() >= c.ungrounded_rate || c.ungrounded_texts.empty()) continue;
      ovd::RawDetection d;
      d.sample_id = sample;
      d.box = clutter_box();
      d.text = c.ungrounded_texts[rng.below(c.ungrounded_texts.size())];
      d.confidence = rng.uniform(0.6, 1.0);
      d.objectness = rng.uniform(0.0, 0.6);
      out.detections.push_back(std::move(d));
    }
  }
  out.coco = {{"images", images}, {"annotations", annotations}, {"categories", categories}};
  out.dataset = ovd::parse_coco(out.coco);
  return out;
}

}  // namespace prism::synth
