#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prism/ovd/coco.hpp"
#include "prism/ovd/mapping.hpp"
#include "prism/probe/trajectory.hpp"
#include "prism/store/types.hpp"

namespace prism::synth {

/// Sparse superposition data: every sample is a positive combination of k
/// atoms drawn from a fixed dictionary of m unit vectors in R^d.
struct DictionaryConfig {
  std::size_t dim = 16;
  std::size_t atoms = 32;
  std::size_t k = 4;
  std::size_t samples = 50000;
  double min_coeff = 0.5;
  double max_coeff = 1.5;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

struct DictionaryData {
  /// d x m, unit columns.
  Eigen::MatrixXd dictionary;
  std::vector<store::FeatureRecord> records;
};

DictionaryData planted_dictionary(const DictionaryConfig& config);

/// A detector-like feature stack whose task signal is progressively removed
/// up to a bottleneck layer and restored afterwards.
struct StackConfig {
  std::size_t layers = 8;
  std::size_t bottleneck = 4;
  std::size_t dim = 16;
  std::size_t classes = 5;
  std::size_t images = 8000;
  std::size_t tokens_per_image = 4;
  double noise = 0.35;
  std::uint64_t seed = 0;
  /// Fraction of the task signal kept at each layer; empty means the
  /// default dip-and-recover profile.
  std::vector<double> signal;
};

struct StackData {
  std::vector<store::FeatureRecord> records;
  probe::TargetSet targets;
  std::vector<double> signal;
};

std::vector<double> default_signal_profile(std::size_t layers, std::size_t bottleneck);
StackData bottleneck_stack(const StackConfig& config);

inline constexpr const char* kStackModel = "synthetic-detector";
std::string stack_point_name(std::size_t layer);
inline constexpr const char* kHeadPoint = "decoder.head";

/// Open-vocabulary detections against planted ground truth. Grounded
/// detections use the class name; ungrounded ones use generic phrases on
/// empty regions with high confidence. Confidence carries little ranking
/// signal, objectness carries a lot.
struct DetectionConfig {
  std::vector<std::string> classes = {"cat", "dog", "car", "person", "bicycle"};
  std::size_t images = 60;
  std::size_t max_objects = 4;
  double false_positive_rate = 0.8;
  double ungrounded_rate = 1.0;
  std::vector<std::string> ungrounded_texts = {"an object", "a thing"};
  double image_size = 640;
  std::uint64_t seed = 0;
};

struct DetectionData {
  ovd::CocoDataset dataset;
  nlohmann::json coco;
  std::vector<ovd::RawDetection> detections;
};

DetectionData planted_detections(const DetectionConfig& config);

}  // namespace prism::synth
