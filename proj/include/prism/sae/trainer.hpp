#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prism/sae/model.hpp"
#include "prism/store/table.hpp"

namespace prism::sae {

struct SaeTrainReport {
  std::uint64_t step = 0;
  std::size_t batch_size = 0;
  double recon_loss = 0.0;
  double aux_loss = 0.0;
  double total_loss = 0.0;
  double fvu = 0.0;
  std::size_t dead_count = 0;
  double l0 = 0.0;
};

/// One Adam update on a normalized batch (columns are samples), followed by
/// decoder renormalization and dead-latent bookkeeping. Throws
/// NumericalError when the loss or a gradient is not finite.
SaeTrainReport train_step(SaeModel& model, OptimizerState& optimizer, const Matrix& x, const Matrix& target);

/// Where inputs and reconstruction targets come from. An ordinary SAE has no
/// separate target point.
struct TrainingTask {
  SaeConfig config;
  store::AccessPointFilter source;
  std::optional<store::AccessPointFilter> target;

  bool is_transcoder() const { return target.has_value(); }
};

/// Resolves the single access point a filter selects. Throws ConfigError
/// when it matches none or several.
const store::AccessPointSchema& resolve_point(const store::FeatureTableSchema& schema,
                                              const store::AccessPointFilter& filter, const std::string& role);

/// Ordinary SAE over one access point; input_dim is taken from the table
/// when the config leaves it at 0.
TrainingTask make_autoencoder(SaeConfig config, const store::FeatureTable& table, const store::AccessPointFilter& source);

/// SAE-shaped map from one access point to another, paired by
/// (sample_id, token_index). Dimensions left at 0 are filled from the table.
TrainingTask make_transcoder(SaeConfig config, const store::FeatureTable& table, const store::AccessPointFilter& source,
                             const store::AccessPointFilter& target);

struct TrainOptions {
  std::size_t epochs = 1;
  std::optional<std::uint64_t> max_steps;
  std::function<void(const SaeTrainReport&)> on_step;
};

struct TrainResult {
  SaeModel model;
  OptimizerState optimizer;
  std::vector<SaeTrainReport> reports;
};

/// Full training run: normalization stats from the table, seeded
/// initialization, shuffled epochs. Deterministic for a given seed.
TrainResult train_sae(const store::FeatureTable& table, const TrainingTask& task, const TrainOptions& options);

/// FVU of a trained model over every record of the task's source point.
double evaluate_fvu(const SaeModel& model, const store::FeatureTable& table, const TrainingTask& task);

}  // namespace prism::sae
