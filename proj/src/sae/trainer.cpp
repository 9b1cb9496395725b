#include "prism/sae/trainer.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>

#include "prism/core/error.hpp"

namespace prism::sae {

namespace {

template <typename Param, typename Grad>
void adam_update(Param& p, const Grad& g, Param& m, Param& v, const SaeConfig& c, double bias1, double bias2) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  p.array() -= c.lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + c.adam_eps);
}

bool all_finite(const Gradients& g) {
  return g.w_enc.allFinite() && g.w_dec.allFinite() && g.b_enc.allFinite() && g.b_dec.allFinite();
}

std::string diagnostics(const SaeModel& model, const OptimizerState& opt, const LossBreakdown& loss) {
  std::ostringstream os;
  const Vector norms = model.w_dec.colwise().norm().transpose();
  std::size_t dead = 0;
  for (auto t : model.last_fired) dead += t >= model.config.effective_dead_threshold();
  os << "non-finite training state at step " << opt.step + 1 << ": recon=" << loss.recon << " aux=" << loss.aux
     << " total=" << loss.total << " l0=" << loss.l0 << " dead_latents=" << dead
     << " max|W_e|=" << model.w_enc.cwiseAbs().maxCoeff() << " decoder_norm_range=[" << norms.minCoeff() << ", "
     << norms.maxCoeff() << "]";
  return os.str();
}

std::string pair_key(const std::string& sample_id, std::uint32_t token) {
  return sample_id + '\x1f' + std::to_string(token);
}

Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

/// Two streaming passes: mean, then mean distance from it.
NormStats stream_stats(const store::FeatureTable& table, const store::AccessPointFilter& filter, std::size_t dim) {
  store::StreamOptions opts;
  opts.filter = filter;
  opts.batch_size = 4096;
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(dim));
  std::size_t n = 0;
  auto s = table.stream(opts);
  while (auto b = s.next()) {
    for (const auto& r : *b) {
      sum += to_vector(r.vector);
      ++n;
    }
  }
  if (n == 0) throw DataError("no records for normalization");
  NormStats st;
  st.mean = sum / static_cast<double>(n);
  double total = 0.0;
  auto s2 = table.stream(opts);
  while (auto b = s2.next()) {
    for (const auto& r : *b) total += (to_vector(r.vector) - st.mean).norm();
  }
  st.scale = total / static_cast<double>(n) / std::sqrt(static_cast<double>(dim));
  if (!(st.scale > 0.0)) throw NumericalError("normalization scale is zero: every sample equals the dataset mean");
  return st;
}

using TargetIndex = std::unordered_map<std::string, std::vector<double>>;

TargetIndex index_targets(const store::FeatureTable& table, const store::AccessPointFilter& target) {
  TargetIndex index;
  for (auto& r : table.read_all(target)) index.emplace(pair_key(r.sample_id, r.token_index), std::move(r.vector));
  return index;
}

void check_pairing(const store::FeatureTable& table, const TrainingTask& task, const TargetIndex& targets) {
  store::StreamOptions opts;
  opts.filter = task.source;
  opts.batch_size = 4096;
  std::vector<std::string> missing;
  std::size_t missing_count = 0;
  auto s = table.stream(opts);
  while (auto b = s.next()) {
    for (const auto& r : *b) {
      if (targets.count(pair_key(r.sample_id, r.token_index))) continue;
      if (missing.size() < 10) missing.push_back("(" + r.sample_id + ", " + std::to_string(r.token_index) + ")");
      ++missing_count;
    }
  }
  if (missing_count == 0) return;
  std::string msg = "pairing error: " + std::to_string(missing_count) + " source record(s) have no target:";
  for (const auto& k : missing) msg += " " + k;
  if (missing_count > missing.size()) msg += " ...";
  throw DataError(msg);
}

}  // namespace

SaeTrainReport train_step(SaeModel& model, OptimizerState& opt, const Matrix& x, const Matrix& target) {
  Gradients g;
  const LossBreakdown loss = compute_loss(model, x, target, &g);
  if (!std::isfinite(loss.total) || !all_finite(g)) throw NumericalError(diagnostics(model, opt, loss));

  const auto& c = model.config;
  ++opt.step;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  adam_update(model.w_enc, g.w_enc, opt.m_w_enc, opt.v_w_enc, c, bias1, bias2);
  adam_update(model.b_enc, g.b_enc, opt.m_b_enc, opt.v_b_enc, c, bias1, bias2);
  adam_update(model.w_dec, g.w_dec, opt.m_w_dec, opt.v_w_dec, c, bias1, bias2);
  adam_update(model.b_dec, g.b_dec, opt.m_b_dec, opt.v_b_dec, c, bias1, bias2);
  model.normalize_decoder();

  const auto tokens = static_cast<std::uint64_t>(x.cols());
  const auto threshold = c.effective_dead_threshold();
  SaeTrainReport rep;
  for (std::size_t i = 0; i < model.last_fired.size(); ++i) {
    model.last_fired[i] = loss.fired[i] ? 0 : model.last_fired[i] + tokens;
    rep.dead_count += model.last_fired[i] >= threshold;
  }
  rep.step = opt.step;
  rep.batch_size = static_cast<std::size_t>(x.cols());
  rep.recon_loss = loss.recon;
  rep.aux_loss = loss.aux;
  rep.total_loss = loss.total;
  rep.fvu = loss.sq_total > 0 ? loss.sq_error / loss.sq_total : (loss.sq_error == 0 ? 0.0 : INFINITY);
  rep.l0 = loss.l0;
  return rep;
}

const store::AccessPointSchema& resolve_point(const store::FeatureTableSchema& schema,
                                              const store::AccessPointFilter& filter, const std::string& role) {
  const store::AccessPointSchema* found = nullptr;
  for (const auto& ap : schema.access_points) {
    if (!filter.matches(ap.spec)) continue;
    if (found != nullptr) {
      throw ConfigError(role, "filter matches several access points; name both model and point");
    }
    found = &ap;
  }
  if (found == nullptr) throw ConfigError(role, "no access point in the table matches");
  return *found;
}

TrainingTask make_autoencoder(SaeConfig config, const store::FeatureTable& table, const store::AccessPointFilter& source) {
  const auto& ap = resolve_point(table.schema(), source, "source");
  if (config.input_dim == 0) config.input_dim = ap.dimension;
  if (config.input_dim != ap.dimension) {
    throw ConfigError("input_dim", "config says " + std::to_string(config.input_dim) + " but the point has dimension " +
                                       std::to_string(ap.dimension));
  }
  if (config.output_dim != 0 && config.output_dim != config.input_dim) {
    throw ConfigError("output_dim", "an autoencoder reconstructs its own input");
  }
  config.validate();
  return {config, {ap.spec.model_id, ap.spec.point_name}, std::nullopt};
}

TrainingTask make_transcoder(SaeConfig config, const store::FeatureTable& table, const store::AccessPointFilter& source,
                             const store::AccessPointFilter& target) {
  const auto& src = resolve_point(table.schema(), source, "source");
  const auto& tgt = resolve_point(table.schema(), target, "target");
  if (config.input_dim == 0) config.input_dim = src.dimension;
  if (config.output_dim == 0) config.output_dim = tgt.dimension;
  if (config.input_dim != src.dimension) throw ConfigError("input_dim", "does not match the source point dimension");
  if (config.output_dim != tgt.dimension) throw ConfigError("output_dim", "does not match the target point dimension");
  config.validate();
  return {config, {src.spec.model_id, src.spec.point_name}, store::AccessPointFilter{tgt.spec.model_id, tgt.spec.point_name}};
}

TrainResult train_sae(const store::FeatureTable& table, const TrainingTask& task, const TrainOptions& options) {
  const auto& cfg = task.config;
  cfg.validate();
  if (options.epochs == 0 && !options.max_steps) throw ConfigError("epochs", "must be >= 1");

  TrainResult result{SaeModel::initialize(cfg), {}, {}};
  auto& model = result.model;
  result.optimizer = OptimizerState::zeros_like(model);

  TargetIndex targets;
  if (task.is_transcoder()) {
    targets = index_targets(table, *task.target);
    check_pairing(table, task, targets);
  }
  model.input_stats = stream_stats(table, task.source, cfg.input_dim);
  model.target_stats = task.is_transcoder() ? stream_stats(table, *task.target, cfg.target_dim()) : *model.input_stats;

  const auto d_in = static_cast<Eigen::Index>(cfg.input_dim);
  const auto d_out = static_cast<Eigen::Index>(cfg.target_dim());
  // epochs == 0 means "until max_steps".
  for (std::size_t epoch = 0; options.epochs == 0 || epoch < options.epochs; ++epoch) {
    store::StreamOptions opts;
    opts.filter = task.source;
    opts.batch_size = cfg.batch_size;
    opts.shuffle_seed = cfg.seed + 0x5851f42d4c957f2dULL * (epoch + 1);
    auto stream = table.stream(opts);
    while (auto batch = stream.next()) {
      if (options.max_steps && result.optimizer.step >= *options.max_steps) return result;
      const auto n = static_cast<Eigen::Index>(batch->size());
      Matrix x(d_in, n), t(d_out, n);
      for (Eigen::Index c = 0; c < n; ++c) {
        const auto& rec = (*batch)[static_cast<std::size_t>(c)];
        x.col(c) = to_vector(rec.vector);
        t.col(c) = task.is_transcoder() ? to_vector(targets.at(pair_key(rec.sample_id, rec.token_index))) : x.col(c);
      }
      x = model.input_stats->apply(x);
      t = model.target_stats->apply(t);
      result.reports.push_back(train_step(model, result.optimizer, x, t));
      if (options.on_step) options.on_step(result.reports.back());
    }
    if (result.reports.empty()) throw DataError("source point has no records");
  }
  return result;
}

double evaluate_fvu(const SaeModel& model, const store::FeatureTable& table, const TrainingTask& task) {
  if (!model.input_stats || !model.target_stats) throw DataError("model has no normalization stats");
  TargetIndex targets;
  if (task.is_transcoder()) targets = index_targets(table, *task.target);
  store::StreamOptions opts;
  opts.filter = task.source;
  opts.batch_size = 4096;
  const auto d_out = static_cast<Eigen::Index>(model.config.target_dim());
  Vector sum = Vector::Zero(d_out), sum_sq = Vector::Zero(d_out);
  double err = 0.0;
  std::size_t n = 0;
  auto s = table.stream(opts);
  while (auto b = s.next()) {
    const auto cols = static_cast<Eigen::Index>(b->size());
    Matrix x(model.config.input_dim, cols), t(d_out, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& rec = (*b)[static_cast<std::size_t>(c)];
      x.col(c) = to_vector(rec.vector);
      t.col(c) = task.is_transcoder() ? to_vector(targets.at(pair_key(rec.sample_id, rec.token_index))) : x.col(c);
    }
    x = model.input_stats->apply(x);
    t = model.target_stats->apply(t);
    err += (t - decode(model, sparse_code(model, x))).squaredNorm();
    sum += t.rowwise().sum();
    sum_sq += t.cwiseProduct(t).rowwise().sum();
    n += static_cast<std::size_t>(cols);
  }
  if (n == 0) throw DataError("no records to evaluate");
  const double var = (sum_sq - sum.cwiseProduct(sum) / static_cast<double>(n)).sum();
  return err / var;
}

}  // namespace prism::sae
