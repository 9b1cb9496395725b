#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "prism/core/error.hpp"
#include "prism/sae/checkpoint.hpp"
#include "prism/sae/model.hpp"
#include "prism/sae/trainer.hpp"
#include "prism/store/table.hpp"
#include "test_util.hpp"

namespace prism::sae {
namespace {

using prism::testing::TempDir;

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, sd);
  }
  return m;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

SaeConfig small_config(Variant v, std::size_t d = 6, std::size_t e = 2, std::size_t k = 3) {
  SaeConfig c;
  c.input_dim = d;
  c.expansion_factor = e;
  c.variant = v;
  c.k = k;
  c.seed = 42;
  c.batch_size = 5;
  if (v == Variant::relu) c.l1_coeff = 0.05;
  if (v == Variant::matryoshka) c.matryoshka_prefixes = {k, d * e / 2, d * e};
  return c;
}

/// Moves the model away from its symmetric initialization.
void perturb(SaeModel& model, Rng& rng) {
  model.w_enc += random_matrix(rng, model.w_enc.rows(), model.w_enc.cols(), 0.3);
  model.b_enc = random_matrix(rng, model.b_enc.size(), 1, 0.2).col(0);
  model.b_dec = random_matrix(rng, model.b_dec.size(), 1, 0.2).col(0);
  model.w_dec += random_matrix(rng, model.w_dec.rows(), model.w_dec.cols(), 0.3);
}

std::vector<store::FeatureRecord> records_from(const Matrix& x, const std::string& point, std::uint16_t layer) {
  std::vector<store::FeatureRecord> out;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    store::FeatureRecord r;
    r.access_point = {"toy", point, layer, store::ArtifactKind::activation};
    r.sample_id = "s" + std::to_string(c / 4);
    r.token_index = static_cast<std::uint32_t>(c % 4);
    r.vector.assign(x.col(c).data(), x.col(c).data() + x.rows());
    out.push_back(std::move(r));
  }
  return out;
}

TEST(NormalizeTest, MeanMapsToZero) {
  Rng rng(1);
  const Matrix x = random_matrix(rng, 5, 40);
  const auto st = compute_norm_stats(x);
  EXPECT_LT(st.apply(Vector(st.mean)).norm(), 1e-12);
}

TEST(NormalizeTest, UnitNormDatasetIsScaledByTwo) {
  Matrix x = Matrix::Zero(4, 8);
  for (int i = 0; i < 4; ++i) {
    x(i, 2 * i) = 1.0;
    x(i, 2 * i + 1) = -1.0;
  }
  const auto st = compute_norm_stats(x);
  double mean_norm = 0;
  for (int c = 0; c < 8; ++c) mean_norm += x.col(c).norm() / 8.0;
  EXPECT_DOUBLE_EQ(st.scale, mean_norm / 2.0);
  EXPECT_DOUBLE_EQ(st.scale, 0.5);
  EXPECT_LT((st.apply(x) - 2.0 * x).norm(), 1e-12);
}

TEST(NormalizeTest, RenormalizingIsIdentity) {
  Rng rng(2);
  const Matrix x = random_matrix(rng, 6, 200, 3.0).colwise() + vec({1, 2, 3, 4, 5, 6});
  const Matrix once = compute_norm_stats(x).apply(x);
  const Matrix twice = compute_norm_stats(once).apply(once);
  EXPECT_LT((once - twice).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NormalizeTest, ConstantDatasetIsError) {
  EXPECT_THROW(compute_norm_stats(Matrix::Constant(3, 10, 2.5)), NumericalError);
}

TEST(EncodeTest, IdentityEncoder) {
  auto model = SaeModel::initialize(small_config(Variant::topk, 3, 1, 1));
  model.w_enc = Matrix::Identity(3, 3);
  model.b_enc.setZero();
  model.b_dec.setZero();
  EXPECT_EQ(encode(model, vec({3, 1, 2})), vec({3, 1, 2}));
}

TEST(EncodeTest, PreBiasCancels) {
  Rng rng(3);
  auto model = SaeModel::initialize(small_config(Variant::topk));
  perturb(model, rng);
  EXPECT_LT((encode(model, Vector(model.b_dec)) - model.b_enc).norm(), 1e-12);
}

TEST(EncodeTest, MatchesNaiveMatmul) {
  Rng rng(4);
  auto model = SaeModel::initialize(small_config(Variant::topk));
  perturb(model, rng);
  const Vector x = random_matrix(rng, 6, 1).col(0);
  const Vector z = encode(model, x);
  for (Eigen::Index i = 0; i < model.w_enc.rows(); ++i) {
    double acc = model.b_enc(i);
    for (Eigen::Index j = 0; j < 6; ++j) acc += model.w_enc(i, j) * (x(j) - model.b_dec(j));
    EXPECT_NEAR(z(i), acc, 1e-12);
  }
}

TEST(EncodeTest, DimensionMismatchIsError) {
  auto model = SaeModel::initialize(small_config(Variant::topk));
  EXPECT_THROW(encode(model, Vector(Vector::Zero(5))), DataError);
  EXPECT_THROW(decode(model, Vector(Vector::Zero(5))), DataError);
}

TEST(SparsifyTest, TopkKeepsLargest) {
  const Matrix z = vec({3, 1, 4, 1, 5});
  EXPECT_EQ(apply_mask(z, topk_mask(z, 2)).col(0), vec({0, 0, 4, 0, 5}));
}

TEST(SparsifyTest, TopkTiesGoToLowestIndex) {
  const Matrix z = vec({2, 7, 2, 2, 1});
  EXPECT_EQ(apply_mask(z, topk_mask(z, 3)).col(0), vec({2, 7, 2, 0, 0}));
}

TEST(SparsifyTest, Relu) {
  const Matrix z = vec({-1, 2, 0});
  EXPECT_EQ(apply_mask(z, relu_mask(z)).col(0), vec({0, 2, 0}));
}

TEST(SparsifyTest, BatchTopkSelectsGlobally) {
  Matrix z(2, 2);
  z << 3, 2, 1, 4;  // columns are samples [3,1] and [2,4]
  const Matrix out = apply_mask(z, batch_topk_mask(z, 1));
  Matrix want(2, 2);
  want << 3, 0, 0, 4;
  EXPECT_EQ(out, want);
}

TEST(SparsifyTest, BatchTopkMatchesGlobalSortOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix z = random_matrix(rng, 7, 1 + rng.below(6));
    const std::size_t k = 1 + rng.below(3);
    std::vector<double> values(z.data(), z.data() + z.size());
    std::sort(values.begin(), values.end(), std::greater<>());
    const double cutoff = values[k * z.cols() - 1];
    const auto mask = batch_topk_mask(z, k);
    EXPECT_EQ(static_cast<std::size_t>(mask.count()), k * z.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) EXPECT_EQ(mask(i), z(i) >= cutoff);
  }
}

TEST(SparsifyPropertyTest, TopkHasExactlyKAndIsScaleEquivariant) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix z = random_matrix(rng, 12, 4);
    const std::size_t k = 1 + rng.below(12);
    const auto mask = topk_mask(z, k);
    for (Eigen::Index c = 0; c < z.cols(); ++c) ASSERT_EQ(static_cast<std::size_t>(mask.col(c).count()), k);
    const double scale = rng.uniform(0.1, 10.0);
    ASSERT_TRUE((topk_mask(scale * z, k) == mask).all());
    ASSERT_LT((apply_mask(scale * z, topk_mask(scale * z, k)) - scale * apply_mask(z, mask)).norm(), 1e-12);
  }
}

TEST(DecodeTest, ZeroCodeGivesBias) {
  Rng rng(7);
  auto model = SaeModel::initialize(small_config(Variant::topk));
  perturb(model, rng);
  EXPECT_EQ(decode(model, Vector(Vector::Zero(12))), model.b_dec);
  Vector one_hot = Vector::Zero(12);
  one_hot(5) = 1.0;
  EXPECT_LT((decode(model, one_hot) - (model.b_dec + model.w_dec.col(5))).norm(), 1e-12);
}

TEST(DecodeTest, MatchesNaiveMatmul) {
  Rng rng(8);
  auto model = SaeModel::initialize(small_config(Variant::topk));
  perturb(model, rng);
  const Vector z = random_matrix(rng, 12, 1).col(0);
  const Vector x = decode(model, z);
  for (Eigen::Index i = 0; i < 6; ++i) {
    double acc = model.b_dec(i);
    for (Eigen::Index j = 0; j < 12; ++j) acc += model.w_dec(i, j) * z(j);
    EXPECT_NEAR(x(i), acc, 1e-12);
  }
}

TEST(InitTest, DecoderColumnsUnitAndEncoderTied) {
  const auto model = SaeModel::initialize(small_config(Variant::topk));
  for (Eigen::Index j = 0; j < 12; ++j) EXPECT_NEAR(model.w_dec.col(j).norm(), 1.0, 1e-12);
  EXPECT_EQ(model.w_enc, model.w_dec.transpose());
  EXPECT_TRUE(model.b_enc.isZero());
  EXPECT_TRUE(model.b_dec.isZero());
  EXPECT_EQ(SaeModel::initialize(small_config(Variant::topk)).w_dec, model.w_dec);
}

// Central finite differences of the total loss against the analytic gradient.
void check_gradients(SaeModel model, const Matrix& x, const Matrix& t) {
  Gradients g;
  compute_loss(model, x, t, &g);
  const double h = 1e-6;
  auto check = [&](double* param, const double* grad, Eigen::Index n, const char* name) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double orig = param[i];
      param[i] = orig + h;
      const double up = compute_loss(model, x, t, nullptr).total;
      param[i] = orig - h;
      const double down = compute_loss(model, x, t, nullptr).total;
      param[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
      ASSERT_LE(std::abs(numeric - grad[i]), 1e-4 * scale) << name << "[" << i << "]";
    }
  };
  check(model.w_enc.data(), g.w_enc.data(), model.w_enc.size(), "w_enc");
  check(model.b_enc.data(), g.b_enc.data(), model.b_enc.size(), "b_enc");
  check(model.w_dec.data(), g.w_dec.data(), model.w_dec.size(), "w_dec");
  check(model.b_dec.data(), g.b_dec.data(), model.b_dec.size(), "b_dec");
}

class GradientTest : public ::testing::TestWithParam<Variant> {};

TEST_P(GradientTest, MatchesFiniteDifferences) {
  Rng rng(100 + static_cast<int>(GetParam()));
  auto cfg = small_config(GetParam());
  cfg.dead_threshold_tokens = 10;
  cfg.aux_k = 3;
  for (int trial = 0; trial < 3; ++trial) {
    auto model = SaeModel::initialize(cfg);
    perturb(model, rng);
    // Half the latents dead so the auxiliary loss contributes.
    for (std::size_t i = 0; i < model.last_fired.size(); ++i) model.last_fired[i] = i % 2 ? 50 : 0;
    const Matrix x = random_matrix(rng, 6, 5);
    const Matrix t = random_matrix(rng, 6, 5);
    const auto loss = compute_loss(model, x, t, nullptr);
    ASSERT_GT(loss.aux, 0.0);
    check_gradients(model, x, t);
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariants, GradientTest,
                         ::testing::Values(Variant::relu, Variant::topk, Variant::batch_topk, Variant::matryoshka),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(TranscoderGradientTest, MatchesFiniteDifferences) {
  Rng rng(9);
  auto cfg = small_config(Variant::topk);
  cfg.output_dim = 4;
  cfg.dead_threshold_tokens = 10;
  auto model = SaeModel::initialize(cfg);
  perturb(model, rng);
  for (std::size_t i = 0; i < model.last_fired.size(); i += 3) model.last_fired[i] = 100;
  EXPECT_EQ(model.w_dec.rows(), 4);
  EXPECT_FALSE(cfg.uses_pre_bias());
  check_gradients(model, random_matrix(rng, 6, 5), random_matrix(rng, 4, 5));
}

TEST(TrainStepTest, ZeroBatchHasZeroLossAndDecoderGradient) {
  auto model = SaeModel::initialize(small_config(Variant::topk));
  const Matrix zero = Matrix::Zero(6, 5);
  Gradients g;
  const auto loss = compute_loss(model, zero, zero, &g);
  EXPECT_EQ(loss.recon, 0.0);
  EXPECT_TRUE(g.w_dec.isZero());
}

TEST(TrainStepTest, TopkL0AndDecoderNormsHoldFor1000Steps) {
  Rng rng(10);
  for (auto v : {Variant::topk, Variant::batch_topk, Variant::matryoshka, Variant::relu}) {
    auto cfg = small_config(v);
    cfg.lr = 1e-3;
    auto model = SaeModel::initialize(cfg);
    auto opt = OptimizerState::zeros_like(model);
    double l0_sum = 0;
    for (int step = 0; step < 1000; ++step) {
      const Matrix x = random_matrix(rng, 6, 5);
      const auto rep = train_step(model, opt, x, x);
      if (v == Variant::topk || v == Variant::matryoshka) ASSERT_EQ(rep.l0, 3.0) << to_string(v);
      l0_sum += rep.l0;
      for (Eigen::Index j = 0; j < model.w_dec.cols(); ++j) {
        ASSERT_NEAR(model.w_dec.col(j).norm(), 1.0, 1e-6) << to_string(v) << " step " << step;
      }
    }
    if (v == Variant::batch_topk) EXPECT_DOUBLE_EQ(l0_sum / 1000, 3.0);
    EXPECT_EQ(opt.step, 1000u);
  }
}

TEST(TrainStepTest, LastFiredBookkeeping) {
  Rng rng(11);
  auto cfg = small_config(Variant::topk);
  auto model = SaeModel::initialize(cfg);
  auto opt = OptimizerState::zeros_like(model);
  for (int step = 0; step < 20; ++step) {
    const auto before = model.last_fired;
    const Matrix x = random_matrix(rng, 6, 5);
    const auto fired = compute_loss(model, x, x, nullptr).fired;
    train_step(model, opt, x, x);
    for (std::size_t i = 0; i < fired.size(); ++i) {
      ASSERT_EQ(model.last_fired[i], fired[i] ? 0u : before[i] + 5u);
    }
  }
}

TEST(TrainStepTest, LossTrendsDownWithoutSparsity) {
  Rng rng(12);
  auto cfg = small_config(Variant::topk, 6, 2, 12);
  cfg.aux_coeff = 0.0;
  auto model = SaeModel::initialize(cfg);
  auto opt = OptimizerState::zeros_like(model);
  // Rank-3 data, fixed batch.
  const Matrix x = random_matrix(rng, 6, 3) * random_matrix(rng, 3, 64);
  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) losses.push_back(train_step(model, opt, x, x).recon_loss);
  for (int w = 1; w < 10; ++w) {
    double prev = 0, cur = 0;
    for (int i = 0; i < 10; ++i) {
      prev += losses[(w - 1) * 10 + i];
      cur += losses[w * 10 + i];
    }
    EXPECT_LT(cur, prev) << "window " << w;
  }
  EXPECT_LT(losses.back(), losses.front());
}

TEST(TrainStepTest, NonFiniteInputAbortsWithDiagnostics) {
  auto model = SaeModel::initialize(small_config(Variant::topk));
  auto opt = OptimizerState::zeros_like(model);
  Matrix x = Matrix::Ones(6, 5);
  x(2, 3) = std::numeric_limits<double>::quiet_NaN();
  try {
    train_step(model, opt, x, x);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
  EXPECT_EQ(opt.step, 0u);
}

TEST(ConfigTest, RejectsInvalidFields) {
  auto cfg = small_config(Variant::topk);
  cfg.k = 13;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config(Variant::matryoshka);
  cfg.matryoshka_prefixes = {6, 4, 12};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.matryoshka_prefixes = {4, 8};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config(Variant::topk);
  cfg.lr = 0;
  cfg.input_dim = 0;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_GE(e.fields().size(), 2u);
  }
  EXPECT_THROW(parse_variant("gated"), ConfigError);
}

TEST(ConfigTest, JsonRoundTrip) {
  auto cfg = small_config(Variant::matryoshka);
  const auto back = SaeConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
}

TEST(CheckpointTest, RoundTripIsExact) {
  Rng rng(13);
  auto model = SaeModel::initialize(small_config(Variant::relu));
  auto opt = OptimizerState::zeros_like(model);
  for (int i = 0; i < 5; ++i) {
    const Matrix x = random_matrix(rng, 6, 5);
    train_step(model, opt, x, x);
  }
  model.input_stats = compute_norm_stats(random_matrix(rng, 6, 20));
  model.target_stats = model.input_stats;
  TempDir dir;
  save_checkpoint(dir / "sae.bin", model, opt);
  const auto back = load_checkpoint(dir / "sae.bin");
  EXPECT_EQ(back.model.w_enc, model.w_enc);
  EXPECT_EQ(back.model.w_dec, model.w_dec);
  EXPECT_EQ(back.model.b_enc, model.b_enc);
  EXPECT_EQ(back.model.b_dec, model.b_dec);
  EXPECT_EQ(back.model.last_fired, model.last_fired);
  EXPECT_EQ(back.optimizer.v_w_dec, opt.v_w_dec);
  EXPECT_EQ(back.optimizer.step, 5u);
  EXPECT_EQ(back.model.input_stats->mean, model.input_stats->mean);
  EXPECT_EQ(back.model.input_stats->scale, model.input_stats->scale);
  EXPECT_EQ(serialize_checkpoint(back.model, back.optimizer), serialize_checkpoint(model, opt));
}

TEST(CheckpointTest, RejectsGarbage) {
  EXPECT_THROW(deserialize_checkpoint("not a checkpoint at all"), DataError);
  auto model = SaeModel::initialize(small_config(Variant::topk));
  auto bytes = serialize_checkpoint(model, OptimizerState::zeros_like(model));
  bytes.pop_back();
  EXPECT_THROW(deserialize_checkpoint(bytes), DataError);
}

class TranscoderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(14);
    source_ = random_matrix(rng, 4, 512, 2.0).colwise() + vec({1, -1, 0.5, 3});
    auto records = records_from(source_, "layer0", 0);
    auto doubled = records_from(2.0 * source_, "layer1", 1);
    records.insert(records.end(), doubled.begin(), doubled.end());
    store::write_table(records, dir_.path() / "t", store::Dtype::f64);
  }

  TempDir dir_;
  Matrix source_;
};

TEST_F(TranscoderTest, SelfPairingMatchesAutoencoder) {
  const auto table = store::FeatureTable::open(dir_.path() / "t");
  auto cfg = small_config(Variant::topk, 0, 2, 2);
  cfg.batch_size = 32;
  const auto ae = make_autoencoder(cfg, table, {std::nullopt, "layer0"});
  const auto tc = make_transcoder(cfg, table, {std::nullopt, "layer0"}, {std::nullopt, "layer0"});
  EXPECT_EQ(ae.config.input_dim, 4u);
  TrainOptions opts;
  opts.epochs = 2;
  const auto a = train_sae(table, ae, opts);
  const auto b = train_sae(table, tc, opts);
  ASSERT_EQ(a.reports.size(), b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    ASSERT_EQ(a.reports[i].total_loss, b.reports[i].total_loss) << "step " << i;
  }
}

TEST_F(TranscoderTest, LearnsDoublingMap) {
  const auto table = store::FeatureTable::open(dir_.path() / "t");
  auto cfg = small_config(Variant::topk, 0, 1, 4);
  cfg.batch_size = 64;
  cfg.lr = 1e-2;
  const auto task = make_transcoder(cfg, table, {std::nullopt, "layer0"}, {std::nullopt, "layer1"});
  TrainOptions opts;
  opts.epochs = 0;
  opts.max_steps = 500;
  const auto result = train_sae(table, task, opts);
  ASSERT_EQ(result.reports.size(), 500u);
  EXPECT_LT(result.reports.back().recon_loss, 1e-3);
  EXPECT_LT(evaluate_fvu(result.model, table, task), 1e-3);
}

TEST_F(TranscoderTest, MissingPairIsNamed) {
  auto records = records_from(source_.leftCols(8), "layer0", 0);
  auto target = records_from(source_.leftCols(8), "layer1", 1);
  target.erase(target.begin() + 5);
  records.insert(records.end(), target.begin(), target.end());
  store::write_table(records, dir_.path() / "gap");
  const auto table = store::FeatureTable::open(dir_.path() / "gap");
  const auto task = make_transcoder(small_config(Variant::topk, 0, 2, 2), table, {std::nullopt, "layer0"},
                                    {std::nullopt, "layer1"});
  try {
    train_sae(table, task, {});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("(s1, 1)"), std::string::npos) << e.what();
  }
}

TEST_F(TranscoderTest, DimensionConflictIsConfigError) {
  const auto table = store::FeatureTable::open(dir_.path() / "t");
  EXPECT_THROW(make_autoencoder(small_config(Variant::topk, 5, 2, 2), table, {std::nullopt, "layer0"}), ConfigError);
  EXPECT_THROW(make_autoencoder(small_config(Variant::topk, 0, 2, 2), table, {}), ConfigError);
  EXPECT_THROW(make_autoencoder(small_config(Variant::topk, 0, 2, 2), table, {std::nullopt, "nope"}), ConfigError);
}

TEST_F(TranscoderTest, TrainingIsDeterministic) {
  const auto table = store::FeatureTable::open(dir_.path() / "t");
  auto cfg = small_config(Variant::batch_topk, 0, 2, 2);
  cfg.batch_size = 16;
  const auto task = make_autoencoder(cfg, table, {std::nullopt, "layer0"});
  const auto a = train_sae(table, task, {});
  const auto b = train_sae(table, task, {});
  EXPECT_EQ(serialize_checkpoint(a.model, a.optimizer), serialize_checkpoint(b.model, b.optimizer));
}

}  // namespace
}  // namespace prism::sae
