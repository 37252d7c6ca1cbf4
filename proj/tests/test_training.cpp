#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "tvae/training.hpp"

using namespace tvae;

namespace {

ModelConfig toy_config(VariantId v, int n = 8, int z_dim = 2) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.z_dim = z_dim;
  cfg.image_height = n;
  cfg.image_width = n;
  cfg.kernel_size = 3;
  cfg.channels = 3;
  cfg.n_pointwise_layers = 2;
  cfg.generator.hidden_units = 6;
  cfg.generator.n_freq = 3;
  cfg.generator.n_layers = 2;
  cfg.translation_std_px = 2.0;
  cfg.seed = 11;
  return cfg;
}

ImageBatch<double> random_binary_batch(int count, int n, std::uint64_t seed) {
  ImageBatch<double> b(count, 1, n, n);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.3);
  for (auto& v : b.pixels) v = coin(rng) ? 1.0 : 0.0;
  return b;
}

std::vector<double> rotate_quarter_planar(std::span<const double> img, int n) {
  return oracle::rotate_quarter(std::vector<double>(img.begin(), img.end()), n);
}

}  // namespace

TEST(Elbo, BookkeepingIdentity) {
  Model<double> model(toy_config(VariantId::FULL_P4));
  const auto batch = random_binary_batch(4, 8, 1);
  Rng rng(2);
  const auto d = elbo_loss(model, batch, 0.5, rng);
  EXPECT_LT(std::abs(d.loss - (-(d.recon - d.kl()))), 1e-6);
  EXPECT_GE(d.kl_tr, 0.0);
  EXPECT_GE(d.kl_theta, 0.0);
  EXPECT_GE(d.kl_z, 0.0);
}

TEST(Elbo, UntrainedModelStartsNearChance) {
  // Zeroed output weights make the generator emit p = sigmoid(0) = 1/2.
  Model<double> model(toy_config(VariantId::FULL_P4, 10));
  for (auto* p : model.parameters())
    if (p->name.rfind("generator.out.", 0) == 0) std::fill(p->value.begin(), p->value.end(), 0.0);
  const auto batch = random_binary_batch(3, 10, 3);
  Rng rng(4);
  EXPECT_NEAR(elbo_loss(model, batch, 1.0, rng).recon, 100 * std::log(0.5), 1e-9);

  // Default initialisation stays within a few percent of chance.
  Model<double> fresh(toy_config(VariantId::FULL_P4, 10));
  const double recon = elbo_loss(fresh, batch, 1.0, rng).recon;
  EXPECT_LT(std::abs(recon / (100 * std::log(0.5)) - 1.0), 0.25);
}

TEST(Elbo, MicroModelMatchesClosedForm) {
  // Smallest valid grid (2x2), one rotation, scalar z.
  ModelConfig cfg = toy_config(VariantId::V1_translation_only, 2, 1);
  cfg.kernel_size = 1;
  Model<double> model(cfg);
  ImageBatch<double> img(1, 1, 2, 2);
  img.pixels = {1.0, 0.0, 0.0, 1.0};
  Rng rng(5);
  const auto noise = LatentNoise::draw(4, 1, rng);
  const double tau = 0.6;
  const auto d = elbo_image(model, std::span<const double>(img.image(0)), tau, noise);

  const auto f = model.encode(img);
  const auto& prior = model.prior();
  double zsum = 0.0, wsum = 0.0;
  std::vector<double> q(4), w(4);
  for (int c = 0; c < 4; ++c) zsum += std::exp(f.attn_logits[c]);
  for (int c = 0; c < 4; ++c) {
    q[c] = std::exp(f.attn_logits[c]) / zsum;
    w[c] = std::exp((std::log(q[c]) + noise.gumbel[c]) / tau);
    wsum += w[c];
  }
  double mz = 0, sz = 0, mt = 0, st = 0, tx = 0, ty = 0;
  for (int c = 0; c < 4; ++c) {
    w[c] /= wsum;
    mz += w[c] * f.mu_z[c];
    sz += w[c] * std::exp(f.log_sigma_z[c]);
    mt += w[c] * f.mu_dtheta[c];
    st += w[c] * std::exp(f.log_sigma_theta[c]);
    tx += w[c] * (c % 2 == 0 ? -1.0 : 1.0);
    ty += w[c] * (c < 2 ? -1.0 : 1.0);
  }
  const std::vector<double> z{mz + sz * noise.eps_z[0]};
  const double theta = mt + st * noise.eps_theta;
  const auto p = model.generator().render(z, theta, Vec2<double>(tx, ty), model.grid());
  double recon = 0.0;
  for (int i = 0; i < 4; ++i)
    recon += img.pixels[i] * std::log(p.value(i, 0)) + (1 - img.pixels[i]) * std::log(1 - p.value(i, 0));
  // Corner-only grid: every cell sits at the same distance from the origin,
  // so p(t) is uniform over the four cells.
  double kl = 0.0;
  for (int c = 0; c < 4; ++c) {
    const double kl_theta = oracle::gaussian_kl(f.mu_dtheta[c], std::exp(2 * f.log_sigma_theta[c]), 0.0,
                                                std::numbers::pi * std::numbers::pi);
    const double kl_z = oracle::gaussian_kl(f.mu_z[c], std::exp(2 * f.log_sigma_z[c]), 0.0, 1.0);
    kl += q[c] * (std::log(q[c] / 0.25) + kl_theta + kl_z);
  }
  EXPECT_NEAR(std::exp(prior.log_p_cell(3)), 0.25, 1e-15);
  EXPECT_NEAR(d.recon, recon, 1e-10);
  EXPECT_NEAR(d.kl(), kl, 1e-10);
  EXPECT_NEAR(d.loss, kl - recon, 1e-10);
}

class FullChainGradient : public ::testing::TestWithParam<VariantId> {};

TEST_P(FullChainGradient, MatchesFiniteDifferences) {
  ModelConfig cfg = toy_config(GetParam(), 6);
  cfg.generator.output_mode = OutputMode::Gaussian;
  Model<double> model(cfg);
  const auto batch = random_binary_batch(1, 6, 7);
  const std::size_t cells = static_cast<std::size_t>(model.posterior_r()) * 36;
  Rng rng(8);
  const auto noise = LatentNoise::draw(cells, cfg.z_dim, rng);
  const double tau = 0.8;

  model.zero_grad();
  elbo_image(model, batch.image(0), tau, noise, 1.0);
  const double h = 1e-5;
  for (auto* p : model.parameters()) {
    if (!p->trainable) continue;
    bool any_nonzero = false;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      any_nonzero = any_nonzero || p->grad[i] != 0.0;
      const double v0 = p->value[i];
      p->value[i] = v0 + h;
      const double fp = elbo_image(model, batch.image(0), tau, noise).loss;
      p->value[i] = v0 - h;
      const double fm = elbo_image(model, batch.image(0), tau, noise).loss;
      p->value[i] = v0;
      EXPECT_LT(oracle::relative_error(p->grad[i], (fp - fm) / (2 * h), 1e-3), 1e-3)
          << p->name << "[" << i << "] " << p->grad[i] << " vs " << (fp - fm) / (2 * h);
    }
    EXPECT_TRUE(any_nonzero) << p->name << " received no gradient";
  }
}

INSTANTIATE_TEST_SUITE_P(Variants, FullChainGradient,
                         ::testing::Values(VariantId::FULL_P4, VariantId::V1_translation_only,
                                           VariantId::V2_gconv_collapsed, VariantId::V3_no_offset));

TEST(Elbo, QuarterTurnInvarianceWithMatchedNoise) {
  // A P4 model sees a rotated image as the same object at a rotated pose; with
  // the Gumbel noise permuted to follow the cells, the loss is unchanged. The
  // offsets j * pi/2 are mixed linearly, so a soft assignment straddling
  // components 3 and 0 breaks the symmetry; a near-hard draw restores it.
  const int n = 9, r = 4;
  Model<double> model(toy_config(VariantId::FULL_P4, n));
  const auto batch = random_binary_batch(5, n, 9);
  Rng rng(10);
  for (int b = 0; b < batch.n; ++b) {
    const auto noise = LatentNoise::draw(static_cast<std::size_t>(r) * n * n, 2, rng);
    LatentNoise moved = noise;
    for (int j = 0; j < r; ++j)
      for (int row = 0; row < n; ++row)
        for (int col = 0; col < n; ++col)
          moved.gumbel[(j * n + row) * n + col] = noise.gumbel[(((j + r - 1) % r) * n + col) * n + (n - 1 - row)];
    const auto rotated = rotate_quarter_planar(batch.image(b), n);
    const auto a = elbo_image(model, batch.image(b), 1e-3, noise);
    const auto c = elbo_image(model, std::span<const double>(rotated), 1e-3, moved);
    EXPECT_LT(oracle::relative_error(a.loss, c.loss), 1e-9);
    EXPECT_LT(oracle::relative_error(a.kl(), c.kl()), 1e-9);
  }
}

TEST(Elbo, ShapeMismatchRejected) {
  Model<double> model(toy_config(VariantId::FULL_P4));
  const auto batch = random_binary_batch(2, 7, 1);
  Rng rng(1);
  EXPECT_THROW(elbo_loss(model, batch, 1.0, rng), ShapeError);
}

TEST(Elbo, NonFiniteLossAbortsWithDiagnostics) {
  Model<double> model(toy_config(VariantId::FULL_P4));
  for (auto* p : model.parameters())
    if (p->name == "generator.out.bias") p->value[0] = std::nan("");
  const auto batch = random_binary_batch(1, 8, 1);
  Rng rng(1);
  try {
    elbo_loss(model, batch, 1.0, rng);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("recon="), std::string::npos);
  }
}

TEST(Elbo, MonteCarloReconstructionIsStable) {
  Model<double> model(toy_config(VariantId::FULL_P4, 6));
  const auto batch = random_binary_batch(1, 6, 12);
  auto mean_recon = [&](std::uint64_t seed) {
    Rng rng(seed);
    double s = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) s += elbo_loss(model, batch, 0.5, rng).recon;
    return s / draws;
  };
  const double a = mean_recon(1), b = mean_recon(2);
  EXPECT_LT(std::abs(a - b) / std::abs(a), 0.01);
}

TEST(Variants, ShapesAndOffsets) {
  const auto batch = random_binary_batch(1, 8, 1);
  Model<double> v1(toy_config(VariantId::V1_translation_only));
  EXPECT_EQ(v1.encode(batch).r, 1);
  Model<double> v2(toy_config(VariantId::V2_gconv_collapsed));
  EXPECT_EQ(v2.encode(batch).r, 1);
  EXPECT_EQ(v2.encoder().config().conv.r, 4);
  Model<double> p8(toy_config(VariantId::FULL_P8));
  EXPECT_EQ(p8.encode(batch).r, 8);
  Model<double> p16(toy_config(VariantId::FULL_P16));
  EXPECT_EQ(p16.encode(batch).r, 16);

  Model<double> full(toy_config(VariantId::FULL_P4));
  Model<double> v3(toy_config(VariantId::V3_no_offset));
  for (Model<double>* m : {&full, &v3}) {
    PosteriorField<double> f(1, 4, 8, 8, 2);
    std::fill(f.attn_logits.begin(), f.attn_logits.end(), -1e3);
    f.attn_logits[f.cell_index(1, 4, 4)] = 1e3;
    const auto s = sample_joint(f, 0, m->grid(), m->prior(), 0.5, LatentNoise::zeros(f.cells(), 2));
    EXPECT_NEAR(s.theta, m == &full ? std::numbers::pi / 2 : 0.0, 1e-15);
  }
  EXPECT_EQ(variant_from_string("V3"), VariantId::V3_no_offset);
  EXPECT_EQ(variant_from_string("FULL_P8"), VariantId::FULL_P8);
  EXPECT_THROW(variant_from_string("V9"), InvalidArgument);
}

TEST(PlateauSchedule, HalvesAfterPatienceAndStops) {
  PlateauSchedule s(2e-4, 0.5, 10, 20);
  s.record(1.0);
  for (int e = 0; e < 9; ++e) s.record(1.0);
  EXPECT_EQ(s.lr(), 2e-4);
  s.record(1.0);
  EXPECT_EQ(s.lr(), 1e-4);
  EXPECT_FALSE(s.should_stop());
  for (int e = 0; e < 9; ++e) s.record(2.0);
  EXPECT_FALSE(s.should_stop());
  s.record(2.0);
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.lr(), 5e-5);

  PlateauSchedule t(1.0, 0.5, 3, 5);
  t.record(3.0);
  t.record(4.0);
  t.record(2.0);  // improvement resets both counters
  EXPECT_EQ(t.epochs_since_best(), 0);
  EXPECT_EQ(t.lr(), 1.0);
}

TEST(TemperatureSchedule, ParseAndAnneal) {
  const auto lin = TemperatureSchedule::parse("linear:1.0:0.1:0.5");
  EXPECT_DOUBLE_EQ(lin.at(0, 100), 1.0);
  EXPECT_DOUBLE_EQ(lin.at(25, 100), 0.55);
  EXPECT_DOUBLE_EQ(lin.at(50, 100), 0.1);
  EXPECT_DOUBLE_EQ(lin.at(99, 100), 0.1);
  EXPECT_EQ(TemperatureSchedule::parse(lin.to_string()).at(10, 100), lin.at(10, 100));
  EXPECT_EQ(TemperatureSchedule::parse("const:0.3").at(7, 10), 0.3);
  EXPECT_THROW(TemperatureSchedule::parse("cosine:1:0"), InvalidArgument);
  EXPECT_THROW(TemperatureSchedule::parse("const:0"), InvalidArgument);
  EXPECT_THROW(TemperatureSchedule::parse("const:abc"), InvalidArgument);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Param<double> p("w", {3});
  p.value = {1.0, -2.0, 0.5};
  p.grad = {0.3, -5.0, 0.0};
  Adam<double> adam({&p}, 0.1);
  adam.step();
  EXPECT_NEAR(p.value[0], 0.9, 1e-8);
  EXPECT_NEAR(p.value[1], -1.9, 1e-8);
  EXPECT_EQ(p.value[2], 0.5);
}

TEST(Adam, MinimisesQuadratic) {
  Param<double> p("w", {2});
  p.value = {3.0, -4.0};
  Adam<double> adam({&p}, 0.05);
  for (int i = 0; i < 2000; ++i) {
    p.grad = {2 * p.value[0], 2 * p.value[1]};
    adam.step();
  }
  EXPECT_LT(std::abs(p.value[0]) + std::abs(p.value[1]), 1e-2);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(validate_train_config<double>(cfg));
  cfg.batch_size = 0;
  EXPECT_THROW(validate_train_config<double>(cfg), InvalidArgument);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(validate_train_config<double>(cfg), InvalidArgument);
}

TEST(Fit, DeterministicAndLogged) {
  const auto data = random_binary_batch(12, 8, 21).cast<float>();
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 2;
  tc.seed = 5;
  auto run = [&] {
    Model<float> model(toy_config(VariantId::FULL_P4));
    std::ostringstream log;
    auto res = fit(data, model, tc, &log);
    return std::make_pair(res, log.str());
  };
  const auto [a, log_a] = run();
  const auto [b, log_b] = run();
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_EQ(a.log[0].train.loss, b.log[0].train.loss);
  EXPECT_EQ(log_a, log_b);
  EXPECT_EQ(log_a.substr(0, log_a.find('\n')), kTrainLogHeader);
  EXPECT_EQ(a.log[1].step, 6);
}

TEST(Fit, EarlyStopsOnPlateau) {
  const auto data = random_binary_batch(4, 8, 22).cast<float>();
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 50;
  tc.learning_rate = 1e-30;  // the loss cannot improve beyond noise
  tc.lr_patience = 1;
  tc.early_stop_patience = 2;
  tc.temperature = TemperatureSchedule::parse("const:0.5");
  Model<float> model(toy_config(VariantId::FULL_P4));
  const auto res = fit(data, model, tc);
  EXPECT_TRUE(res.early_stopped);
  EXPECT_LT(res.epochs_run, 50);
}

TEST(Fit, CheckpointCallbackRunsEachEpoch) {
  const auto data = random_binary_batch(4, 8, 23).cast<float>();
  TrainConfig tc;
  tc.batch_size = 2;
  tc.max_epochs = 3;
  tc.checkpoint_path = "unused";
  int calls = 0;
  Model<float> model(toy_config(VariantId::FULL_P4));
  fit(data, model, tc, nullptr, CheckpointWriter<float>([&](Model<float>&, const std::string&) { ++calls; }));
  EXPECT_EQ(calls, 3);
}
