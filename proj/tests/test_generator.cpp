#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "tvae/generator.hpp"

using namespace tvae;

namespace {

GeneratorConfig tiny_config(OutputMode mode, bool per_pixel = false) {
  GeneratorConfig cfg;
  cfg.n_layers = 3;
  cfg.hidden_units = 8;
  cfg.n_freq = 4;
  cfg.z_dim = 2;
  cfg.output_mode = mode;
  cfg.per_pixel_sigma = per_pixel;
  return cfg;
}

std::vector<double> random_image(std::size_t n, std::uint64_t seed, bool binary) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = binary ? (u(rng) < 0.4 ? 1.0 : 0.0) : u(rng);
  return out;
}

struct Pose {
  std::vector<double> z;
  double theta;
  Vec2<double> t;
};

double log_prob_at(const Generator<double>& gen, const Pose& pose, const CoordinateGrid<double>& grid,
                   const std::vector<double>& image) {
  const auto params = gen.render(pose.z, pose.theta, pose.t, grid);
  return reconstruction_log_prob(params, std::span<const double>(image));
}

}  // namespace

TEST(OutputModeNames, RoundTrip) {
  for (auto m : {OutputMode::Bernoulli, OutputMode::Gaussian, OutputMode::Rgb})
    EXPECT_EQ(output_mode_from_string(to_string(m)), m);
  EXPECT_THROW(output_mode_from_string("poisson"), InvalidArgument);
}

TEST(Generator, ParameterShapes) {
  Rng rng(1);
  Generator<double> gen(GeneratorConfig{}, rng);
  std::size_t total = 0;
  for (auto* p : gen.parameters()) {
    EXPECT_EQ(p->value.size(), p->count());
    if (p->trainable) total += p->count();
  }
  // coord 512x128+512, latent 512x2, two shared 512x512+512, out 512+1.
  EXPECT_EQ(total, 512u * 128 + 512 + 512 * 2 + 2 * (512 * 512 + 512) + 512 + 1);
}

TEST(Generator, DeterministicForSeed) {
  Rng a(9), b(9);
  Generator<double> g1(tiny_config(OutputMode::Bernoulli), a), g2(tiny_config(OutputMode::Bernoulli), b);
  const auto grid = make_coordinate_grid<double>(7, 7);
  const std::vector<double> z{0.3, -0.7};
  const auto p1 = g1.render(z, 0.4, Vec2<double>(0.1, -0.2), grid);
  const auto p2 = g2.render(z, 0.4, Vec2<double>(0.1, -0.2), grid);
  EXPECT_EQ(p1.value, p2.value);
}

TEST(Generator, RenderEqualsIdentityRenderOnTransformedGrid) {
  Rng rng(2);
  Generator<float> gen(tiny_config(OutputMode::Bernoulli), rng);
  const auto grid = make_coordinate_grid<float>(12, 12);
  const std::vector<float> z{1.2f, -0.4f};
  std::mt19937_64 prng(3);
  std::uniform_real_distribution<float> ang(-4.f, 4.f), off(-0.6f, 0.6f);
  for (int trial = 0; trial < 10; ++trial) {
    const float theta = ang(prng);
    const Vec2<float> t(off(prng), off(prng));
    auto moved = grid;
    moved.coords = transform_coordinates(grid, RigidTransform<float>::object_pose(theta, t));
    const auto direct = gen.render(z, theta, t, grid);
    const auto identity = gen.render(z, 0.f, Vec2<float>::Zero(), moved);
    EXPECT_EQ(direct.value, identity.value);
  }
}

TEST(Generator, FullTurnPeriodicity) {
  Rng rng(4);
  Generator<float> gen(tiny_config(OutputMode::Bernoulli), rng);
  const auto grid = make_coordinate_grid<float>(20, 20);
  const std::vector<float> z{0.5f, 0.9f};
  for (float theta : {0.f, 0.7f, -2.1f, 3.0f}) {
    const Vec2<float> t(0.2f, -0.1f);
    const auto a = gen.render(z, theta, t, grid);
    const auto b = gen.render(z, theta + 2.f * std::numbers::pi_v<float>, t, grid);
    EXPECT_LT((a.value - b.value).cwiseAbs().maxCoeff(), 1e-6f);
  }
}

TEST(Generator, ZDimensionMismatchRejected) {
  Rng rng(5);
  Generator<double> gen(tiny_config(OutputMode::Bernoulli), rng);
  const auto grid = make_coordinate_grid<double>(3, 3);
  const std::vector<double> z{0.1, 0.2, 0.3};
  EXPECT_THROW(gen.render(z, 0.0, Vec2<double>::Zero(), grid), ShapeError);
}

TEST(Generator, OutputRanges) {
  Rng rng(6);
  const auto grid = make_coordinate_grid<double>(9, 9);
  const std::vector<double> z{3.0, -3.0};
  Generator<double> bern(tiny_config(OutputMode::Bernoulli), rng);
  const auto p = bern.render(z, 1.0, Vec2<double>::Zero(), grid);
  EXPECT_GT(p.value.minCoeff(), 0.0);
  EXPECT_LT(p.value.maxCoeff(), 1.0);
  EXPECT_EQ(p.log_sigma.size(), 0);

  Generator<double> rgb(tiny_config(OutputMode::Rgb, true), rng);
  const auto q = rgb.render(z, 1.0, Vec2<double>::Zero(), grid);
  EXPECT_EQ(q.value.cols(), 3);
  EXPECT_EQ(q.log_sigma.cols(), 3);
  EXPECT_GE(q.log_sigma.minCoeff(), kLogSigmaMin);
  EXPECT_LE(q.log_sigma.maxCoeff(), kLogSigmaMax);
}

TEST(ReconstructionLogProb, PerfectReconstructionLimit) {
  PixelParams<double> p;
  p.value.resize(4, 1);
  p.value << 0.0, 1.0, kProbClamp, 1.0 - kProbClamp;
  const std::vector<double> y{0.0, 1.0, 0.0, 1.0};
  const double lp = reconstruction_log_prob(p, std::span<const double>(y));
  EXPECT_NEAR(lp, 4 * std::log1p(-kProbClamp), 1e-15);
  EXPECT_LT(lp, 0.0);
}

TEST(ReconstructionLogProb, ChanceLevel) {
  PixelParams<double> p;
  p.value = MatrixX<double>::Constant(2500, 1, 0.5);
  const auto y = random_image(2500, 1, true);
  EXPECT_NEAR(reconstruction_log_prob(p, std::span<const double>(y)), 2500 * std::log(0.5), 1e-9);
}

TEST(ReconstructionLogProb, ScalarOracles) {
  PixelParams<double> b;
  b.value.resize(3, 1);
  b.value << 0.2, 0.7, 0.9;
  const std::vector<double> y{0.0, 1.0, 0.3};
  const double ref_b = std::log(0.8) + std::log(0.7) + 0.3 * std::log(0.9) + 0.7 * std::log(0.1);
  EXPECT_NEAR(reconstruction_log_prob(b, std::span<const double>(y)), ref_b, 1e-14);

  PixelParams<double> g;
  g.mode = OutputMode::Gaussian;
  g.value.resize(2, 1);
  g.value << 0.5, -1.0;
  g.log_sigma.resize(2, 1);
  g.log_sigma << std::log(0.5), 0.0;
  const std::vector<double> yg{1.0, 0.0};
  auto normal_logpdf = [](double x, double mu, double s) {
    return -0.5 * std::log(2 * std::numbers::pi * s * s) - (x - mu) * (x - mu) / (2 * s * s);
  };
  EXPECT_NEAR(reconstruction_log_prob(g, std::span<const double>(yg)),
              normal_logpdf(1.0, 0.5, 0.5) + normal_logpdf(0.0, -1.0, 1.0), 1e-14);
}

TEST(ReconstructionLogProb, ShapeMismatch) {
  PixelParams<double> p;
  p.value = MatrixX<double>::Constant(4, 1, 0.5);
  const std::vector<double> y(5, 0.0);
  EXPECT_THROW(reconstruction_log_prob(p, std::span<const double>(y)), ShapeError);
}

TEST(PoseBackward, MatchesFiniteDifferences) {
  const auto grid = make_coordinate_grid<double>(4, 5);
  const double theta = 0.83;
  const Vec2<double> t(0.2, -0.35);
  Coords<double> g = Coords<double>::Random(grid.coords.rows(), 2);
  auto objective = [&](double th, const Vec2<double>& tt) {
    const auto c = transform_coordinates(grid, RigidTransform<double>::object_pose(th, tt));
    return c.cwiseProduct(g).sum();
  };
  double g_theta = 0.0;
  Vec2<double> g_t;
  pose_backward(grid.coords, theta, t, g, g_theta, g_t);
  const double h = 1e-6;
  EXPECT_NEAR(g_theta, (objective(theta + h, t) - objective(theta - h, t)) / (2 * h), 1e-7);
  for (int d = 0; d < 2; ++d) {
    Vec2<double> tp = t, tm = t;
    tp(d) += h;
    tm(d) -= h;
    EXPECT_NEAR(g_t(d), (objective(theta, tp) - objective(theta, tm)) / (2 * h), 1e-7);
  }
}

class GeneratorGradient : public ::testing::TestWithParam<std::pair<OutputMode, bool>> {};

TEST_P(GeneratorGradient, MatchesFiniteDifferences) {
  const auto [mode, per_pixel] = GetParam();
  Rng rng(7);
  Generator<double> gen(tiny_config(mode, per_pixel), rng);
  const auto grid = make_coordinate_grid<double>(5, 6);
  const int ch = gen.config().channels();
  const auto image = random_image(grid.coords.rows() * ch, 8, mode == OutputMode::Bernoulli);
  const Pose pose{{0.4, -0.9}, 0.6, Vec2<double>(0.15, -0.05)};

  typename Generator<double>::Cache cache;
  const auto params = gen.render(pose.z, pose.theta, pose.t, grid, &cache);
  PixelParamsGrad<double> lg;
  reconstruction_log_prob(params, std::span<const double>(image), &lg);
  for (auto* p : gen.parameters()) p->zero_grad();
  MatrixX<double> gls = lg.log_sigma.size() ? lg.log_sigma : MatrixX<double>();
  const auto in_grad = gen.backward(params, lg.value, gls, cache);
  double g_theta = 0.0;
  Vec2<double> g_t;
  pose_backward(grid.coords, pose.theta, pose.t, in_grad.coords, g_theta, g_t);

  const double h = 1e-6;
  for (int d = 0; d < 2; ++d) {
    Pose a = pose, b = pose;
    a.z[d] += h;
    b.z[d] -= h;
    const double fd = (log_prob_at(gen, a, grid, image) - log_prob_at(gen, b, grid, image)) / (2 * h);
    EXPECT_LT(oracle::relative_error(in_grad.z[d], fd, 1e-6), 1e-5) << "z" << d;
  }
  {
    Pose a = pose, b = pose;
    a.theta += h;
    b.theta -= h;
    const double fd = (log_prob_at(gen, a, grid, image) - log_prob_at(gen, b, grid, image)) / (2 * h);
    EXPECT_LT(oracle::relative_error(g_theta, fd, 1e-6), 1e-5);
  }
  for (int d = 0; d < 2; ++d) {
    Pose a = pose, b = pose;
    a.t(d) += h;
    b.t(d) -= h;
    const double fd = (log_prob_at(gen, a, grid, image) - log_prob_at(gen, b, grid, image)) / (2 * h);
    EXPECT_LT(oracle::relative_error(g_t(d), fd, 1e-6), 1e-5) << "t" << d;
  }
  for (auto* p : gen.parameters()) {
    if (!p->trainable) continue;
    bool any_nonzero = false;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      any_nonzero = any_nonzero || p->grad[i] != 0.0;
      const double v0 = p->value[i];
      p->value[i] = v0 + h;
      const double fp = log_prob_at(gen, pose, grid, image);
      p->value[i] = v0 - h;
      const double fm = log_prob_at(gen, pose, grid, image);
      p->value[i] = v0;
      // Floor absorbs the ~1e-8 round-off of differencing a log-likelihood of order 10.
      EXPECT_LT(oracle::relative_error(p->grad[i], (fp - fm) / (2 * h), 1e-3), 1e-4) << p->name << "[" << i << "] " << p->grad[i] << " vs " << (fp - fm) / (2 * h);
    }
    EXPECT_TRUE(any_nonzero) << p->name;
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, GeneratorGradient,
                         ::testing::Values(std::make_pair(OutputMode::Bernoulli, false),
                                           std::make_pair(OutputMode::Gaussian, false),
                                           std::make_pair(OutputMode::Gaussian, true),
                                           std::make_pair(OutputMode::Rgb, false)));
