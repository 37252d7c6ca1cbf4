#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "oracles.hpp"
#include "tvae/geometry.hpp"

using namespace tvae;

TEST(CoordinateGrid, CornerOnlyGrid) {
  const auto g = make_coordinate_grid<double>(2, 2);
  ASSERT_EQ(g.coords.rows(), 4);
  const double expected[4][2] = {{-1, -1}, {1, -1}, {-1, 1}, {1, 1}};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(g.coords(i, 0), expected[i][0]);
    EXPECT_EQ(g.coords(i, 1), expected[i][1]);
  }
}

TEST(CoordinateGrid, OddGridHasExactCenter) {
  const auto g = make_coordinate_grid<double>(3, 3);
  EXPECT_EQ(g.coords(4, 0), 0.0);
  EXPECT_EQ(g.coords(4, 1), 0.0);
}

TEST(CoordinateGrid, MatchesLinspace) {
  const auto g = make_coordinate_grid<double>(50, 50);
  const auto xs = oracle::linspace(-1.0, 1.0, 50);
  for (int row = 0; row < 50; ++row)
    for (int col = 0; col < 50; ++col) {
      EXPECT_NEAR(g.coords(row * 50 + col, 0), xs[col], 1e-15);
      EXPECT_NEAR(g.coords(row * 50 + col, 1), xs[row], 1e-15);
    }
  EXPECT_NEAR(g.coords(1, 0) - g.coords(0, 0), 2.0 / 49.0, 1e-15);
  EXPECT_NEAR(2.0 / 49.0, 0.040816, 1e-6);
}

TEST(CoordinateGrid, SymmetricAboutOrigin) {
  for (auto [h, w] : {std::pair{7, 4}, std::pair{50, 50}, std::pair{2, 9}}) {
    const auto g = make_coordinate_grid<double>(h, w);
    const Eigen::Index n = g.coords.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
      EXPECT_EQ(g.coords(i, 0), -g.coords(n - 1 - i, 0));
      EXPECT_EQ(g.coords(i, 1), -g.coords(n - 1 - i, 1));
    }
  }
}

TEST(CoordinateGrid, RejectsSmallDimensions) {
  EXPECT_THROW(make_coordinate_grid<double>(1, 5), InvalidDimension);
  EXPECT_THROW(make_coordinate_grid<double>(5, 0), InvalidDimension);
}

TEST(TransformCoordinates, IdentityAndQuarterTurn) {
  const auto g = make_coordinate_grid<double>(5, 5);
  const auto same = transform_coordinates(g, RigidTransform<double>{});
  EXPECT_EQ((same - g.coords).cwiseAbs().maxCoeff(), 0.0);

  Coords<double> unit(1, 2);
  unit << 1.0, 0.0;
  const auto turned = transform_coordinates(unit, RigidTransform<double>{std::numbers::pi / 2, {0.0, 0.0}});
  EXPECT_NEAR(turned(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(turned(0, 1), 1.0, 1e-15);
}

TEST(TransformCoordinates, MatchesMatrixOracle) {
  const auto g = make_coordinate_grid<double>(5, 5);
  const double th = std::numbers::pi / 4, tx = 0.2, ty = -0.1;
  const auto out = transform_coordinates(g, RigidTransform<double>{th, {tx, ty}});
  ASSERT_EQ(out.rows(), 25);
  const double m[2][2] = {{std::cos(th), -std::sin(th)}, {std::sin(th), std::cos(th)}};
  for (int i = 0; i < 25; ++i) {
    const double x = g.coords(i, 0), y = g.coords(i, 1);
    EXPECT_LT(std::abs(out(i, 0) - (m[0][0] * x + m[0][1] * y + tx)), 1e-12);
    EXPECT_LT(std::abs(out(i, 1) - (m[1][0] * x + m[1][1] * y + ty)), 1e-12);
  }
}

TEST(TransformCoordinates, CompositionProperty) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-7.0, 7.0);
  const auto g = make_coordinate_grid<double>(6, 9);
  for (int trial = 0; trial < 50; ++trial) {
    RigidTransform<double> a{u(rng), {u(rng) * 0.1, u(rng) * 0.1}};
    RigidTransform<double> b{u(rng), {u(rng) * 0.1, u(rng) * 0.1}};
    const auto two_step = transform_coordinates(transform_coordinates(g, a), b);
    const auto one_step = transform_coordinates(g, a.then(b));
    EXPECT_LT((two_step - one_step).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(TransformCoordinates, ObjectPoseCentresObject) {
  // The coordinate at the object centre maps to the template origin.
  const Vec2<double> center(0.3, -0.25);
  const auto tf = RigidTransform<double>::object_pose(1.1, center);
  Coords<double> c(1, 2);
  c << center(0), center(1);
  const auto out = transform_coordinates(c, tf);
  EXPECT_NEAR(out(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(out(0, 1), 0.0, 1e-15);
}

TEST(FourierExpand, OriginGivesZeroSineUnitCosine) {
  Rng rng(3);
  const auto spec = FourierFeatureSpec<double>::sample(8, 1.0, rng);
  Coords<double> c = Coords<double>::Zero(1, 2);
  const auto f = fourier_expand(c, spec);
  ASSERT_EQ(f.cols(), 16);
  for (int k = 0; k < 8; ++k) {
    EXPECT_EQ(f(0, k), 0.0);
    EXPECT_EQ(f(0, 8 + k), 1.0);
  }
}

TEST(FourierExpand, DeterministicAndMatchesScalarLoop) {
  Rng rng(5);
  const auto spec = FourierFeatureSpec<double>::sample(4, 1.0, rng);
  Coords<double> c(3, 2);
  c << 0.3, -0.7, 0.3, -0.7, -0.91, 0.12;
  const auto f = fourier_expand(c, spec);
  EXPECT_EQ((f.row(0) - f.row(1)).cwiseAbs().maxCoeff(), 0.0);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) {
      const double arg = 2.0 * std::numbers::pi *
                         (spec.frequencies(k, 0) * c(i, 0) + spec.frequencies(k, 1) * c(i, 1));
      EXPECT_LT(std::abs(f(i, k) - std::sin(arg)), 1e-12);
      EXPECT_LT(std::abs(f(i, 4 + k) - std::cos(arg)), 1e-12);
    }
}

TEST(FourierExpand, ShapeMismatch) {
  Rng rng(1);
  const auto spec = FourierFeatureSpec<double>::sample(4, 1.0, rng);
  Eigen::MatrixXd bad(2, 3);
  bad.setZero();
  EXPECT_THROW(fourier_expand(bad, spec), ShapeError);
}

TEST(FourierExpand, SameSeedSameFrequencies) {
  Rng a(42), b(42);
  const auto sa = FourierFeatureSpec<float>::sample(64, 1.0, a);
  const auto sb = FourierFeatureSpec<float>::sample(64, 1.0, b);
  EXPECT_EQ((sa.frequencies - sb.frequencies).cwiseAbs().maxCoeff(), 0.0f);
}

TEST(CircularCorrelation, SelfAndOffset) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 2 * std::numbers::pi);
  std::vector<double> a(500), b(500);
  for (auto& v : a) v = u(rng);
  EXPECT_NEAR(circular_correlation(a, a), 1.0, 1e-12);
  for (std::size_t i = 0; i < a.size(); ++i) b[i] = a[i] + 1.234;
  EXPECT_NEAR(circular_correlation(a, b), 1.0, 1e-12);
}

TEST(CircularCorrelation, InvariantToOffsetAndWrapping) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 0.8);
  std::vector<double> a(300), b(300);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = n(rng);
    b[i] = a[i] + 0.5 * n(rng);
  }
  const double base = circular_correlation(a, b);
  std::vector<double> a2 = a, b2 = b;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a2[i] = a[i] + 2.0 + 2 * std::numbers::pi * static_cast<double>(i % 3);
    b2[i] = b[i] - 4.0 - 2 * std::numbers::pi * static_cast<double>(i % 5);
  }
  EXPECT_NEAR(circular_correlation(a2, b2), base, 1e-12);
}

TEST(CircularCorrelation, IndependentUniformsNearZero) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 2 * std::numbers::pi);
  std::vector<double> a(10000), b(10000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = u(rng);
    b[i] = u(rng);
  }
  EXPECT_LT(std::abs(circular_correlation(a, b)), 0.05);
}

TEST(CircularCorrelation, DegenerateInputs) {
  std::vector<double> empty;
  EXPECT_THROW(circular_correlation(empty, empty), DegenerateInput);
  std::vector<double> a{0.1, 0.5, 1.0}, c{0.3, 0.3, 0.3};
  EXPECT_THROW(circular_correlation(a, c), DegenerateInput);
  std::vector<double> short_b{0.1};
  EXPECT_THROW(circular_correlation(a, short_b), DegenerateInput);
  // Zero resultant length: the circular mean is undefined.
  std::vector<double> balanced{0.0, std::numbers::pi / 2, std::numbers::pi, 3 * std::numbers::pi / 2};
  EXPECT_THROW(circular_mean(balanced), DegenerateInput);
}

TEST(WrapAngle, HalfOpenInterval) {
  EXPECT_NEAR(wrap_angle(std::numbers::pi), std::numbers::pi, 1e-15);
  EXPECT_NEAR(wrap_angle(-std::numbers::pi), std::numbers::pi, 1e-15);
  EXPECT_NEAR(wrap_angle(3 * std::numbers::pi / 2), -std::numbers::pi / 2, 1e-15);
  EXPECT_NEAR(wrap_angle(0.25 + 8 * std::numbers::pi), 0.25, 1e-12);
}
