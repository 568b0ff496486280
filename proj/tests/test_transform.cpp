#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "npsn/transform.hpp"

using namespace npsn;
using transform::box_muller_pair;

TEST(BoxMuller, UnitRadiusVariateGivesOrigin) {
  for (double a : {0.0, 0.1, 0.77}) {
    const auto z = box_muller_pair(a, 1.0).z;
    EXPECT_EQ(z.x, 0.0);
    EXPECT_EQ(z.y, 0.0);
  }
}

TEST(BoxMuller, RadiusOneAxes) {
  const double u = std::exp(-0.5);
  const auto a = box_muller_pair(0.0, u).z;
  EXPECT_NEAR(a.x, 1.0, 1e-15);
  EXPECT_NEAR(a.y, 0.0, 1e-15);
  const auto b = box_muller_pair(0.25, u).z;
  EXPECT_NEAR(b.x, 0.0, 1e-15);
  EXPECT_NEAR(b.y, 1.0, 1e-15);
}

TEST(BoxMuller, ClampKeepsZeroRadiusVariateFinite) {
  const auto p = box_muller_pair(0.3, 0.0);
  EXPECT_TRUE(std::isfinite(p.z.x) && std::isfinite(p.z.y));
  EXPECT_NEAR(norm(p.z), std::sqrt(-2.0 * std::log(transform::kUniformFloor)), 1e-12);
  EXPECT_EQ(p.jacobian[0][1], 0.0);
  EXPECT_EQ(p.jacobian[1][1], 0.0);
}

TEST(BoxMuller, PointSetPairsAndRejectsOddDimension) {
  const auto u = lds::PointSet::from_rows({{0.0, std::exp(-0.5), 0.25, std::exp(-0.5)}});
  const auto z = transform::box_muller(u);
  EXPECT_NEAR(z.pair(0, 0).x, 1.0, 1e-15);
  EXPECT_NEAR(z.pair(0, 1).y, 1.0, 1e-15);
  EXPECT_THROW(transform::box_muller(lds::sobol_points(4, 3)), InvalidArgument);
}

TEST(BoxMuller, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unif(0.01, 0.99);
  const double h = 1e-6;
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = unif(rng), r = unif(rng);
    const auto j = box_muller_pair(a, r).jacobian;
    const auto da = (1.0 / (2 * h)) * (box_muller_pair(a + h, r).z - box_muller_pair(a - h, r).z);
    const auto dr = (1.0 / (2 * h)) * (box_muller_pair(a, r + h).z - box_muller_pair(a, r - h).z);
    const double fd[2][2] = {{da.x, dr.x}, {da.y, dr.y}};
    for (int o = 0; o < 2; ++o)
      for (int i = 0; i < 2; ++i) {
        const double scale = std::max({std::abs(fd[o][i]), std::abs(j[o][i]), 1e-3});
        EXPECT_LT(std::abs(fd[o][i] - j[o][i]) / scale, 1e-5) << a << ' ' << r << ' ' << o << i;
      }
  }
}

TEST(Cholesky, Examples) {
  const auto id = transform::cholesky_2x2(1, 1, 0);
  EXPECT_EQ(id.l11, 1.0);
  EXPECT_EQ(id.l21, 0.0);
  EXPECT_EQ(id.l22, 1.0);
  const auto c = transform::cholesky_2x2(2, 1, 0.5);
  EXPECT_DOUBLE_EQ(c.l11, 2.0);
  EXPECT_DOUBLE_EQ(c.l21, 0.5);
  EXPECT_NEAR(c.l22, 0.8660254037844386, 1e-15);
  EXPECT_DOUBLE_EQ(c.l11 * c.l11, 4.0);
  EXPECT_DOUBLE_EQ(c.l11 * c.l21, 1.0);
  EXPECT_NEAR(c.l21 * c.l21 + c.l22 * c.l22, 1.0, 1e-15);
}

TEST(Cholesky, NearSingularStaysValid) {
  const auto c = transform::cholesky_2x2(1.5, 0.7, 0.999999);
  EXPECT_GT(c.l22, 0.0);
  EXPECT_LT(c.l22, 1e-2);
}

TEST(Cholesky, RejectsInvalid) {
  EXPECT_THROW(transform::cholesky_2x2(0.0, 1.0, 0.0), InvalidArgument);
  EXPECT_THROW(transform::cholesky_2x2(1.0, -1.0, 0.0), InvalidArgument);
  EXPECT_THROW(transform::cholesky_2x2(1.0, 1.0, 1.0), InvalidArgument);
}

TEST(GaussianPush, Examples) {
  const auto id = transform::cholesky_2x2(1, 1, 0);
  EXPECT_EQ(transform::gaussian_push({0, 0}, {3, 4}, transform::cholesky_2x2(2, 1, 0.5)), (Vec2{3, 4}));
  EXPECT_EQ(transform::gaussian_push({1, 0}, {3, 4}, id), (Vec2{4, 4}));
}

TEST(GaussianPush, BackwardIsTransposeOfForward) {
  const auto c = transform::cholesky_2x2(1.3, 0.4, -0.6);
  const Vec2 z{0.3, -1.1}, g{0.7, 2.0}, mu{1, 1};
  const Vec2 y = transform::gaussian_push(z, mu, c) - mu;
  const Vec2 gz = transform::gaussian_push_backward(g, c);
  EXPECT_NEAR(g.x * y.x + g.y * y.y, gz.x * z.x + gz.y * z.y, 1e-14);
}

TEST(GaussianPush, SampleCovarianceMatches) {
  const auto c = transform::cholesky_2x2(2, 1, 0.5);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal;
  const int n = 100000;
  double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
  std::vector<Vec2> ys;
  for (int i = 0; i < n; ++i) ys.push_back(transform::gaussian_push({normal(rng), normal(rng)}, {0, 0}, c));
  for (const auto& y : ys) mx += y.x, my += y.y;
  mx /= n, my /= n;
  for (const auto& y : ys) {
    sxx += (y.x - mx) * (y.x - mx);
    syy += (y.y - my) * (y.y - my);
    sxy += (y.x - mx) * (y.y - my);
  }
  sxx /= n - 1, syy /= n - 1, sxy /= n - 1;
  EXPECT_NEAR(sxx, 4.0, 0.03 * 4.0);
  EXPECT_NEAR(syy, 1.0, 0.03);
  EXPECT_NEAR(sxy, 1.0, 0.03);
  const double rho = sxy / std::sqrt(sxx * syy);
  EXPECT_NEAR(rho, 0.5, 3.0 * (1 - 0.25) / std::sqrt(double(n)));
}
