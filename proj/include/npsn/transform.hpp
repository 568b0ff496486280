#pragma once

// Uniform -> standard normal (Box-Muller) and standard normal -> bivariate
// Gaussian (Cholesky pushforward), both with analytic Jacobians.

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "npsn/common.hpp"
#include "npsn/lds.hpp"

namespace npsn::transform {

/// Lower clamp for the radius variate; bounds |Z| by sqrt(-2 ln 1e-12) ~ 7.43.
inline constexpr double kUniformFloor = 1e-12;

/// N x s matrix of standard-normal coordinates.
class NormalPointSet {
 public:
  NormalPointSet() = default;
  NormalPointSet(std::size_t n, std::size_t dim) : n_(n), dim_(dim), values_(n * dim, 0.0) {}

  std::size_t size() const { return n_; }
  std::size_t dim() const { return dim_; }
  double operator()(std::size_t i, std::size_t d) const { return values_[i * dim_ + d]; }
  double& operator()(std::size_t i, std::size_t d) { return values_[i * dim_ + d]; }
  Vec2 pair(std::size_t i, std::size_t p = 0) const { return {(*this)(i, 2 * p), (*this)(i, 2 * p + 1)}; }

 private:
  std::size_t n_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

/// dz/du for one Box-Muller pair, row = output, column = input.
using Jacobian2 = std::array<std::array<double, 2>, 2>;

struct BoxMullerPair {
  Vec2 z;
  Jacobian2 jacobian{};
};

/// One (angle, radius) pair: z0 = r cos(2 pi u0), z1 = r sin(2 pi u0) with
/// r = sqrt(-2 ln u1). u1 is clamped to [1e-12, 1]; on the clamped side and
/// at u1 = 1 (where dr/du1 diverges) the radius derivative is reported as 0.
inline BoxMullerPair box_muller_pair(double u_angle, double u_radius) {
  const bool clamped_low = u_radius < kUniformFloor;
  const double u1 = std::clamp(u_radius, kUniformFloor, 1.0);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u_angle;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  BoxMullerPair out;
  out.z = {r * c, r * s};
  const double dr = (clamped_low || r == 0.0) ? 0.0 : -1.0 / (u1 * r);
  const double two_pi = 2.0 * std::numbers::pi;
  out.jacobian = {{{-r * s * two_pi, c * dr}, {r * c * two_pi, s * dr}}};
  return out;
}

/// Coordinates (0,1), (2,3), ... form pairs; the first of each pair is the
/// angle variate and the second the radius variate.
inline NormalPointSet box_muller(const lds::PointSet& u) {
  require(u.dim() % 2 == 0, "box_muller needs an even dimension, got " + std::to_string(u.dim()));
  NormalPointSet z(u.size(), u.dim());
  for (std::size_t i = 0; i < u.size(); ++i) {
    for (std::size_t p = 0; p < u.dim() / 2; ++p) {
      const auto bm = box_muller_pair(u(i, 2 * p), u(i, 2 * p + 1));
      z(i, 2 * p) = bm.z.x;
      z(i, 2 * p + 1) = bm.z.y;
    }
  }
  return z;
}

struct Chol2x2 {
  double l11 = 1.0;
  double l21 = 0.0;
  double l22 = 1.0;

  Vec2 apply(const Vec2& z) const { return {l11 * z.x, l21 * z.x + l22 * z.y}; }
  Vec2 apply_transpose(const Vec2& g) const { return {l11 * g.x + l21 * g.y, l22 * g.y}; }
};

inline Chol2x2 cholesky_2x2(double sigma_x, double sigma_y, double rho) {
  require(sigma_x > 0.0 && sigma_y > 0.0, "cholesky_2x2 needs positive sigmas");
  require(std::abs(rho) < 1.0, "cholesky_2x2 needs |rho| < 1");
  return {sigma_x, rho * sigma_y, sigma_y * std::sqrt(1.0 - rho * rho)};
}

/// mu + L z. The Jacobian with respect to z is L itself.
inline Vec2 gaussian_push(const Vec2& z, const Vec2& mu, const Chol2x2& chol) {
  return mu + chol.apply(z);
}

/// Pulls a gradient on the pushed point back to the latent z (L^T g).
inline Vec2 gaussian_push_backward(const Vec2& grad_out, const Chol2x2& chol) {
  return chol.apply_transpose(grad_out);
}

}  // namespace npsn::transform
