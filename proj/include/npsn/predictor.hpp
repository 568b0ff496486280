#pragma once

// Constant-velocity bivariate Gaussian predictor. One s = 2 latent point per
// pedestrian is pushed through every frame's Cholesky factor, so a sample is
// a whole temporally consistent trajectory.

#include <array>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "npsn/common.hpp"
#include "npsn/scene.hpp"
#include "npsn/transform.hpp"

namespace npsn::predictor {

inline constexpr double kSigmaFloor = 1e-3;
inline constexpr double kRhoLimit = 0.99;

struct HorizonSpread {
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  double rho = 0.0;
};

/// Per-horizon covariance schedule shared by all pedestrians.
struct HeadHyper {
  std::array<HorizonSpread, kPredLen> horizons{};
};

struct FrameGaussian {
  Vec2 mu;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  double rho = 0.0;
  transform::Chol2x2 chol;
};

using GaussianHead = std::array<FrameGaussian, kPredLen>;
using FutureTrajectory = std::array<Vec2, kPredLen>;

/// N sampled futures for one pedestrian.
using PredictionSet = std::vector<FutureTrajectory>;

/// Mean displacement over the last three observed steps.
inline Vec2 recent_velocity(const scene::Trajectory& traj) {
  return (1.0 / 3.0) * (traj[kObsLen - 1] - traj[kObsLen - 4]);
}

/// t-th (1-based) constant-velocity extrapolation.
inline Vec2 cv_mean(const scene::Trajectory& traj, std::size_t t) {
  return traj[kObsLen - 1] + static_cast<double>(t) * recent_velocity(traj);
}

inline HeadHyper fit_head(const std::vector<scene::Scene>& train_scenes) {
  require(!train_scenes.empty(), "fit_head needs at least one scene");
  std::size_t count = 0;
  std::array<double, kPredLen> sx{}, sy{}, sxx{}, syy{}, sxy{};
  for (const auto& sc : train_scenes) {
    for (const auto& traj : sc.trajectories) {
      ++count;
      for (std::size_t t = 1; t <= kPredLen; ++t) {
        const Vec2 r = traj[kObsLen - 1 + t] - cv_mean(traj, t);
        sx[t - 1] += r.x;
        sy[t - 1] += r.y;
        sxx[t - 1] += r.x * r.x;
        syy[t - 1] += r.y * r.y;
        sxy[t - 1] += r.x * r.y;
      }
    }
  }
  if (count < 2) throw Error("fit_head: need at least 2 residuals per horizon, got " + std::to_string(count));
  const double n = static_cast<double>(count);
  HeadHyper hyper;
  for (std::size_t k = 0; k < kPredLen; ++k) {
    const double mx = sx[k] / n, my = sy[k] / n;
    const double vx = std::max(0.0, sxx[k] / n - mx * mx);
    const double vy = std::max(0.0, syy[k] / n - my * my);
    const double cxy = sxy[k] / n - mx * my;
    auto& h = hyper.horizons[k];
    h.sigma_x = std::max(kSigmaFloor, std::sqrt(vx));
    h.sigma_y = std::max(kSigmaFloor, std::sqrt(vy));
    const double denom = std::sqrt(vx * vy);
    h.rho = denom > 0.0 ? std::clamp(cxy / denom, -kRhoLimit, kRhoLimit) : 0.0;
  }
  return hyper;
}

/// Uses only the first 8 frames of `traj`.
inline GaussianHead predict_head(const scene::Trajectory& traj, const HeadHyper& hyper) {
  GaussianHead head;
  for (std::size_t t = 1; t <= kPredLen; ++t) {
    const auto& h = hyper.horizons[t - 1];
    auto& g = head[t - 1];
    g.mu = cv_mean(traj, t);
    g.sigma_x = h.sigma_x;
    g.sigma_y = h.sigma_y;
    g.rho = h.rho;
    g.chol = transform::cholesky_2x2(h.sigma_x, h.sigma_y, h.rho);
  }
  return head;
}

inline FutureTrajectory sample_future(const GaussianHead& head, const Vec2& latent) {
  FutureTrajectory out;
  for (std::size_t t = 0; t < kPredLen; ++t) out[t] = transform::gaussian_push(latent, head[t].mu, head[t].chol);
  return out;
}

inline PredictionSet sample_futures(const GaussianHead& head, const std::vector<Vec2>& latents) {
  PredictionSet out;
  out.reserve(latents.size());
  for (const auto& z : latents) {
    require(std::isfinite(z.x) && std::isfinite(z.y), "latent points must be finite");
    out.push_back(sample_future(head, z));
  }
  return out;
}

/// dLoss/dz for one sample given dLoss/dY at each of its frames: sum_t L_t^T g_t.
inline Vec2 sample_future_backward(const GaussianHead& head, const FutureTrajectory& grad_out) {
  Vec2 g;
  for (std::size_t t = 0; t < kPredLen; ++t) g += transform::gaussian_push_backward(grad_out[t], head[t].chol);
  return g;
}

inline constexpr int kHeadFormatVersion = 1;

inline void save_head(const HeadHyper& hyper, std::ostream& out) {
  out << "npsn-head " << kHeadFormatVersion << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < kPredLen; ++k) {
    const auto& h = hyper.horizons[k];
    out << (k + 1) << ' ' << h.sigma_x << ' ' << h.sigma_y << ' ' << h.rho << '\n';
  }
}

inline void save_head(const HeadHyper& hyper, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  save_head(hyper, out);
}

inline HeadHyper load_head(std::istream& in, const std::string& name = "<stream>") {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "npsn-head") throw ParseError(name + ": not an npsn head file");
  if (version != kHeadFormatVersion) throw ParseError(name + ": unsupported head version " + std::to_string(version));
  HeadHyper hyper;
  for (std::size_t k = 0; k < kPredLen; ++k) {
    std::size_t t = 0;
    auto& h = hyper.horizons[k];
    if (!(in >> t >> h.sigma_x >> h.sigma_y >> h.rho) || t != k + 1)
      throw ParseError(name + ": malformed horizon line " + std::to_string(k + 1));
    if (!(h.sigma_x > 0.0 && h.sigma_y > 0.0 && std::abs(h.rho) < 1.0))
      throw ParseError(name + ": invalid covariance at horizon " + std::to_string(k + 1));
  }
  return hyper;
}

inline HeadHyper load_head(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return load_head(in, path);
}

}  // namespace npsn::predictor
