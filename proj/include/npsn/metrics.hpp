#pragma once

// Best-of-N evaluation: ADE, FDE and TCC, latent samplers (MC, scrambled
// Sobol, plain Sobol, NPSN) and repeated evaluation over scene sets.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "npsn/common.hpp"
#include "npsn/lds.hpp"
#include "npsn/npsn.hpp"
#include "npsn/predictor.hpp"
#include "npsn/scene.hpp"
#include "npsn/transform.hpp"

namespace npsn::metrics {

using predictor::FutureTrajectory;

inline double ade(const FutureTrajectory& pred, const FutureTrajectory& gt) {
  double s = 0.0;
  for (std::size_t t = 0; t < kPredLen; ++t) s += norm(pred[t] - gt[t]);
  return s / static_cast<double>(kPredLen);
}

inline double fde(const FutureTrajectory& pred, const FutureTrajectory& gt) {
  return norm(pred[kPredLen - 1] - gt[kPredLen - 1]);
}

/// Span versions for callers holding arbitrary-length series.
inline double ade(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  require(pred.size() == gt.size() && !gt.empty(), "ade: shape mismatch");
  double s = 0.0;
  for (std::size_t t = 0; t < gt.size(); ++t) s += norm(pred[t] - gt[t]);
  return s / static_cast<double>(gt.size());
}

inline double fde(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  require(pred.size() == gt.size() && !gt.empty(), "fde: shape mismatch");
  return norm(pred.back() - gt.back());
}

/// Series with a standard deviation below this (meters) count as constant.
inline constexpr double kConstantSeriesTolerance = 1e-12;

namespace detail {
// Pearson correlation of one axis. A constant ground-truth axis scores 1
// when the prediction is constant too and 0 otherwise; a constant
// prediction against a moving ground truth scores 0.
inline double axis_correlation(std::span<const Vec2> pred, std::span<const Vec2> gt, bool use_x) {
  const auto n = static_cast<double>(gt.size());
  double mp = 0.0, mg = 0.0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    mp += use_x ? pred[t].x : pred[t].y;
    mg += use_x ? gt[t].x : gt[t].y;
  }
  mp /= n;
  mg /= n;
  double spp = 0.0, sgg = 0.0, spg = 0.0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    const double p = (use_x ? pred[t].x : pred[t].y) - mp;
    const double g = (use_x ? gt[t].x : gt[t].y) - mg;
    spp += p * p;
    sgg += g * g;
    spg += p * g;
  }
  const double sd_p = std::sqrt(spp / n), sd_g = std::sqrt(sgg / n);
  const bool flat_p = sd_p < kConstantSeriesTolerance, flat_g = sd_g < kConstantSeriesTolerance;
  if (flat_g) return flat_p ? 1.0 : 0.0;
  if (flat_p) return 0.0;
  return std::clamp(spg / std::sqrt(spp * sgg), -1.0, 1.0);
}
}  // namespace detail

/// Mean over the x and y axes of the Pearson correlation between the
/// predicted and ground-truth coordinate series.
inline double tcc(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  require(pred.size() == gt.size() && gt.size() >= 2, "tcc: shape mismatch");
  return 0.5 * (detail::axis_correlation(pred, gt, true) + detail::axis_correlation(pred, gt, false));
}

inline double tcc(const FutureTrajectory& pred, const FutureTrajectory& gt) {
  return tcc(std::span<const Vec2>(pred), std::span<const Vec2>(gt));
}

struct BestOfN {
  double min_ade = 0.0;
  double min_fde = 0.0;
  double tcc = 0.0;  // of the min-ADE sample
};

/// min-ADE and min-FDE are minimized independently; lowest index wins ties.
inline BestOfN best_of_n(const predictor::PredictionSet& preds, const FutureTrajectory& gt) {
  require(!preds.empty(), "best_of_n needs at least one sample");
  BestOfN r{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), 0.0};
  std::size_t best = 0;
  for (std::size_t n = 0; n < preds.size(); ++n) {
    const double a = ade(preds[n], gt);
    if (a < r.min_ade) {
      r.min_ade = a;
      best = n;
    }
    r.min_fde = std::min(r.min_fde, fde(preds[n], gt));
  }
  r.tcc = tcc(preds[best], gt);
  return r;
}

/// Source of standard-normal latent points, one N x 2 set per pedestrian.
class LatentSampler {
 public:
  virtual ~LatentSampler() = default;
  virtual std::string name() const = 0;
  virtual bool deterministic() const = 0;
  /// `stream` identifies (repeat, scene); stochastic samplers derive all
  /// randomness from it so results do not depend on evaluation order.
  virtual std::vector<std::vector<Vec2>> draw(const scene::Scene& sc, std::size_t n, std::uint64_t stream) const = 0;
};

namespace detail {
inline std::vector<Vec2> to_normal(const lds::PointSet& u) {
  std::vector<Vec2> z;
  z.reserve(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) z.push_back(transform::box_muller_pair(u(i, 0), u(i, 1)).z);
  return z;
}
}  // namespace detail

/// IID uniforms through Box-Muller.
class McSampler final : public LatentSampler {
 public:
  std::string name() const override { return "mc"; }
  bool deterministic() const override { return false; }
  std::vector<std::vector<Vec2>> draw(const scene::Scene& sc, std::size_t n, std::uint64_t stream) const override {
    std::vector<std::vector<Vec2>> out;
    for (std::size_t l = 0; l < sc.size(); ++l)
      out.push_back(detail::to_normal(lds::mc_points(n, 2, derive_seed(stream, l, 0x6d63))));
    return out;
  }
};

/// Owen-scrambled Sobol points through Box-Muller, fresh scramble per pedestrian.
class QmcSampler final : public LatentSampler {
 public:
  std::string name() const override { return "qmc"; }
  bool deterministic() const override { return false; }
  std::vector<std::vector<Vec2>> draw(const scene::Scene& sc, std::size_t n, std::uint64_t stream) const override {
    std::vector<std::vector<Vec2>> out;
    for (std::size_t l = 0; l < sc.size(); ++l)
      out.push_back(detail::to_normal(lds::scrambled_sobol_points(n, 2, derive_seed(stream, l, 0x716d63))));
    return out;
  }
};

/// Unscrambled Sobol (origin skipped): the same points for everyone.
class SobolSampler final : public LatentSampler {
 public:
  std::string name() const override { return "sobol"; }
  bool deterministic() const override { return true; }
  std::vector<std::vector<Vec2>> draw(const scene::Scene& sc, std::size_t n, std::uint64_t) const override {
    const auto z = detail::to_normal(lds::sobol_points(n, 2, /*skip_first=*/true));
    return std::vector<std::vector<Vec2>>(sc.size(), z);
  }
};

/// Learned sampler; n must equal the model's native sample count.
class NpsnSampler final : public LatentSampler {
 public:
  explicit NpsnSampler(std::shared_ptr<const net::NpsnModel> model, std::string label = "npsn")
      : model_(std::move(model)), label_(std::move(label)) {
    require(model_ != nullptr, "NpsnSampler needs a model");
    require(model_->config().latent_dim == 2, "NpsnSampler needs an s = 2 model");
  }
  std::string name() const override { return label_; }
  bool deterministic() const override { return true; }
  std::size_t native_samples() const { return model_->config().samples; }
  std::vector<std::vector<Vec2>> draw(const scene::Scene& sc, std::size_t n, std::uint64_t) const override {
    require(n == model_->config().samples,
            "NPSN checkpoint emits " + std::to_string(model_->config().samples) + " samples, requested " +
                std::to_string(n));
    const auto s = model_->forward(sc);
    std::vector<std::vector<Vec2>> out(sc.size());
    for (std::size_t l = 0; l < sc.size(); ++l)
      for (std::size_t k = 0; k < n; ++k) out[l].push_back(transform::box_muller_pair(s(l, 0, k), s(l, 1, k)).z);
    return out;
  }

 private:
  std::shared_ptr<const net::NpsnModel> model_;
  std::string label_;
};

struct EvalReport {
  std::string sampler;
  std::size_t n_samples = 0;
  std::size_t repeats = 0;
  double min_ade = 0.0;
  double min_fde = 0.0;
  double tcc = 0.0;
  double sd_ade = 0.0;
  double sd_fde = 0.0;
  double sd_tcc = 0.0;
  std::vector<double> repeat_ade, repeat_fde, repeat_tcc;  // per-repeat means
};

/// Per-pedestrian best-of-N metrics averaged over all pedestrians of all
/// scenes; stochastic samplers repeat `repeats` times with independent
/// streams, deterministic ones run once.
inline EvalReport evaluate(const std::vector<scene::Scene>& scenes, const predictor::HeadHyper& hyper,
                           const LatentSampler& sampler, std::size_t n, std::size_t repeats, std::uint64_t seed) {
  require(!scenes.empty(), "evaluate needs at least one scene");
  require(n >= 1, "evaluate needs n >= 1");
  require(repeats >= 1, "evaluate needs repeats >= 1");
  EvalReport rep;
  rep.sampler = sampler.name();
  rep.n_samples = n;
  rep.repeats = sampler.deterministic() ? 1 : repeats;

  std::size_t peds = 0;
  for (const auto& sc : scenes) peds += sc.size();
  require(peds > 0, "evaluate needs at least one pedestrian");

  for (std::size_t r = 0; r < rep.repeats; ++r) {
    std::vector<BestOfN> per_scene(scenes.size());
    parallel_for(scenes.size(), [&](std::size_t k) {
      const auto& sc = scenes[k];
      const auto latents = sampler.draw(sc, n, derive_seed(seed, r, k));
      BestOfN acc{};
      for (std::size_t l = 0; l < sc.size(); ++l) {
        const auto head = predictor::predict_head(sc.trajectories[l], hyper);
        FutureTrajectory gt;
        for (std::size_t t = 0; t < kPredLen; ++t) gt[t] = sc.trajectories[l][kObsLen + t];
        const auto m = best_of_n(predictor::sample_futures(head, latents[l]), gt);
        acc.min_ade += m.min_ade;
        acc.min_fde += m.min_fde;
        acc.tcc += m.tcc;
      }
      per_scene[k] = acc;
    });
    BestOfN total{};
    for (const auto& s : per_scene) {
      total.min_ade += s.min_ade;
      total.min_fde += s.min_fde;
      total.tcc += s.tcc;
    }
    const double inv = 1.0 / static_cast<double>(peds);
    rep.repeat_ade.push_back(total.min_ade * inv);
    rep.repeat_fde.push_back(total.min_fde * inv);
    rep.repeat_tcc.push_back(total.tcc * inv);
  }
  rep.min_ade = mean(rep.repeat_ade);
  rep.min_fde = mean(rep.repeat_fde);
  rep.tcc = mean(rep.repeat_tcc);
  rep.sd_ade = stddev(rep.repeat_ade);
  rep.sd_fde = stddev(rep.repeat_fde);
  rep.sd_tcc = stddev(rep.repeat_tcc);
  return rep;
}

}  // namespace npsn::metrics
