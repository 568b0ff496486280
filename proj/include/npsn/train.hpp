#pragma once

// Winner-takes-all distance loss, nearest-neighbour discrepancy loss, the
// full differentiable chain NPSN -> Box-Muller -> Cholesky pushforward, and
// the AdamW training loop.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "npsn/common.hpp"
#include "npsn/npsn.hpp"
#include "npsn/predictor.hpp"
#include "npsn/transform.hpp"

namespace npsn::train {

inline constexpr double kDefaultLambda = 1e-2;
inline constexpr double kDistanceFloor = 1e-6;

struct LossBreakdown {
  double l_dist = 0.0;
  double l_disc = 0.0;
  double total = 0.0;
  double lambda = kDefaultLambda;
};

namespace detail {
inline double trajectory_error(const predictor::FutureTrajectory& pred, const predictor::FutureTrajectory& gt) {
  double e = 0.0;
  for (std::size_t t = 0; t < kPredLen; ++t) e += norm(pred[t] - gt[t]);
  return e;
}

// Lowest index wins ties.
inline std::size_t best_sample(const predictor::PredictionSet& preds, const predictor::FutureTrajectory& gt) {
  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < preds.size(); ++n) {
    const double e = trajectory_error(preds[n], gt);
    if (e < best_err) {
      best_err = e;
      best = n;
    }
  }
  return best;
}
}  // namespace detail

/// (1/L) sum_l min_n sum_t ||Yhat_{l,n,t} - Y_{l,t}||.
inline double loss_dist(const std::vector<predictor::PredictionSet>& preds,
                        const std::vector<predictor::FutureTrajectory>& gts) {
  require(preds.size() == gts.size(), "loss_dist: prediction and ground-truth pedestrian counts differ");
  require(!preds.empty(), "loss_dist: no pedestrians");
  double total = 0.0;
  for (std::size_t l = 0; l < preds.size(); ++l) {
    require(!preds[l].empty(), "loss_dist: needs N >= 1 samples");
    total += detail::trajectory_error(preds[l][detail::best_sample(preds[l], gts[l])], gts[l]);
  }
  return total / static_cast<double>(preds.size());
}

/// dL_dist / dYhat. Only each pedestrian's winning sample receives gradient.
inline std::vector<predictor::PredictionSet> loss_dist_grad(const std::vector<predictor::PredictionSet>& preds,
                                                           const std::vector<predictor::FutureTrajectory>& gts) {
  require(preds.size() == gts.size(), "loss_dist: prediction and ground-truth pedestrian counts differ");
  std::vector<predictor::PredictionSet> grad(preds.size());
  const double scale = 1.0 / static_cast<double>(preds.size());
  for (std::size_t l = 0; l < preds.size(); ++l) {
    grad[l].assign(preds[l].size(), predictor::FutureTrajectory{});
    const std::size_t best = detail::best_sample(preds[l], gts[l]);
    for (std::size_t t = 0; t < kPredLen; ++t) {
      const Vec2 diff = preds[l][best][t] - gts[l][t];
      const double d = norm(diff);
      if (d > 0.0) grad[l][best][t] = (scale / d) * diff;
    }
  }
  return grad;
}

namespace detail {
inline double sample_distance(const net::SampleTensor& s, std::size_t l, std::size_t i, std::size_t j) {
  double sq = 0.0;
  for (std::size_t d = 0; d < s.dim(); ++d) {
    const double diff = s(l, d, i) - s(l, d, j);
    sq += diff * diff;
  }
  return std::sqrt(sq);
}

// Nearest neighbour of sample i (lowest index on ties) and its distance.
inline std::pair<std::size_t, double> nearest(const net::SampleTensor& s, std::size_t l, std::size_t i) {
  std::size_t best = i;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < s.samples(); ++j) {
    if (j == i) continue;
    const double d = sample_distance(s, l, i, j);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return {best, best_d};
}
}  // namespace detail

/// (1/(L N)) sum_l sum_i -log(max(1e-6, min_{j != i} ||S_{l,i} - S_{l,j}||)).
inline double loss_disc(const net::SampleTensor& samples) {
  require(samples.samples() >= 2, "loss_disc needs N >= 2");
  double total = 0.0;
  for (std::size_t l = 0; l < samples.pedestrians(); ++l)
    for (std::size_t i = 0; i < samples.samples(); ++i)
      total -= std::log(std::max(kDistanceFloor, detail::nearest(samples, l, i).second));
  return total / static_cast<double>(samples.pedestrians() * samples.samples());
}

/// Clamped terms (distance below 1e-6) contribute zero gradient.
inline net::SampleTensor loss_disc_grad(const net::SampleTensor& samples) {
  require(samples.samples() >= 2, "loss_disc needs N >= 2");
  net::SampleTensor g(samples.pedestrians(), samples.dim(), samples.samples());
  const double scale = 1.0 / static_cast<double>(samples.pedestrians() * samples.samples());
  for (std::size_t l = 0; l < samples.pedestrians(); ++l)
    for (std::size_t i = 0; i < samples.samples(); ++i) {
      const auto [j, dist] = detail::nearest(samples, l, i);
      if (dist <= kDistanceFloor) continue;
      for (std::size_t d = 0; d < samples.dim(); ++d) {
        const double v = -scale * (samples(l, d, i) - samples(l, d, j)) / (dist * dist);
        g(l, d, i) += v;
        g(l, d, j) -= v;
      }
    }
  return g;
}

/// Ground-truth futures (frames 9..20) of every pedestrian in a scene.
inline std::vector<predictor::FutureTrajectory> ground_truth(const scene::Scene& sc) {
  std::vector<predictor::FutureTrajectory> gts(sc.size());
  for (std::size_t l = 0; l < sc.size(); ++l)
    for (std::size_t t = 0; t < kPredLen; ++t) gts[l][t] = sc.trajectories[l][kObsLen + t];
  return gts;
}

struct SceneEvaluation {
  LossBreakdown loss;
  net::NpsnParams grad;  // empty unless requested
  net::SampleTensor samples;
  net::ForwardRecord record;
  std::vector<predictor::PredictionSet> predictions;
};

/// Loss of one scene through the whole chain, optionally with parameter
/// gradients. The discrepancy term is skipped (reported as 0) for N = 1.
inline SceneEvaluation evaluate_scene(const net::NpsnModel& model, const predictor::HeadHyper& hyper,
                                      const scene::Scene& sc, double lambda, bool want_grad) {
  require(model.config().latent_dim == 2, "the Gaussian predictor consumes s = 2 latent points");
  SceneEvaluation ev;
  ev.samples = model.forward(sc, ev.record);
  const std::size_t L = sc.size();
  const std::size_t N = model.config().samples;

  std::vector<predictor::GaussianHead> heads(L);
  std::vector<std::vector<transform::BoxMullerPair>> bm(L);
  auto& preds = ev.predictions;
  preds.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    heads[l] = predictor::predict_head(sc.trajectories[l], hyper);
    bm[l].reserve(N);
    preds[l].reserve(N);
    for (std::size_t n = 0; n < N; ++n) {
      bm[l].push_back(transform::box_muller_pair(ev.samples(l, 0, n), ev.samples(l, 1, n)));
      preds[l].push_back(predictor::sample_future(heads[l], bm[l].back().z));
    }
  }
  const auto gts = ground_truth(sc);
  ev.loss.lambda = lambda;
  ev.loss.l_dist = loss_dist(preds, gts);
  const bool use_disc = N >= 2;
  ev.loss.l_disc = use_disc ? loss_disc(ev.samples) : 0.0;
  ev.loss.total = ev.loss.l_dist + lambda * ev.loss.l_disc;
  if (!want_grad) return ev;

  net::SampleTensor d_samples(L, 2, N);
  const auto d_preds = loss_dist_grad(preds, gts);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t n = 0; n < N; ++n) {
      const Vec2 dz = predictor::sample_future_backward(heads[l], d_preds[l][n]);
      const auto& J = bm[l][n].jacobian;
      d_samples(l, 0, n) += J[0][0] * dz.x + J[1][0] * dz.y;
      d_samples(l, 1, n) += J[0][1] * dz.x + J[1][1] * dz.y;
    }
  if (use_disc && lambda != 0.0) {
    const auto d_disc = loss_disc_grad(ev.samples);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t d = 0; d < 2; ++d)
        for (std::size_t n = 0; n < N; ++n) d_samples(l, d, n) += lambda * d_disc(l, d, n);
  }
  ev.grad = model.backward(ev.record, d_samples);
  return ev;
}

struct TrainConfig {
  std::size_t epochs = 128;
  std::size_t batch_scenes = 128;
  double lr = 1e-3;
  std::size_t lr_step_epochs = 32;
  double lr_gamma = 0.5;
  double weight_decay = 1e-4;
  double lambda = kDefaultLambda;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double l_dist = 0.0;
  double l_disc = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

/// Adam with decoupled weight decay (AdamW).
class AdamW {
 public:
  AdamW(const net::NpsnParams& like, const TrainConfig& cfg)
      : cfg_(cfg), m_(net::NpsnParams::zeros_like(like)), v_(net::NpsnParams::zeros_like(like)) {}

  void step(net::NpsnParams& params, net::NpsnParams& grad, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<net::Matrix*> ms, vs;
    m_.for_each([&](const char*, net::Matrix& m) { ms.push_back(&m); });
    v_.for_each([&](const char*, net::Matrix& v) { vs.push_back(&v); });
    std::size_t i = 0;
    params.zip(grad, [&](const char*, net::Matrix& p, net::Matrix& g) {
      auto& m = *ms[i];
      auto& v = *vs[i];
      ++i;
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      p *= (1.0 - lr * cfg_.weight_decay);
      p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
    });
  }

 private:
  TrainConfig cfg_;
  net::NpsnParams m_, v_;
  std::size_t t_ = 0;
};

inline double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  const std::size_t steps = cfg.lr_step_epochs == 0 ? 0 : epoch / cfg.lr_step_epochs;
  return cfg.lr * std::pow(cfg.lr_gamma, static_cast<double>(steps));
}

struct TrainResult {
  net::NpsnModel model;
  std::vector<EpochLog> log;
};

/// Trains NPSN parameters only; the predictor head stays frozen. Scene
/// order is reshuffled each epoch from `cfg.seed`; per-scene gradients are
/// computed in parallel and summed in scene order, so results do not depend
/// on the worker count.
inline TrainResult train(net::NpsnModel model, const predictor::HeadHyper& hyper,
                         const std::vector<scene::Scene>& scenes, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  require(!scenes.empty(), "train needs at least one scene");
  require(cfg.epochs >= 1, "epochs must be at least 1");
  require(cfg.lr > 0.0, "learning rate must be positive");
  require(cfg.batch_scenes >= 1, "batch size must be at least 1");
  AdamW opt(model.params(), cfg);
  std::mt19937_64 engine(cfg.seed);
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result{model, {}};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_portable(order, engine);
    const double lr = learning_rate(cfg, epoch);
    EpochLog log{epoch + 1, 0.0, 0.0, 0.0, lr};
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_scenes, ++batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_scenes);
      std::vector<SceneEvaluation> evals(end - start);
      parallel_for(evals.size(), [&](std::size_t i) {
        evals[i] = evaluate_scene(result.model, hyper, scenes[order[start + i]], cfg.lambda, true);
      });
      net::NpsnParams grad = net::NpsnParams::zeros_like(result.model.params());
      for (auto& ev : evals) {
        if (!std::isfinite(ev.loss.total))
          throw Error("non-finite loss in epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batch));
        grad += ev.grad;
        log.l_dist += ev.loss.l_dist;
        log.l_disc += ev.loss.l_disc;
        log.total += ev.loss.total;
      }
      grad *= 1.0 / static_cast<double>(evals.size());
      opt.step(result.model.params(), grad, lr);
    }
    const double inv = 1.0 / static_cast<double>(scenes.size());
    log.l_dist *= inv;
    log.l_disc *= inv;
    log.total *= inv;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

/// Mean total loss over scenes without gradients.
inline LossBreakdown dataset_loss(const net::NpsnModel& model, const predictor::HeadHyper& hyper,
                                  const std::vector<scene::Scene>& scenes, double lambda) {
  LossBreakdown acc;
  acc.lambda = lambda;
  for (const auto& sc : scenes) {
    const auto ev = evaluate_scene(model, hyper, sc, lambda, false);
    acc.l_dist += ev.loss.l_dist;
    acc.l_disc += ev.loss.l_disc;
  }
  acc.l_dist /= static_cast<double>(scenes.size());
  acc.l_disc /= static_cast<double>(scenes.size());
  acc.total = acc.l_dist + lambda * acc.l_disc;
  return acc;
}

}  // namespace npsn::train
