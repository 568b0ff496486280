#include <gtest/gtest.h>

#include <cstdlib>

#include <algorithm>
#include <cmath>
#include <random>

#include "npsn/metrics.hpp"
#include "npsn/train.hpp"
#include "test_support.hpp"

using namespace npsn;

namespace {

predictor::FutureTrajectory offset_path(const predictor::FutureTrajectory& gt, Vec2 off) {
  auto p = gt;
  for (auto& v : p) v = v + off;
  return p;
}

predictor::FutureTrajectory random_path(std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  predictor::FutureTrajectory p;
  for (auto& v : p) v = {n01(rng), n01(rng)};
  return p;
}

net::SampleTensor two_samples(Vec2 a, Vec2 b) {
  net::SampleTensor s(1, 2, 2);
  s(0, 0, 0) = a.x, s(0, 1, 0) = a.y, s(0, 0, 1) = b.x, s(0, 1, 1) = b.y;
  return s;
}

std::vector<scene::Scene> synth(std::size_t n, std::uint64_t seed, std::vector<double> branches = {0.34, 0.33, 0.33},
                                 double noise = 0.05) {
  scene::SynthSpec spec;
  spec.n_scenes = n;
  spec.seed = seed;
  spec.branch_probabilities = std::move(branches);
  spec.noise_sigma = noise;
  return scene::synth_generate(spec);
}

}  // namespace

TEST(LossDist, MinSelection) {
  predictor::FutureTrajectory gt{};
  // Errors 3.0 and 1.2 summed over the 12 frames.
  const auto a = offset_path(gt, {3.0 / 12.0, 0});
  const auto b = offset_path(gt, {0, 1.2 / 12.0});
  EXPECT_NEAR(train::loss_dist({{a, b}}, {gt}), 1.2, 1e-12);
}

TEST(LossDist, ExactSampleGivesZero) {
  std::mt19937_64 rng(1);
  const auto gt = random_path(rng);
  EXPECT_EQ(train::loss_dist({{random_path(rng), gt, random_path(rng)}}, {gt}), 0.0);
}

TEST(LossDist, UnitOffsetSumsFrames) {
  predictor::FutureTrajectory gt{};
  EXPECT_DOUBLE_EQ(train::loss_dist({{offset_path(gt, {1, 0})}}, {gt}), 12.0);
}

TEST(LossDist, MeanOverPedestrians) {
  predictor::FutureTrajectory gt{};
  EXPECT_DOUBLE_EQ(train::loss_dist({{offset_path(gt, {1, 0})}, {offset_path(gt, {0, 2})}}, {gt, gt}), 18.0);
}

TEST(LossDist, PropertyMinOverSamplesAndPermutationInvariant) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t L = 1 + rng() % 4, N = 1 + rng() % 8;
    std::vector<predictor::PredictionSet> preds(L);
    std::vector<predictor::FutureTrajectory> gts(L);
    double expected = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      gts[l] = random_path(rng);
      double best = 1e300;
      for (std::size_t n = 0; n < N; ++n) {
        preds[l].push_back(random_path(rng));
        double e = 0.0;
        for (std::size_t t = 0; t < kPredLen; ++t) e += norm(preds[l][n][t] - gts[l][t]);
        best = std::min(best, e);
      }
      expected += best;
    }
    expected /= static_cast<double>(L);
    const double got = train::loss_dist(preds, gts);
    ASSERT_NEAR(got, expected, 1e-12);
    for (auto& p : preds) std::shuffle(p.begin(), p.end(), rng);
    ASSERT_DOUBLE_EQ(train::loss_dist(preds, gts), got);
  }
}

TEST(LossDist, GradientOnlyOnWinner) {
  predictor::FutureTrajectory gt{};
  const auto far = offset_path(gt, {2, 0});
  const auto near = offset_path(gt, {0, 1});
  const auto g = train::loss_dist_grad({{far, near}}, {gt});
  for (std::size_t t = 0; t < kPredLen; ++t) {
    EXPECT_EQ(g[0][0][t], (Vec2{0, 0}));
    EXPECT_EQ(g[0][1][t], (Vec2{0, 1}));
  }
}

TEST(LossDisc, HalfApartIsLogTwo) {
  EXPECT_NEAR(train::loss_disc(two_samples({0.25, 0.5}, {0.75, 0.5})), std::log(2.0), 1e-12);
}

TEST(LossDisc, UnitApartIsZero) { EXPECT_EQ(train::loss_disc(two_samples({0, 0}, {1, 0})), 0.0); }

TEST(LossDisc, CoincidentSamplesAreClamped) {
  const auto s = two_samples({0.3, 0.3}, {0.3, 0.3});
  EXPECT_DOUBLE_EQ(train::loss_disc(s), -std::log(train::kDistanceFloor));
  for (double v : train::loss_disc_grad(s).values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(LossDisc, NeedsTwoSamples) { EXPECT_THROW(train::loss_disc(net::SampleTensor(1, 2, 1)), InvalidArgument); }

TEST(LossDisc, PropertyPermutationAndTranslationInvariant) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.2, 0.8), shift(-0.15, 0.15);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t L = 1 + rng() % 3, N = 2 + rng() % 10;
    net::SampleTensor s(L, 2, N);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t d = 0; d < 2; ++d)
        for (std::size_t n = 0; n < N; ++n) s(l, d, n) = u(rng);
    const double base = train::loss_disc(s);
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    net::SampleTensor p(L, 2, N), t(L, 2, N);
    for (std::size_t l = 0; l < L; ++l) {
      const double dx = shift(rng), dy = shift(rng);
      for (std::size_t n = 0; n < N; ++n) {
        p(l, 0, n) = s(l, 0, perm[n]), p(l, 1, n) = s(l, 1, perm[n]);
        t(l, 0, n) = s(l, 0, n) + dx, t(l, 1, n) = s(l, 1, n) + dy;
      }
    }
    ASSERT_NEAR(train::loss_disc(p), base, 1e-12);
    ASSERT_NEAR(train::loss_disc(t), base, 1e-9);
  }
}

TEST(LossDisc, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    net::SampleTensor s(2, 2, 6);
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t d = 0; d < 2; ++d)
        for (std::size_t n = 0; n < 6; ++n) s(l, d, n) = u(rng);
    const auto g = train::loss_disc_grad(s);
    const double h = 1e-7;
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t d = 0; d < 2; ++d)
        for (std::size_t n = 0; n < 6; ++n) {
          auto up = s, down = s;
          up(l, d, n) += h, down(l, d, n) -= h;
          const double fd = (train::loss_disc(up) - train::loss_disc(down)) / (2 * h);
          EXPECT_LT(npsn::testing::relative_error(g(l, d, n), fd), 1e-5);
        }
  }
}

TEST(EvaluateScene, SkipsDiscrepancyForSingleSample) {
  net::NpsnConfig c;
  c.samples = 1;
  c.hidden = 4;
  const auto ev =
      train::evaluate_scene(net::NpsnModel(c, 1), npsn::testing::test_hyper(), npsn::testing::random_scene(2, 3), 0.5, true);
  EXPECT_EQ(ev.loss.l_disc, 0.0);
  EXPECT_EQ(ev.loss.total, ev.loss.l_dist);
}

TEST(EvaluateScene, GradientMatchesFiniteDifferencesWithoutDiscrepancy) {
  net::NpsnConfig c;
  c.samples = 3;
  c.hidden = 5;
  const auto check =
      npsn::testing::check_model_gradient(net::NpsnModel(c, 9), npsn::testing::test_hyper(), npsn::testing::random_scene(4, 8), 0.0);
  EXPECT_LT(check.max_rel_err, 1e-4);
}

TEST(LearningRate, HalvesEveryStep) {
  train::TrainConfig cfg;
  EXPECT_DOUBLE_EQ(train::learning_rate(cfg, 0), 1e-3);
  EXPECT_DOUBLE_EQ(train::learning_rate(cfg, 31), 1e-3);
  EXPECT_DOUBLE_EQ(train::learning_rate(cfg, 32), 5e-4);
  EXPECT_DOUBLE_EQ(train::learning_rate(cfg, 127), 1.25e-4);
}

TEST(Train, StraightNoiseFreeWithoutDiscrepancyConverges) {
  const auto scenes = synth(200, 1, {1.0}, 0.0);
  // A broad head so the sampler, not the floor, decides the error.
  const auto hyper = npsn::testing::test_hyper();
  net::NpsnConfig c;
  c.samples = 4;
  train::TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_scenes = 32;
  cfg.lr = 3e-3;
  cfg.lambda = 0.0;
  const auto result = train::train(net::NpsnModel(c, 2), hyper, scenes, cfg);
  for (std::size_t e = 1; e < 10; ++e) EXPECT_LT(result.log[e].l_dist, result.log[e - 1].l_dist) << "epoch " << e;
  EXPECT_LT(result.log.back().l_dist, 0.15 * result.log.front().l_dist);
}

TEST(Train, DiscrepancyTermSpreadsSamples) {
  const auto scenes = synth(200, 2);
  const auto hyper = predictor::fit_head(scenes);
  net::NpsnConfig c;
  c.samples = 8;
  c.hidden = 16;
  train::TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_scenes = 32;
  auto spread = [&](double lambda) {
    cfg.lambda = lambda;
    const auto model = train::train(net::NpsnModel(c, 3), hyper, scenes, cfg).model;
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& sc : scenes) {
      const auto s = model.forward(sc);
      for (std::size_t l = 0; l < sc.size(); ++l, ++count)
        acc += train::detail::nearest(s, l, 0).second;
    }
    return acc / static_cast<double>(count);
  };
  EXPECT_GT(spread(1e-2), spread(0.0));
}

TEST(Train, SameSeedSameParametersAtAnyThreadCount) {
  const auto scenes = synth(60, 3);
  const auto hyper = predictor::fit_head(scenes);
  net::NpsnConfig c;
  c.samples = 5;
  c.hidden = 8;
  train::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_scenes = 16;
  cfg.seed = 4;
  ::setenv("NPSN_THREADS", "1", 1);
  const auto a = train::train(net::NpsnModel(c, 1), hyper, scenes, cfg);
  ::setenv("NPSN_THREADS", "3", 1);
  const auto b = train::train(net::NpsnModel(c, 1), hyper, scenes, cfg);
  ::unsetenv("NPSN_THREADS");
  std::vector<net::Matrix> pa, pb;
  a.model.params().for_each([&](const char*, const net::Matrix& m) { pa.push_back(m); });
  b.model.params().for_each([&](const char*, const net::Matrix& m) { pb.push_back(m); });
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i], pb[i]);
  ASSERT_EQ(a.log.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(a.log[e].total, b.log[e].total);
}

TEST(Train, ImprovesBestOfTwentyOverInitialization) {
  const auto scenes = synth(300, 11);
  const auto test = synth(150, 12);
  const auto hyper = predictor::fit_head(scenes);
  train::TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_scenes = 32;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    cfg.seed = seed;
    auto init = std::make_shared<const net::NpsnModel>(net::NpsnConfig{}, seed);
    auto trained = std::make_shared<const net::NpsnModel>(train::train(*init, hyper, scenes, cfg).model);
    const auto before = metrics::evaluate(test, hyper, metrics::NpsnSampler(init), 20, 1, 0);
    const auto after = metrics::evaluate(test, hyper, metrics::NpsnSampler(trained), 20, 1, 0);
    EXPECT_LT(after.min_ade, 0.8 * before.min_ade);
  }
}

TEST(Train, RejectsBadConfig) {
  const auto scenes = synth(4, 1);
  train::TrainConfig cfg;
  cfg.lr = 0.0;
  EXPECT_THROW(train::train(net::NpsnModel(), npsn::testing::test_hyper(), scenes, cfg), InvalidArgument);
  cfg.lr = 1e-3;
  EXPECT_THROW(train::train(net::NpsnModel(), npsn::testing::test_hyper(), {}, cfg), InvalidArgument);
}
