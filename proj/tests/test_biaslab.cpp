#include <gtest/gtest.h>

#include <cmath>

#include "npsn/biaslab.hpp"
#include "test_support.hpp"

using namespace npsn;
using lds::Sampler;

TEST(Estimate, ConstantIsExactForEverySampler) {
  const auto tau = biaslab::integrands::constant(1.0, 3);
  for (auto s : {Sampler::mc, Sampler::sobol, Sampler::ssobol, Sampler::halton})
    for (std::size_t n : {1u, 7u, 100u}) EXPECT_EQ(biaslab::estimate(tau, lds::generate(s, n, 3, 5, false)), 1.0);
}

TEST(Estimate, TwoPointMean) {
  const auto ps = lds::PointSet::from_rows({{0.0}, {1.0 - std::ldexp(1.0, -52)}});
  EXPECT_NEAR(biaslab::estimate(biaslab::integrands::first_coordinate(1), ps), 0.5, 1e-15);
}

TEST(Estimate, ProductOnSobol) {
  EXPECT_NEAR(biaslab::estimate(biaslab::integrands::product(2), lds::sobol_points(4096, 2)), 0.25, 1e-3);
}

TEST(Estimate, RejectsDimensionMismatch) {
  EXPECT_THROW(biaslab::estimate(biaslab::integrands::product(3), lds::sobol_points(8, 2)), InvalidArgument);
}

TEST(Integrands, ExactMomentsAgreeWithDenseQuadrature) {
  for (const auto& tau : {biaslab::integrands::product(2), biaslab::integrands::gaussian_bump(2),
                          biaslab::integrands::first_coordinate(2)}) {
    const auto ps = lds::sobol_points(1 << 16, 2);
    double m = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const double v = tau.eval(ps.row(i));
      m += v, m2 += v * v;
    }
    m /= static_cast<double>(ps.size());
    m2 /= static_cast<double>(ps.size());
    EXPECT_NEAR(m, *tau.exact_value, 1e-4) << tau.name;
    EXPECT_NEAR(m2 - m * m, *tau.exact_variance, 1e-4) << tau.name;
  }
}

TEST(BiasExperiment, QuadraticMatchesVarianceOverN) {
  const auto r = biaslab::bias_experiment(biaslab::integrands::first_coordinate(1), biaslab::functionals::square(), 20,
                                          10000, Sampler::mc, 1);
  EXPECT_NEAR(r.predicted_bias, 1.0 / 240.0, 1e-15);
  EXPECT_NEAR(r.empirical_bias, r.predicted_bias, 3.0 * r.standard_error);
}

TEST(BiasExperiment, LinearFunctionalIsUnbiased) {
  const auto r = biaslab::bias_experiment(biaslab::integrands::first_coordinate(1), biaslab::functionals::linear(), 20,
                                          10000, Sampler::mc, 2);
  EXPECT_EQ(r.predicted_bias, 0.0);
  EXPECT_NEAR(r.empirical_bias, 0.0, 3.0 * r.standard_error);
}

TEST(BiasExperiment, ScrambledSobolHasSmallerBias) {
  const auto tau = biaslab::integrands::first_coordinate(1);
  const auto F = biaslab::functionals::square();
  const auto mc = biaslab::bias_experiment(tau, F, 20, 10000, Sampler::mc, 3);
  const auto qmc = biaslab::bias_experiment(tau, F, 20, 10000, Sampler::ssobol, 3);
  EXPECT_LT(std::abs(qmc.empirical_bias), std::abs(mc.empirical_bias));
}

TEST(BiasExperiment, Preconditions) {
  const auto tau = biaslab::integrands::first_coordinate(1);
  const auto F = biaslab::functionals::square();
  EXPECT_THROW(biaslab::bias_experiment(tau, F, 20, 99, Sampler::mc, 0), InvalidArgument);
  EXPECT_THROW(biaslab::bias_experiment(tau, F, 20, 100, Sampler::sobol, 0), InvalidArgument);
  biaslab::Functional blowup{"blowup", [](double) { return std::numeric_limits<double>::infinity(); },
                             [](double) { return 0.0; }};
  EXPECT_THROW(biaslab::bias_experiment(tau, blowup, 20, 100, Sampler::mc, 0), Error);
}

namespace {
std::vector<std::size_t> grid_16_to_4096() {
  std::vector<std::size_t> g;
  for (std::size_t n = 16; n <= 4096; n *= 2) g.push_back(n);
  return g;
}
const biaslab::ConvergenceRow& row(const biaslab::ConvergenceTable& t, const std::string& s, std::size_t n) {
  for (const auto& r : t.rows)
    if (r.sampler == s && r.n == n) return r;
  throw std::runtime_error("missing row");
}
}  // namespace

TEST(ConvergenceStudy, RatesAndOrdering) {
  const auto grid = grid_16_to_4096();
  const auto table = biaslab::convergence_study(biaslab::integrands::product(2), {Sampler::mc, Sampler::ssobol}, grid,
                                                200, 0);
  EXPECT_NEAR(table.slopes.at("mc"), -0.5, 0.1);
  EXPECT_LE(table.slopes.at("ssobol"), -0.8);
  for (std::size_t n : grid) EXPECT_LE(row(table, "ssobol", n).rms_error, row(table, "mc", n).rms_error) << n;
}

TEST(ConvergenceStudy, DeterministicSobolRefinesMonotonically) {
  const auto grid = grid_16_to_4096();
  const auto table = biaslab::convergence_study(biaslab::integrands::product(2), {Sampler::sobol}, grid, 50, 0);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const auto& prev = row(table, "sobol", grid[i - 1]);
    const auto& cur = row(table, "sobol", grid[i]);
    EXPECT_EQ(cur.trials, 1u);
    EXPECT_LE(cur.rms_error, 1.05 * prev.rms_error) << grid[i];
  }
}

TEST(ConvergenceStudy, RecordsDiscrepancyWhenAsked) {
  const auto table =
      biaslab::convergence_study(biaslab::integrands::product(2), {Sampler::mc}, {16, 64}, 20, 0, /*discrepancy_trials=*/5);
  for (const auto& r : table.rows) {
    ASSERT_TRUE(r.mean_star_discrepancy.has_value());
    EXPECT_GT(*r.mean_star_discrepancy, 0.0);
  }
  EXPECT_THROW(biaslab::convergence_study(biaslab::integrands::product(2), {Sampler::mc}, {64, 16}, 20, 0),
               InvalidArgument);
}

TEST(FitSlope, RecoversLine) {
  EXPECT_NEAR(biaslab::fit_slope({0, 1, 2, 3}, {1, -1, -3, -5}), -2.0, 1e-15);
}

namespace {
struct PedestrianCase {
  predictor::GaussianHead head;
  predictor::FutureTrajectory gt;
};
PedestrianCase branching_case() {
  scene::SynthSpec spec;
  spec.n_scenes = 300;
  spec.seed = 21;
  const auto scenes = scene::synth_generate(spec);
  const auto hyper = predictor::fit_head(scenes);
  const auto& traj = scenes[0].trajectories[0];
  PedestrianCase c{predictor::predict_head(traj, hyper), {}};
  for (std::size_t t = 0; t < kPredLen; ++t) c.gt[t] = traj[kObsLen + t];
  return c;
}
}  // namespace

TEST(BestOfNBias, ApproachesDenseOracleFromAbove) {
  const auto c = branching_case();
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t n : {1u, 16u, 256u, 4096u}) {
    const auto r = biaslab::best_of_n_bias(c.head, c.gt, Sampler::ssobol, n, 30, 1);
    EXPECT_GE(r.expected_min_ade, r.dense_oracle - 1e-12);
    EXPECT_LT(r.expected_min_ade, prev);
    prev = r.expected_min_ade;
  }
  const auto last = biaslab::best_of_n_bias(c.head, c.gt, Sampler::ssobol, 4096, 30, 1);
  EXPECT_LT(last.expected_min_ade - last.dense_oracle, 0.05);
}

TEST(BestOfNBias, ScrambledSobolNoWorseThanMcAtTwenty) {
  const auto c = branching_case();
  const auto mc = biaslab::best_of_n_bias(c.head, c.gt, Sampler::mc, 20, 2000, 2);
  const auto qmc = biaslab::best_of_n_bias(c.head, c.gt, Sampler::ssobol, 20, 2000, 2);
  EXPECT_LE(qmc.expected_min_ade, mc.expected_min_ade + 2.0 * std::hypot(mc.standard_error, qmc.standard_error));
}

TEST(BestOfNBias, SingleDrawIsPlainAde) {
  const auto c = branching_case();
  const auto r = biaslab::best_of_n_bias(c.head, c.gt, Sampler::mc, 1, 1, 9);
  const auto u = lds::mc_points(1, 2, derive_seed(9, 0, 1));
  const auto z = transform::box_muller_pair(u(0, 0), u(0, 1)).z;
  EXPECT_DOUBLE_EQ(r.expected_min_ade, metrics::ade(predictor::sample_future(c.head, z), c.gt));
}

TEST(BestOfNStudy, RowsPerSamplerAndN) {
  scene::SynthSpec spec;
  spec.n_scenes = 20;
  const auto scenes = scene::synth_generate(spec);
  const auto rows = biaslab::best_of_n_study(scenes, predictor::fit_head(scenes), {Sampler::mc, Sampler::sobol},
                                             {1, 8}, 5, 0, 10);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.pedestrians, 10u);
    EXPECT_GE(r.expected_min_ade, r.dense_oracle);
  }
  EXPECT_EQ(rows[2].standard_error, 0.0);
}
