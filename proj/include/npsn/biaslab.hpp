#pragma once

// Numerical experiments on sampling bias: plain (Q)MC estimation of
// integrals over the unit cube, the M/N bias of smooth functionals of an MC
// estimate, convergence-rate studies, and the best-of-N bias of the
// trajectory pipeline.

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npsn/common.hpp"
#include "npsn/lds.hpp"
#include "npsn/metrics.hpp"
#include "npsn/predictor.hpp"
#include "npsn/scene.hpp"

namespace npsn::biaslab {

/// tau over the unit cube with the uniform density; exact moments when known.
struct Integrand {
  std::string name;
  std::size_t dim = 1;
  std::function<double(std::span<const double>)> eval;
  std::optional<double> exact_value;     // I(tau)
  std::optional<double> exact_variance;  // K(tau)
};

namespace integrands {

inline Integrand constant(double c, std::size_t dim = 1) {
  return {"constant", dim, [c](std::span<const double>) { return c; }, c, 0.0};
}

/// tau(x) = x_1.
inline Integrand first_coordinate(std::size_t dim = 1) {
  return {"x1", dim, [](std::span<const double> x) { return x[0]; }, 0.5, 1.0 / 12.0};
}

/// tau(x) = x_1 x_2 ... x_s; I = 2^-s, K = 3^-s - 4^-s.
inline Integrand product(std::size_t dim = 2) {
  const double s = static_cast<double>(dim);
  return {"product",
          dim,
          [](std::span<const double> x) {
            double p = 1.0;
            for (double v : x) p *= v;
            return p;
          },
          std::pow(2.0, -s), std::pow(3.0, -s) - std::pow(4.0, -s)};
}

/// exp(-|x - c|^2 / (2 w^2)) with c = (0.5, ..., 0.5).
inline Integrand gaussian_bump(std::size_t dim = 2, double width = 0.2) {
  auto axis_integral = [](double w) {
    const double a = 0.5 / (w * std::numbers::sqrt2);
    return w * std::sqrt(std::numbers::pi / 2.0) * 2.0 * std::erf(a);
  };
  const double i1 = axis_integral(width);
  const double i2 = axis_integral(width / std::numbers::sqrt2);  // integral of tau^2 per axis
  const double s = static_cast<double>(dim);
  const double I = std::pow(i1, s);
  return {"gaussian_bump",
          dim,
          [width](std::span<const double> x) {
            double sq = 0.0;
            for (double v : x) sq += (v - 0.5) * (v - 0.5);
            return std::exp(-sq / (2.0 * width * width));
          },
          I, std::pow(i2, s) - I * I};
}

inline Integrand by_name(const std::string& name, std::size_t dim) {
  if (name == "x1") return first_coordinate(dim);
  if (name == "product") return product(dim);
  if (name == "gaussian_bump") return gaussian_bump(dim);
  if (name == "constant") return constant(1.0, dim);
  throw InvalidArgument("unknown integrand '" + name + "' (expected x1|product|gaussian_bump|constant)");
}

}  // namespace integrands

/// Smooth functional F with its second derivative.
struct Functional {
  std::string name;
  std::function<double(double)> f;
  std::function<double(double)> f2;
};

namespace functionals {
inline Functional square() {
  return {"square", [](double x) { return x * x; }, [](double) { return 2.0; }};
}
inline Functional linear(double a = 2.0, double b = 1.0) {
  return {"linear", [a, b](double x) { return a * x + b; }, [](double) { return 0.0; }};
}
inline Functional exponential() {
  return {"exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); }};
}
inline Functional by_name(const std::string& name) {
  if (name == "square") return square();
  if (name == "linear") return linear();
  if (name == "exp") return exponential();
  throw InvalidArgument("unknown functional '" + name + "' (expected square|linear|exp)");
}
}  // namespace functionals

/// Sample mean of tau over the point set.
inline double estimate(const Integrand& tau, const lds::PointSet& ps) {
  require(ps.dim() == tau.dim, "integrand dimension " + std::to_string(tau.dim) + " does not match point set dimension " +
                                   std::to_string(ps.dim()));
  double s = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) s += tau.eval(ps.row(i));
  return s / static_cast<double>(ps.size());
}

struct BiasResult {
  std::size_t n = 0;
  std::size_t trials = 0;
  double empirical_bias = 0.0;
  double predicted_bias = 0.0;  // M / N
  double standard_error = 0.0;
  double m_constant = 0.0;      // K F''(I) / 2
};

/// E[F(I_hat)] - F(I) measured over independent trials of a randomized sampler.
inline BiasResult bias_experiment(const Integrand& tau, const Functional& F, std::size_t n, std::size_t trials,
                                  lds::Sampler sampler, std::uint64_t seed) {
  require(tau.exact_value && tau.exact_variance, "bias_experiment needs an integrand with known I and K");
  require(trials >= 100, "bias_experiment needs at least 100 trials");
  require(lds::is_randomized(sampler), "bias_experiment needs a randomized sampler (mc or ssobol)");
  const double I = *tau.exact_value;
  const double FI = F.f(I);
  std::vector<double> diffs(trials);
  parallel_for(trials, [&](std::size_t t) {
    const auto ps = lds::generate(sampler, n, tau.dim, derive_seed(seed, t));
    diffs[t] = F.f(estimate(tau, ps)) - FI;
  });
  for (std::size_t t = 0; t < trials; ++t)
    if (!std::isfinite(diffs[t])) throw Error("bias_experiment: non-finite F value in trial " + std::to_string(t));
  BiasResult r;
  r.n = n;
  r.trials = trials;
  r.empirical_bias = mean(diffs);
  r.standard_error = stddev(diffs) / std::sqrt(static_cast<double>(trials));
  r.m_constant = *tau.exact_variance * F.f2(I) / 2.0;
  r.predicted_bias = r.m_constant / static_cast<double>(n);
  return r;
}

struct ConvergenceRow {
  std::string sampler;
  std::size_t n = 0;
  std::size_t trials = 0;
  double rms_error = 0.0;
  double mean_abs_error = 0.0;
  std::optional<double> mean_star_discrepancy;
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
  std::map<std::string, double> slopes;  // least-squares slope of log rms vs log n
};

/// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "fit_slope needs at least two points");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

/// RMS |I_hat - I| per sampler and n. Deterministic samplers use one trial.
/// With `discrepancy_trials` > 0 and s = 2, the mean star discrepancy of the
/// first few point sets is recorded too (error vs D* scatter data).
inline ConvergenceTable convergence_study(const Integrand& tau, const std::vector<lds::Sampler>& samplers,
                                          const std::vector<std::size_t>& n_grid, std::size_t trials,
                                          std::uint64_t seed, std::size_t discrepancy_trials = 0) {
  require(tau.exact_value.has_value(), "convergence_study needs an integrand with a known value");
  require(!n_grid.empty() && trials >= 1, "convergence_study needs a grid and at least one trial");
  for (std::size_t i = 1; i < n_grid.size(); ++i) require(n_grid[i] > n_grid[i - 1], "n grid must be increasing");
  ConvergenceTable table;
  for (const auto sampler : samplers) {
    std::vector<double> log_n, log_err;
    const std::size_t t_count = lds::is_randomized(sampler) ? trials : 1;
    for (const std::size_t n : n_grid) {
      std::vector<double> err(t_count);
      std::vector<double> disc(t_count, -1.0);
      parallel_for(t_count, [&](std::size_t t) {
        const auto ps = lds::generate(sampler, n, tau.dim, derive_seed(seed, n, t));
        err[t] = estimate(tau, ps) - *tau.exact_value;
        if (t < discrepancy_trials && tau.dim == 2 && n <= lds::kExactDiscrepancyMaxPoints)
          disc[t] = lds::star_discrepancy(ps).value;
      });
      ConvergenceRow row;
      row.sampler = lds::to_string(sampler);
      row.n = n;
      row.trials = t_count;
      double sq = 0.0, ab = 0.0;
      for (double e : err) {
        sq += e * e;
        ab += std::abs(e);
      }
      row.rms_error = std::sqrt(sq / static_cast<double>(t_count));
      row.mean_abs_error = ab / static_cast<double>(t_count);
      std::vector<double> measured;
      for (double d : disc)
        if (d >= 0.0) measured.push_back(d);
      if (!measured.empty()) row.mean_star_discrepancy = mean(measured);
      table.rows.push_back(row);
      if (row.rms_error > 0.0) {
        log_n.push_back(std::log(static_cast<double>(n)));
        log_err.push_back(std::log(row.rms_error));
      }
    }
    if (log_n.size() >= 2) table.slopes[lds::to_string(sampler)] = fit_slope(log_n, log_err);
  }
  return table;
}

inline constexpr std::size_t kDenseSamples = std::size_t{1} << 14;

struct BestOfNBias {
  std::size_t n = 0;
  std::size_t trials = 0;
  double expected_min_ade = 0.0;
  double sd = 0.0;
  double standard_error = 0.0;
  double dense_oracle = 0.0;  // min-ADE over 2^14 scrambled Sobol samples
};

namespace detail {
inline lds::PointSet latent_uniforms(lds::Sampler sampler, std::size_t n, std::uint64_t seed) {
  // The unscrambled origin maps to the Box-Muller clamp, so plain Sobol skips it.
  return lds::generate(sampler, n, 2, seed, /*skip_first=*/sampler == lds::Sampler::sobol);
}

inline double min_ade_for(const predictor::GaussianHead& head, const predictor::FutureTrajectory& gt,
                          const lds::PointSet& u) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < u.size(); ++i) {
    const auto z = transform::box_muller_pair(u(i, 0), u(i, 1)).z;
    best = std::min(best, metrics::ade(predictor::sample_future(head, z), gt));
  }
  return best;
}
}  // namespace detail

/// Expected best-of-n ADE of one pedestrian under a latent sampler.
inline BestOfNBias best_of_n_bias(const predictor::GaussianHead& head, const predictor::FutureTrajectory& gt,
                                  lds::Sampler sampler, std::size_t n, std::size_t trials, std::uint64_t seed) {
  require(n >= 1 && trials >= 1, "best_of_n_bias needs n >= 1 and trials >= 1");
  const std::size_t t_count = lds::is_randomized(sampler) ? trials : 1;
  std::vector<double> vals(t_count);
  for (std::size_t t = 0; t < t_count; ++t)
    vals[t] = detail::min_ade_for(head, gt, detail::latent_uniforms(sampler, n, derive_seed(seed, t, n)));
  BestOfNBias r;
  r.n = n;
  r.trials = t_count;
  r.expected_min_ade = mean(vals);
  r.sd = stddev(vals);
  r.standard_error = r.sd / std::sqrt(static_cast<double>(t_count));
  r.dense_oracle =
      detail::min_ade_for(head, gt, lds::scrambled_sobol_points(kDenseSamples, 2, derive_seed(seed, 0xde05e)));
  return r;
}

struct BestOfNRow {
  std::string sampler;
  std::size_t n = 0;
  std::size_t pedestrians = 0;
  double expected_min_ade = 0.0;  // averaged over pedestrians
  double standard_error = 0.0;    // of that average, across trials
  double dense_oracle = 0.0;
};

/// best_of_n_bias averaged over the first `max_pedestrians` pedestrians of a scene set.
inline std::vector<BestOfNRow> best_of_n_study(const std::vector<scene::Scene>& scenes,
                                               const predictor::HeadHyper& hyper,
                                               const std::vector<lds::Sampler>& samplers,
                                               const std::vector<std::size_t>& n_grid, std::size_t trials,
                                               std::uint64_t seed, std::size_t max_pedestrians = 200) {
  std::vector<std::pair<predictor::GaussianHead, predictor::FutureTrajectory>> cases;
  for (const auto& sc : scenes)
    for (const auto& traj : sc.trajectories) {
      if (cases.size() >= max_pedestrians) break;
      predictor::FutureTrajectory gt;
      for (std::size_t t = 0; t < kPredLen; ++t) gt[t] = traj[kObsLen + t];
      cases.emplace_back(predictor::predict_head(traj, hyper), gt);
    }
  require(!cases.empty(), "best_of_n_study needs at least one pedestrian");
  std::vector<double> dense(cases.size());
  parallel_for(cases.size(), [&](std::size_t c) {
    dense[c] = detail::min_ade_for(cases[c].first, cases[c].second,
                                   lds::scrambled_sobol_points(kDenseSamples, 2, derive_seed(seed, 0xde05e, c)));
  });
  const double dense_mean = mean(dense);

  std::vector<BestOfNRow> rows;
  for (const auto sampler : samplers) {
    const std::size_t t_count = lds::is_randomized(sampler) ? trials : 1;
    for (const std::size_t n : n_grid) {
      // Per-trial average over pedestrians, so the spread is that of the reported mean.
      std::vector<double> per_trial(t_count);
      parallel_for(t_count, [&](std::size_t t) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cases.size(); ++c)
          acc += detail::min_ade_for(cases[c].first, cases[c].second,
                                     detail::latent_uniforms(sampler, n, derive_seed(seed, t, n, c)));
        per_trial[t] = acc / static_cast<double>(cases.size());
      });
      BestOfNRow row;
      row.sampler = lds::to_string(sampler);
      row.n = n;
      row.pedestrians = cases.size();
      row.expected_min_ade = mean(per_trial);
      row.standard_error = stddev(per_trial) / std::sqrt(static_cast<double>(t_count));
      row.dense_oracle = dense_mean;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace npsn::biaslab
