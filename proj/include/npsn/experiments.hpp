#pragma once

// Experiment drivers behind the CLI: MC / QMC / NPSN comparison tables, the
// sample-count sweep, and plot-ready CSV writers.

#include <cstdio>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "npsn/biaslab.hpp"
#include "npsn/metrics.hpp"

namespace npsn::experiments {

struct ComparisonRow {
  metrics::EvalReport report;
  double gain_pct = 0.0;  // FDE improvement over the MC row
};

/// Relative FDE improvement over a baseline, in percent.
inline double gain_percent(double baseline_fde, double fde) {
  return baseline_fde > 0.0 ? 100.0 * (baseline_fde - fde) / baseline_fde : 0.0;
}

/// One row per sampler {MC, QMC, NPSN (if given)}; Gain is relative to MC.
inline std::vector<ComparisonRow> compare_samplers(const std::vector<scene::Scene>& scenes,
                                                   const predictor::HeadHyper& hyper,
                                                   std::shared_ptr<const net::NpsnModel> npsn, std::size_t n,
                                                   std::size_t repeats, std::uint64_t seed) {
  std::vector<std::shared_ptr<const metrics::LatentSampler>> samplers{std::make_shared<metrics::McSampler>(),
                                                                      std::make_shared<metrics::QmcSampler>()};
  if (npsn) samplers.push_back(std::make_shared<metrics::NpsnSampler>(npsn));
  std::vector<ComparisonRow> rows;
  for (const auto& s : samplers) rows.push_back({metrics::evaluate(scenes, hyper, *s, n, repeats, seed), 0.0});
  for (auto& r : rows) r.gain_pct = gain_percent(rows.front().report.min_fde, r.report.min_fde);
  return rows;
}

/// Stochastic samplers run at every n of the grid; each NPSN model runs at
/// its native sample count only (a model is trained for one N).
inline std::vector<metrics::EvalReport> n_sweep(
    const std::vector<scene::Scene>& scenes, const predictor::HeadHyper& hyper,
    const std::vector<std::shared_ptr<const metrics::LatentSampler>>& samplers,
    const std::vector<std::shared_ptr<const metrics::NpsnSampler>>& npsn_models, const std::vector<std::size_t>& grid,
    std::size_t repeats, std::uint64_t seed) {
  for (std::size_t i = 1; i < grid.size(); ++i) require(grid[i] > grid[i - 1], "n grid must be increasing");
  std::vector<metrics::EvalReport> rows;
  for (const auto& s : samplers)
    for (const std::size_t n : grid) rows.push_back(metrics::evaluate(scenes, hyper, *s, n, repeats, seed));
  for (const auto& m : npsn_models) rows.push_back(metrics::evaluate(scenes, hyper, *m, m->native_samples(), 1, seed));
  return rows;
}

/// Powers of two from `lo` to `hi` inclusive.
inline std::vector<std::size_t> pow2_grid(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> g;
  for (std::size_t n = lo; n <= hi; n *= 2) g.push_back(n);
  return g;
}

namespace csv {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_eval(std::ostream& out, const std::vector<metrics::EvalReport>& rows) {
  out << "sampler,n,repeats,min_ade,min_fde,tcc,sd_ade,sd_fde,sd_tcc\n";
  for (const auto& r : rows)
    out << r.sampler << ',' << r.n_samples << ',' << r.repeats << ',' << num(r.min_ade) << ',' << num(r.min_fde)
        << ',' << num(r.tcc) << ',' << num(r.sd_ade) << ',' << num(r.sd_fde) << ',' << num(r.sd_tcc) << '\n';
}

inline void write_comparison(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  out << "sampler,n,repeats,min_ade,min_fde,tcc,sd_ade,sd_fde,sd_tcc,gain_pct\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    out << r.sampler << ',' << r.n_samples << ',' << r.repeats << ',' << num(r.min_ade) << ',' << num(r.min_fde)
        << ',' << num(r.tcc) << ',' << num(r.sd_ade) << ',' << num(r.sd_fde) << ',' << num(r.sd_tcc) << ','
        << num(row.gain_pct) << '\n';
  }
}

inline void write_bias(std::ostream& out, const std::string& sampler, const std::string& integrand,
                       const std::string& functional, const std::vector<biaslab::BiasResult>& rows) {
  out << "sampler,integrand,functional,n,trials,empirical_bias,predicted_bias,standard_error,m_constant\n";
  for (const auto& r : rows)
    out << sampler << ',' << integrand << ',' << functional << ',' << r.n << ',' << r.trials << ','
        << num(r.empirical_bias) << ',' << num(r.predicted_bias) << ',' << num(r.standard_error) << ','
        << num(r.m_constant) << '\n';
}

inline void write_convergence(std::ostream& out, const biaslab::ConvergenceTable& table) {
  out << "sampler,n,trials,rms_error,mean_abs_error,mean_star_discrepancy,slope\n";
  for (const auto& r : table.rows) {
    const auto slope = table.slopes.find(r.sampler);
    out << r.sampler << ',' << r.n << ',' << r.trials << ',' << num(r.rms_error) << ',' << num(r.mean_abs_error)
        << ',' << (r.mean_star_discrepancy ? num(*r.mean_star_discrepancy) : "") << ','
        << (slope != table.slopes.end() ? num(slope->second) : "") << '\n';
  }
}

inline void write_best_of_n(std::ostream& out, const std::vector<biaslab::BestOfNRow>& rows) {
  out << "sampler,n,pedestrians,expected_min_ade,standard_error,dense_oracle\n";
  for (const auto& r : rows)
    out << r.sampler << ',' << r.n << ',' << r.pedestrians << ',' << num(r.expected_min_ade) << ','
        << num(r.standard_error) << ',' << num(r.dense_oracle) << '\n';
}

}  // namespace csv
}  // namespace npsn::experiments
