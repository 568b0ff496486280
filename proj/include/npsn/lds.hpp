#pragma once

// Point sets in the unit cube: pseudo-random, Sobol (plain and Owen
// scrambled) and Halton generators, plus quality measures.

#include <array>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "npsn/common.hpp"
#include "npsn/detail/joe_kuo_table.hpp"

namespace npsn::lds {

/// N points in s dimensions, row-major. Generators always produce
/// coordinates in [0,1); sets read from disk are checked with in_unit_cube().
class PointSet {
 public:
  PointSet() = default;
  PointSet(std::size_t n, std::size_t dim) : n_(n), dim_(dim), values_(n * dim, 0.0) {
    require(n >= 1, "point set needs at least one point");
    require(dim >= 1, "point set needs at least one dimension");
  }

  static PointSet from_rows(const std::vector<std::vector<double>>& rows) {
    require(!rows.empty(), "point set needs at least one point");
    PointSet ps(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i].size() == ps.dim_, "ragged point rows");
      std::copy(rows[i].begin(), rows[i].end(), ps.row(i).begin());
    }
    return ps;
  }

  std::size_t size() const { return n_; }
  std::size_t dim() const { return dim_; }

  double operator()(std::size_t i, std::size_t d) const { return values_[i * dim_ + d]; }
  double& operator()(std::size_t i, std::size_t d) { return values_[i * dim_ + d]; }

  std::span<double> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }

  const std::vector<double>& values() const { return values_; }

  bool in_unit_cube() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return v >= 0.0 && v < 1.0; });
  }

  friend bool operator==(const PointSet&, const PointSet&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

inline constexpr std::size_t kSobolMaxDimension = detail::kJoeKuoMaxDimension;
inline constexpr std::size_t kHaltonMaxDimension = 16;
inline constexpr int kSobolBits = 32;

namespace detail {

inline std::array<std::uint32_t, kSobolBits> direction_numbers(std::size_t dim_index) {
  std::array<std::uint32_t, kSobolBits> v{};
  if (dim_index == 0) {
    for (int k = 0; k < kSobolBits; ++k) v[k] = 1u << (kSobolBits - 1 - k);
    return v;
  }
  const auto& entry = npsn::detail::kJoeKuoTable[dim_index - 1];
  const int s = static_cast<int>(entry.degree);
  for (int k = 0; k < s && k < kSobolBits; ++k)
    v[k] = entry.initial[k] << (kSobolBits - 1 - k);
  for (int k = s; k < kSobolBits; ++k) {
    std::uint32_t value = v[k - s] ^ (v[k - s] >> s);
    for (int i = 1; i < s; ++i)
      if ((entry.coefficients >> (s - 1 - i)) & 1u) value ^= v[k - i];
    v[k] = value;
  }
  return v;
}

// Nested uniform (Owen) scramble of a 32-bit digit string: every node of the
// binary digit tree gets an independent random bit flip, keyed by the node's
// heap index so flips at one level depend on all higher digits.
inline std::uint32_t owen_scramble(std::uint32_t value, std::uint64_t key) {
  std::uint32_t out = 0;
  for (int level = 0; level < kSobolBits; ++level) {
    const int bit = kSobolBits - 1 - level;
    const std::uint64_t prefix = level == 0 ? 0 : (static_cast<std::uint64_t>(value) >> (bit + 1));
    const std::uint64_t node = (std::uint64_t{1} << level) | prefix;
    const std::uint32_t flip = static_cast<std::uint32_t>(mix64(key ^ mix64(node)) & 1u);
    out |= (((value >> bit) & 1u) ^ flip) << bit;
  }
  return out;
}

}  // namespace detail

/// Sobol generator state. Indexing is natural order starting at 0, so the
/// first coordinate of point i is the base-2 radical inverse of i. Copying
/// the engine is the supported way to fan out independent streams.
class SobolEngine {
 public:
  explicit SobolEngine(std::size_t dimension, std::optional<std::uint64_t> scramble_seed = {})
      : dimension_(dimension), scramble_seed_(scramble_seed) {
    require(dimension >= 1, "sobol dimension must be positive");
    require(dimension <= kSobolMaxDimension,
            "sobol dimension " + std::to_string(dimension) + " exceeds the direction-number table (" +
                std::to_string(kSobolMaxDimension) + ")");
    directions_.reserve(dimension);
    for (std::size_t d = 0; d < dimension; ++d) directions_.push_back(detail::direction_numbers(d));
    if (scramble_seed_) {
      for (std::size_t d = 0; d < dimension; ++d) keys_.push_back(derive_seed(*scramble_seed_, d));
    }
  }

  std::size_t dimension() const { return dimension_; }
  std::uint64_t index() const { return index_; }
  bool scrambled() const { return scramble_seed_.has_value(); }
  const std::array<std::uint32_t, kSobolBits>& directions(std::size_t d) const { return directions_.at(d); }

  void seek(std::uint64_t index) { index_ = index; }

  /// 32-bit digit string of coordinate d at the given index.
  std::uint32_t raw(std::uint64_t index, std::size_t d) const {
    require(index < (std::uint64_t{1} << kSobolBits), "sobol index exceeds 2^32");
    std::uint32_t x = 0;
    std::uint64_t bits = index;
    for (int k = 0; bits != 0; ++k, bits >>= 1)
      if (bits & 1u) x ^= directions_[d][k];
    return scramble_seed_ ? detail::owen_scramble(x, keys_[d]) : x;
  }

  void next(std::span<double> out) {
    require(out.size() == dimension_, "output span does not match sobol dimension");
    for (std::size_t d = 0; d < dimension_; ++d)
      out[d] = static_cast<double>(raw(index_, d)) * 0x1.0p-32;
    ++index_;
  }

 private:
  std::size_t dimension_;
  std::optional<std::uint64_t> scramble_seed_;
  std::vector<std::array<std::uint32_t, kSobolBits>> directions_;
  std::vector<std::uint64_t> keys_;
  std::uint64_t index_ = 0;
};

inline PointSet mc_points(std::size_t n, std::size_t dim, std::uint64_t seed) {
  require(n >= 1 && dim >= 1, "mc_points needs n >= 1 and dim >= 1");
  PointSet ps(n, dim);
  std::mt19937_64 engine(seed);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) ps(i, d) = uniform01(engine);
  return ps;
}

namespace detail {
inline PointSet sobol_impl(std::size_t n, std::size_t dim, std::optional<std::uint64_t> seed,
                           bool skip_first) {
  require(n >= 1 && dim >= 1, "sobol needs n >= 1 and dim >= 1");
  SobolEngine engine(dim, seed);
  if (skip_first) engine.seek(1);
  PointSet ps(n, dim);
  for (std::size_t i = 0; i < n; ++i) engine.next(ps.row(i));
  return ps;
}
}  // namespace detail

/// First n points of the unscrambled sequence (index 0 is the origin unless skipped).
inline PointSet sobol_points(std::size_t n, std::size_t dim, bool skip_first = false) {
  return detail::sobol_impl(n, dim, std::nullopt, skip_first);
}

inline PointSet scrambled_sobol_points(std::size_t n, std::size_t dim, std::uint64_t seed,
                                       bool skip_first = false) {
  return detail::sobol_impl(n, dim, seed, skip_first);
}

inline constexpr std::array<unsigned, kHaltonMaxDimension> kPrimes = {2,  3,  5,  7,  11, 13, 17, 19,
                                                                     23, 29, 31, 37, 41, 43, 47, 53};

inline double radical_inverse(std::uint64_t index, unsigned base) {
  const double inv = 1.0 / base;
  double f = inv;
  double r = 0.0;
  while (index > 0) {
    r += static_cast<double>(index % base) * f;
    index /= base;
    f *= inv;
  }
  return r;
}

/// Halton points for indices 1..n (index 0 is skipped).
inline PointSet halton_points(std::size_t n, std::size_t dim) {
  require(n >= 1 && dim >= 1, "halton needs n >= 1 and dim >= 1");
  require(dim <= kHaltonMaxDimension, "halton supports at most 16 dimensions");
  PointSet ps(n, dim);
  const std::size_t dims = std::min(dim, kPrimes.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dims; ++d) ps(i, d) = radical_inverse(i + 1, kPrimes[d]);
  return ps;
}

enum class Sampler { mc, sobol, ssobol, halton };

inline Sampler parse_sampler(const std::string& name) {
  if (name == "mc") return Sampler::mc;
  if (name == "sobol") return Sampler::sobol;
  if (name == "ssobol") return Sampler::ssobol;
  if (name == "halton") return Sampler::halton;
  throw InvalidArgument("unknown sampler '" + name + "' (expected mc|sobol|ssobol|halton)");
}

inline std::string to_string(Sampler s) {
  switch (s) {
    case Sampler::mc: return "mc";
    case Sampler::sobol: return "sobol";
    case Sampler::ssobol: return "ssobol";
    case Sampler::halton: return "halton";
  }
  return "?";
}

inline bool is_randomized(Sampler s) { return s == Sampler::mc || s == Sampler::ssobol; }

inline PointSet generate(Sampler sampler, std::size_t n, std::size_t dim, std::uint64_t seed,
                         bool skip_first = false) {
  switch (sampler) {
    case Sampler::mc: return mc_points(n, dim, seed);
    case Sampler::sobol: return sobol_points(n, dim, skip_first);
    case Sampler::ssobol: return scrambled_sobol_points(n, dim, seed, skip_first);
    case Sampler::halton: return halton_points(n, dim);
  }
  throw InvalidArgument("unknown sampler");
}

struct StarDiscrepancy {
  double value = 0.0;
  bool exact = true;  // false: grid-restricted upper bound
};

inline constexpr std::size_t kExactDiscrepancyMaxPoints = 4096;

namespace detail {

// Exact D* in two dimensions. Every extremal anchored box has its corner on
// the grid of point coordinates (plus 1); "open" boxes [0,x)x[0,y) bound the
// volume-excess side and closed boxes [0,x]x[0,y] the count-excess side.
// O(n^2) after sorting.
inline double star_discrepancy_exact_2d(const PointSet& ps) {
  const std::size_t n = ps.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = ps(i, 1);
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  ys.push_back(1.0);
  const std::size_t ny = ys.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ps(a, 0) < ps(b, 0); });

  std::vector<std::size_t> hist(ny, 0);  // points inserted so far, by y rank
  double worst = 0.0;

  auto scan = [&](double x, bool closed) {
    std::size_t below = 0;  // points with y < ys[k]
    for (std::size_t k = 0; k < ny; ++k) {
      const double vol = x * ys[k];
      if (closed) {
        const double count = static_cast<double>(below + hist[k]) * inv_n;
        worst = std::max(worst, count - vol);
      } else {
        const double count = static_cast<double>(below) * inv_n;
        worst = std::max(worst, vol - count);
      }
      below += hist[k];
    }
  };

  std::size_t pos = 0;
  while (pos < n) {
    const double x = ps(order[pos], 0);
    scan(x, false);
    std::size_t end = pos;
    while (end < n && ps(order[end], 0) == x) {
      const double y = ps(order[end], 1);
      const auto rank = static_cast<std::size_t>(std::lower_bound(ys.begin(), ys.end(), y) - ys.begin());
      ++hist[rank];
      ++end;
    }
    scan(x, true);
    pos = end;
  }
  scan(1.0, false);
  return std::min(1.0, worst);
}

// Upper bound on D* from a regular grid of resolution m per axis: for any
// corner x inside the cell [g, g+], A(g)/n - V(g+) <= A(x)/n - V(x) <=
// A(g+)/n - V(g), with A counting points strictly below the corner.
inline double star_discrepancy_grid_bound(const PointSet& ps) {
  const std::size_t n = ps.size();
  const std::size_t s = ps.dim();
  constexpr double kBudget = 1 << 22;
  std::size_t m = 1;
  while (m < 4096 && std::pow(static_cast<double>(m * 2 + 1), static_cast<double>(s)) <= kBudget) m *= 2;
  const std::size_t side = m + 1;
  std::size_t total = 1;
  for (std::size_t d = 0; d < s; ++d) total *= side;

  std::vector<double> counts(total, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t flat = 0;
    for (std::size_t d = s; d-- > 0;) {
      const auto cell = std::min(m - 1, static_cast<std::size_t>(ps(i, d) * static_cast<double>(m)));
      flat = flat * side + (cell + 1);
    }
    counts[flat] += 1.0;
  }
  // Inclusive prefix sums along each axis turn cell histograms into corner counts.
  std::size_t stride = 1;
  for (std::size_t d = 0; d < s; ++d) {
    for (std::size_t flat = 0; flat < total; ++flat) {
      if ((flat / stride) % side != 0) counts[flat] += counts[flat - stride];
    }
    stride *= side;
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  const double h = 1.0 / static_cast<double>(m);
  double worst = 0.0;
  std::vector<std::size_t> c(s, 0);
  for (std::size_t lower = 0; lower < total; ++lower) {
    std::size_t rem = lower;
    bool interior = true;
    for (std::size_t d = 0; d < s; ++d) {
      c[d] = rem % side;
      rem /= side;
      if (c[d] == m) interior = false;
    }
    if (!interior) continue;
    std::size_t upper = 0;
    double vol_lo = 1.0, vol_hi = 1.0;
    std::size_t scale = 1;
    for (std::size_t d = 0; d < s; ++d) {
      upper += (c[d] + 1) * scale;
      scale *= side;
      vol_lo *= static_cast<double>(c[d]) * h;
      vol_hi *= static_cast<double>(c[d] + 1) * h;
    }
    worst = std::max(worst, vol_hi - counts[lower] * inv_n);
    worst = std::max(worst, counts[upper] * inv_n - vol_lo);
  }
  return std::min(1.0, worst);
}

}  // namespace detail

/// Star discrepancy D*_N. Exact for s = 2 with n <= 4096; otherwise a
/// grid-restricted upper bound flagged with exact = false.
inline StarDiscrepancy star_discrepancy(const PointSet& ps) {
  require(ps.size() >= 1, "star discrepancy of an empty point set");
  require(ps.in_unit_cube(), "star discrepancy needs coordinates in [0,1)");
  if (ps.dim() == 2 && ps.size() <= kExactDiscrepancyMaxPoints)
    return {detail::star_discrepancy_exact_2d(ps), true};
  if (ps.dim() == 1) {
    // One dimension has a closed form over the sorted coordinates.
    std::vector<double> xs(ps.values());
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      worst = std::max(worst, static_cast<double>(i + 1) / n - xs[i]);
      worst = std::max(worst, xs[i] - static_cast<double>(i) / n);
    }
    return {std::min(1.0, worst), true};
  }
  return {detail::star_discrepancy_grid_bound(ps), false};
}

inline double min_pairwise_distance(const PointSet& ps) {
  require(ps.size() >= 2, "min pairwise distance needs at least two points");
  const std::size_t n = ps.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ps(a, 0) < ps(b, 0); });
  double best_sq = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double dx = ps(order[b], 0) - ps(order[a], 0);
      if (dx * dx >= best_sq) break;
      double sq = 0.0;
      for (std::size_t d = 0; d < ps.dim(); ++d) {
        const double diff = ps(order[b], d) - ps(order[a], d);
        sq += diff * diff;
      }
      best_sq = std::min(best_sq, sq);
    }
  }
  return std::sqrt(best_sq);
}

struct DiscrepancyReport {
  double star_discrepancy = 0.0;
  bool exact = true;
  double min_pairwise_distance = 0.0;
  std::size_t n_points = 0;
  std::size_t dimension = 0;
};

inline DiscrepancyReport discrepancy_report(const PointSet& ps) {
  const auto d = star_discrepancy(ps);
  DiscrepancyReport r;
  r.star_discrepancy = d.value;
  r.exact = d.exact;
  r.min_pairwise_distance = ps.size() >= 2 ? min_pairwise_distance(ps) : 0.0;
  r.n_points = ps.size();
  r.dimension = ps.dim();
  return r;
}

}  // namespace npsn::lds
