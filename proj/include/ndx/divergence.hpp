#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ndx/common.hpp"
#include "ndx/predictive.hpp"

// KL and Jeffreys divergences between sample sets (KDE on a shared grid),
// their PI-truncated variants, field integration and the mixture-weight sweep.

namespace ndx {

struct DivergenceConfig {
  std::size_t grid_points = kKdeGridPoints;
  double floor = 1e-12;
  double pad = 4.0;  // bandwidths added on each side of the pooled range
  double tail_mass = 1e-3;  // mass given to each Gaussian tail; 0 disables tail completion
  std::optional<double> truncate_level;  // set: restrict to the hull of both PIs
  unsigned threads = 0;
};

inline constexpr double kDivergenceNoiseFloor = -1e-6;

struct DivergenceValues {
  double forward = 0.0;   // KL(p || q)
  double backward = 0.0;  // KL(q || p)
  double jeffreys = 0.0;
  bool clamped = false;   // a slightly negative estimate was set to zero
  bool negative = false;  // an estimate fell below the noise floor and kept its sign
};

namespace detail {

struct PreparedSet {
  std::vector<double> sorted;
  double h = 0.0;
  double mean = 0.0;
  double sd = 0.0;
};

inline PreparedSet prepare_set(std::span<const double> x, const char* which) {
  if (x.size() < 10) throw InvalidArgument(std::string("divergence: ") + which + " needs at least 10 samples");
  PreparedSet s;
  s.sorted.assign(x.begin(), x.end());
  std::sort(s.sorted.begin(), s.sorted.end());
  bool degenerate = false;
  s.h = silverman_bandwidth(s.sorted, &degenerate);
  if (degenerate) throw DegenerateDistribution(std::string("divergence: ") + which + " sample set has zero spread");
  s.mean = ndx::mean(s.sorted);
  s.sd = std::sqrt(sample_variance(s.sorted));
  return s;
}

// KDE on the grid with the mass outside the [a, 1-a] sample quantiles
// redistributed as Gaussian tails (sample mean and sd). A fixed-bandwidth
// kernel decays on the scale h past the last sample, which inflates
// log(p/q) wherever the other set still has mass.
inline std::vector<double> divergence_density(const PreparedSet& s, std::span<const double> grid, double a) {
  const std::size_t m = grid.size();
  auto f = kde_on_grid(s.sorted, s.h, grid.front(), grid.back(), m);
  if (a <= 0.0) return f;
  const double xl = quantile_sorted(s.sorted, a), xr = quantile_sorted(s.sorted, 1.0 - a);
  std::vector<double> inner(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    if (grid[i] >= xl && grid[i] <= xr) inner[i] = f[i];
  const double mass = trapezoid(grid, inner);
  if (!(mass > 0.0)) return f;
  const double cl = normal_cdf((xl - s.mean) / s.sd), cr = normal_cdf((s.mean - xr) / s.sd);
  for (std::size_t i = 0; i < m; ++i) {
    const double t = grid[i];
    if (t < xl)
      f[i] = cl > 0.0 ? a * normal_pdf((t - s.mean) / s.sd) / (s.sd * cl) : 0.0;
    else if (t > xr)
      f[i] = cr > 0.0 ? a * normal_pdf((t - s.mean) / s.sd) / (s.sd * cr) : 0.0;
    else
      f[i] *= (1.0 - 2.0 * a) / mass;
  }
  return f;
}

inline double settle(double v, DivergenceValues& out) {
  if (v >= 0.0) return v;
  if (v >= kDivergenceNoiseFloor) {
    out.clamped = true;
    return 0.0;
  }
  out.negative = true;
  return v;
}

inline DivergenceValues divergence_on(const PreparedSet& p, const PreparedSet& q, const DivergenceConfig& cfg) {
  const std::size_t m = cfg.grid_points;
  if (m < 3) throw InvalidArgument("divergence: grid too small");
  double lo = std::min(p.sorted.front() - cfg.pad * p.h, q.sorted.front() - cfg.pad * q.h);
  double hi = std::max(p.sorted.back() + cfg.pad * p.h, q.sorted.back() + cfg.pad * q.h);
  if (cfg.truncate_level) {
    const double a = 0.5 * (1.0 - *cfg.truncate_level);
    if (!(a > 0.0 && a < 0.5)) throw InvalidArgument("divergence: truncation level must lie in (0,1)");
    lo = std::min(quantile_sorted(p.sorted, a), quantile_sorted(q.sorted, a));
    hi = std::max(quantile_sorted(p.sorted, 1.0 - a), quantile_sorted(q.sorted, 1.0 - a));
    if (!(hi > lo)) throw DegenerateDistribution("divergence: prediction intervals have zero width");
  }
  std::vector<double> grid(m);
  for (std::size_t i = 0; i < m; ++i) grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m - 1);
  auto fp = divergence_density(p, grid, cfg.tail_mass);
  auto fq = divergence_density(q, grid, cfg.tail_mass);
  normalize_density(grid, fp);
  normalize_density(grid, fq);
  std::vector<double> ipq(m), iqp(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double a = std::max(fp[i], cfg.floor), b = std::max(fq[i], cfg.floor);
    const double l = std::log(a / b);
    ipq[i] = a * l;
    iqp[i] = -b * l;
  }
  DivergenceValues out;
  out.forward = settle(trapezoid(grid, ipq), out);
  out.backward = settle(trapezoid(grid, iqp), out);
  out.jeffreys = out.forward + out.backward;
  return out;
}

}  // namespace detail

/// Both KL directions and their sum from one pair of density fits.
inline DivergenceValues divergences(std::span<const double> p, std::span<const double> q,
                                    const DivergenceConfig& cfg = {}) {
  return detail::divergence_on(detail::prepare_set(p, "p"), detail::prepare_set(q, "q"), cfg);
}

inline double kl_between(std::span<const double> p, std::span<const double> q, const DivergenceConfig& cfg = {}) {
  return divergences(p, q, cfg).forward;
}

inline double jeffreys(std::span<const double> p, std::span<const double> q, const DivergenceConfig& cfg = {}) {
  return divergences(p, q, cfg).jeffreys;
}

/// Densities restricted to the convex hull of the two central PIs and
/// renormalized there.
inline DivergenceValues truncated_divergence(std::span<const double> p, std::span<const double> q, double level = 0.95,
                                             DivergenceConfig cfg = {}) {
  cfg.truncate_level = level;
  return divergences(p, q, cfg);
}

// ---------------------------------------------------------------------------
// Field divergences
// ---------------------------------------------------------------------------

struct DivergencePointwise {
  EnsembleLayout layout;
  std::vector<double> forward;  // KL(mix || ref), [tc][knot]
  std::vector<double> backward; // KL(ref || mix)
  std::vector<double> jeffreys;
  std::size_t grid_points = kKdeGridPoints;
  double floor = 1e-12;
  std::optional<double> truncate_level;
  std::size_t clamped = 0;
  std::size_t negative = 0;
};

/// Divergences at every (TC, knot) between two ensembles on the same layout.
inline DivergencePointwise pointwise_divergence(const PredictiveEnsemble& mix, const PredictiveEnsemble& ref,
                                                const DivergenceConfig& cfg = {}) {
  if (mix.layout.tc_labels != ref.layout.tc_labels || mix.layout.knots != ref.layout.knots)
    throw InvalidArgument("pointwise_divergence: ensembles use different layouts");
  DivergencePointwise d;
  d.layout = mix.layout;
  d.grid_points = cfg.grid_points;
  d.floor = cfg.floor;
  d.truncate_level = cfg.truncate_level;
  const std::size_t n = mix.layout.n_points();
  d.forward.resize(n);
  d.backward.resize(n);
  d.jeffreys.resize(n);
  std::vector<char> clamped(n, 0), negative(n, 0);
  const std::size_t nk = mix.layout.n_knots();
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    const auto v = divergences(mix.column(i / nk, i % nk), ref.column(i / nk, i % nk), cfg);
    d.forward[i] = v.forward;
    d.backward[i] = v.backward;
    d.jeffreys[i] = v.jeffreys;
    clamped[i] = v.clamped;
    negative[i] = v.negative;
  });
  d.clamped = static_cast<std::size_t>(std::count(clamped.begin(), clamped.end(), 1));
  d.negative = static_cast<std::size_t>(std::count(negative.begin(), negative.end(), 1));
  return d;
}

struct FieldTotals {
  double forward = 0.0;
  double backward = 0.0;
  double jeffreys = 0.0;
  Warnings warnings;
};

/// Trapezoid over time per TC, summed over TCs (divergence x seconds).
inline FieldTotals integrate_field(const DivergencePointwise& d) {
  const auto& knots = d.layout.knots;
  const std::size_t nk = knots.size();
  if (nk == 0) throw InvalidArgument("integrate_field: no knots");
  for (std::size_t k = 2; k < nk; ++k) {
    const double h0 = knots[1] - knots[0], hk = knots[k] - knots[k - 1];
    if (std::abs(hk - h0) > 1e-9 * std::max(1.0, std::abs(h0))) throw InvalidArgument("integrate_field: knots must be uniform");
  }
  FieldTotals t;
  for (std::size_t c = 0; c < d.layout.n_tcs(); ++c) {
    if (nk == 1) {
      warn(&t.warnings, "integrate_field: " + d.layout.tc_labels[c] + " has a single knot and contributes zero");
      continue;
    }
    auto part = [&](const std::vector<double>& v) {
      return trapezoid(knots, std::span<const double>(v.data() + c * nk, nk));
    };
    t.forward += part(d.forward);
    t.backward += part(d.backward);
  }
  t.jeffreys = t.forward + t.backward;
  return t;
}

// ---------------------------------------------------------------------------
// Mixture-weight sweep
// ---------------------------------------------------------------------------

struct DivergenceRow {
  double w = 0.0;
  double forward = 0.0;   // KL(mix || ref)
  double backward = 0.0;  // KL(ref || mix)
  double jeffreys = 0.0;
  bool ok = true;
  std::string error;
};

struct DivergenceTable {
  std::vector<DivergenceRow> rows;
  double spacing = 0.1;
  std::vector<DivergencePointwise> pointwise;  // per row, empty for failed rows

  void write_csv(std::ostream& os) const {
    os << "w,kl_mix_ref,kl_ref_mix,jeffreys\n";
    char buf[160];
    for (const auto& r : rows) {
      if (r.ok)
        std::snprintf(buf, sizeof buf, "%.6g,%.17g,%.17g,%.17g\n", r.w, r.forward, r.backward, r.jeffreys);
      else
        std::snprintf(buf, sizeof buf, "%.6g,nan,nan,nan\n", r.w);
      os << buf;
    }
  }

  /// Long format for contour plots: w, tc, time, D_J.
  void write_contour_csv(std::ostream& os) const {
    os << "w,tc,time,jeffreys\n";
    char buf[160];
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!rows[r].ok) continue;
      const auto& p = pointwise[r];
      for (std::size_t c = 0; c < p.layout.n_tcs(); ++c)
        for (std::size_t k = 0; k < p.layout.n_knots(); ++k) {
          std::snprintf(buf, sizeof buf, "%.6g,%s,%.17g,%.17g\n", rows[r].w, p.layout.tc_labels[c].c_str(),
                        p.layout.knots[k], p.jeffreys[c * p.layout.n_knots() + k]);
          os << buf;
        }
    }
  }
};

/// {0, step, 2 step, ..., 1}; 1/step must be (close to) an integer.
inline std::vector<double> w_grid(double step = 0.1) {
  if (!(step > 0.0 && step <= 1.0)) throw InvalidArgument("w_grid: step must lie in (0,1]");
  const double n = 1.0 / step;
  const auto k = static_cast<std::size_t>(std::llround(n));
  if (std::abs(n - static_cast<double>(k)) > 1e-9) throw InvalidArgument("w_grid: 1/step must be an integer");
  std::vector<double> w(k + 1);
  for (std::size_t i = 0; i <= k; ++i) w[i] = static_cast<double>(i) / static_cast<double>(k);
  return w;
}

/// One row per w: build(w) gives the mixture predictive ensemble, compared
/// against `reference`. A row whose build or divergence throws is marked
/// failed and the sweep continues.
template <class Builder>
DivergenceTable sweep_w(std::span<const double> ws, Builder&& build, const PredictiveEnsemble& reference,
                        const DivergenceConfig& cfg = {}, Warnings* warnings = nullptr) {
  DivergenceTable t;
  if (ws.size() > 1) t.spacing = ws[1] - ws[0];
  for (double w : ws) {
    if (!(w >= 0.0 && w <= 1.0)) throw InvalidArgument("sweep_w: w outside [0,1]");
    DivergenceRow row;
    row.w = w;
    try {
      const PredictiveEnsemble mix = build(w);
      auto pw = pointwise_divergence(mix, reference, cfg);
      const auto tot = integrate_field(pw);
      row.forward = tot.forward;
      row.backward = tot.backward;
      row.jeffreys = tot.jeffreys;
      if (warnings)
        for (const auto& m : tot.warnings) warn(warnings, m);
      t.pointwise.push_back(std::move(pw));
    } catch (const Error& e) {
      row.ok = false;
      row.error = e.what();
      row.forward = row.backward = row.jeffreys = std::numeric_limits<double>::quiet_NaN();
      t.pointwise.emplace_back();
      warn(warnings, "sweep_w: row w=" + std::to_string(w) + " failed: " + e.what());
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

enum class WCriterion { Jeffreys, BackwardKL };

/// argmin of the chosen column over successful rows; ties go to the larger w.
inline double select_optimal_w(const DivergenceTable& table, WCriterion criterion) {
  const DivergenceRow* best = nullptr;
  for (const auto& r : table.rows) {
    if (!r.ok) continue;
    const double v = criterion == WCriterion::Jeffreys ? r.jeffreys : r.backward;
    const double b = best ? (criterion == WCriterion::Jeffreys ? best->jeffreys : best->backward) : 0.0;
    if (!best || v < b || (v == b && r.w > best->w)) best = &r;
  }
  if (!best) throw InvalidArgument("select_optimal_w: table has no usable rows");
  return best->w;
}

}  // namespace ndx
