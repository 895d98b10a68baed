#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ndx/calibration.hpp"
#include "ndx/common.hpp"
#include "ndx/forward_model.hpp"
#include "ndx/prior.hpp"

// Sampling-based predictive inference: forward propagation with emulator
// noise, prediction intervals, KDE, MAP trajectories and the normalized-time
// overlay check.

namespace ndx {

/// Where predictions live: one row per thermocouple, one column per knot.
struct EnsembleLayout {
  std::vector<std::string> tc_labels;
  std::vector<double> tc_depths;
  std::vector<double> knots;

  std::size_t n_tcs() const { return tc_labels.size(); }
  std::size_t n_knots() const { return knots.size(); }
  std::size_t n_points() const { return n_tcs() * n_knots(); }
};

struct PredictiveEnsemble {
  EnsembleLayout layout;
  std::size_t n_samples = 0;
  std::vector<double> values;  // [sample][tc][knot]
  bool emulator = false;
  std::uint64_t seed = 0;
  std::string source_id;

  double at(std::size_t s, std::size_t tc, std::size_t k) const {
    return values[s * layout.n_points() + tc * layout.n_knots() + k];
  }
  std::vector<double> column(std::size_t tc, std::size_t k) const {
    std::vector<double> out(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) out[s] = at(s, tc, k);
    return out;
  }
};

struct PropagationOptions {
  std::vector<std::string> theta_names;  // columns handed to the evaluator, in order
  // Emulator noise: empty disables it; one name is shared by all TCs,
  // otherwise one column per TC.
  std::vector<std::string> sigma_names;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string source_id;
};

namespace detail {

inline void profiles_to_knots(const std::vector<TCProfile>& profiles, const EnsembleLayout& layout, double* out) {
  if (profiles.size() != layout.n_tcs()) throw InvalidArgument("propagate: evaluator returned the wrong TC count");
  const std::size_t nk = layout.n_knots();
  for (std::size_t c = 0; c < profiles.size(); ++c) {
    const auto& p = profiles[c];
    if (p.times == layout.knots) {
      std::copy(p.values.begin(), p.values.end(), out + c * nk);
    } else {
      for (std::size_t k = 0; k < nk; ++k) out[c * nk + k] = interp_linear(p.times, p.values, layout.knots[k]);
    }
  }
}

}  // namespace detail

/// Pushes each sample through `evaluator` (theta span -> TC profiles), then
/// multiplies by exp(N(0, sigma^2)) independently at every (TC, knot) when
/// emulator noise is on. Sample s draws its noise from SplitMix64(seed, s).
template <class Evaluator>
PredictiveEnsemble propagate(const SampleSet& samples, Evaluator&& evaluator, const EnsembleLayout& layout,
                             const PropagationOptions& opt) {
  if (samples.empty()) throw InvalidArgument("propagate: no parameter samples");
  const auto theta_cols = detail::column_map(opt.theta_names, samples.names);
  const auto sigma_cols = detail::column_map(opt.sigma_names, samples.names);
  if (sigma_cols.size() > 1 && sigma_cols.size() != layout.n_tcs())
    throw InvalidArgument("propagate: need one sigma column or one per TC");

  PredictiveEnsemble ens;
  ens.layout = layout;
  ens.n_samples = samples.size();
  ens.emulator = !sigma_cols.empty();
  ens.seed = opt.seed;
  ens.source_id = opt.source_id;
  const std::size_t np = layout.n_points();
  ens.values.resize(ens.n_samples * np);

  parallel_for(ens.n_samples, opt.threads, [&](std::size_t s) {
    const auto row = samples.row(s);
    std::vector<double> theta(theta_cols.size());
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] = row[theta_cols[j]];
    double* out = ens.values.data() + s * np;
    detail::profiles_to_knots(evaluator(std::span<const double>(theta)), layout, out);
    for (std::size_t i = 0; i < np; ++i)
      if (!(out[i] > 0.0))
        throw DomainError("propagate: non-positive model output " + std::to_string(out[i]) + " at sample " +
                          std::to_string(s) + ", TC " + layout.tc_labels[i / layout.n_knots()]);
    if (sigma_cols.empty()) return;
    SplitMix64 rng(opt.seed, s);
    for (std::size_t c = 0; c < layout.n_tcs(); ++c) {
      const double sigma = row[sigma_cols.size() == 1 ? sigma_cols[0] : sigma_cols[c]];
      if (!(sigma >= 0.0)) throw DomainError("propagate: negative emulator sigma at sample " + std::to_string(s));
      for (std::size_t k = 0; k < layout.n_knots(); ++k) out[c * layout.n_knots() + k] *= std::exp(sigma * standard_normal(rng));
    }
  });
  return ens;
}

/// Deterministic model evaluation at the stored MAP point.
template <class Evaluator>
std::vector<TCProfile> map_trajectory(const PosteriorSamples& post, Evaluator&& evaluator,
                                      const std::vector<std::string>& theta_names) {
  if (post.map_point.empty()) throw InvalidArgument("map_trajectory: posterior has no MAP point");
  const auto cols = detail::column_map(theta_names, post.samples.names);
  std::vector<double> theta(cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) theta[j] = post.map_point[cols[j]];
  return evaluator(std::span<const double>(theta));
}

// ---------------------------------------------------------------------------
// Intervals
// ---------------------------------------------------------------------------

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
  bool contains(const Interval& o) const { return o.lo >= lo && o.hi <= hi; }
};

/// Central empirical interval; quantiles at (1-level)/2 and (1+level)/2 with
/// h = (n-1)q interpolation.
inline Interval prediction_interval(std::span<const double> samples, double level) {
  if (samples.size() < 2) throw InvalidArgument("prediction_interval: need at least 2 samples");
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("prediction_interval: level must lie in (0,1)");
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  const double a = 0.5 * (1.0 - level);
  return {quantile_sorted(s, a), quantile_sorted(s, 1.0 - a)};
}

struct PredictionBands {
  double level = 0.95;
  EnsembleLayout layout;
  std::vector<Interval> bounds;  // [tc][knot]
  std::vector<double> median;

  const Interval& at(std::size_t tc, std::size_t k) const { return bounds[tc * layout.n_knots() + k]; }
};

inline PredictionBands prediction_bands(const PredictiveEnsemble& ens, double level) {
  PredictionBands b;
  b.level = level;
  b.layout = ens.layout;
  for (std::size_t c = 0; c < ens.layout.n_tcs(); ++c)
    for (std::size_t k = 0; k < ens.layout.n_knots(); ++k) {
      auto col = ens.column(c, k);
      b.bounds.push_back(prediction_interval(col, level));
      std::sort(col.begin(), col.end());
      b.median.push_back(quantile_sorted(col, 0.5));
    }
  return b;
}

/// Fraction of observed points (data interpolated to the knots inside the
/// data's time range) that fall inside the band.
inline double coverage(const PredictionBands& bands, const std::vector<TCProfile>& data) {
  if (data.size() != bands.layout.n_tcs()) throw InvalidArgument("coverage: TC count mismatch");
  std::size_t hit = 0, total = 0;
  for (std::size_t c = 0; c < data.size(); ++c) {
    const auto& d = data[c];
    if (d.times.empty()) continue;
    for (std::size_t k = 0; k < bands.layout.n_knots(); ++k) {
      const double t = bands.layout.knots[k];
      if (t < d.times.front() || t > d.times.back()) continue;
      ++total;
      hit += bands.at(c, k).contains(interp_linear(d.times, d.values, t));
    }
  }
  if (total == 0) throw InvalidArgument("coverage: no data inside the knot range");
  return static_cast<double>(hit) / static_cast<double>(total);
}

/// Fraction of (TC, knot) points where `outer` contains `inner`.
inline double containment(const PredictionBands& outer, const PredictionBands& inner) {
  if (outer.bounds.size() != inner.bounds.size() || outer.bounds.empty())
    throw InvalidArgument("containment: band layouts differ");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < outer.bounds.size(); ++i) hit += outer.bounds[i].contains(inner.bounds[i]);
  return static_cast<double>(hit) / static_cast<double>(outer.bounds.size());
}

// ---------------------------------------------------------------------------
// Kernel density estimation
// ---------------------------------------------------------------------------

struct DensityEstimate {
  std::vector<double> grid;
  std::vector<double> pdf;
  double bandwidth = 0.0;
  bool degenerate = false;

  double operator()(double x) const {
    if (x < grid.front() || x > grid.back()) return 0.0;
    return interp_linear(grid, pdf, x);
  }

  /// Inverse of the trapezoid CDF on the grid.
  double quantile(double q) const {
    std::vector<double> cdf(grid.size(), 0.0);
    for (std::size_t i = 1; i < grid.size(); ++i)
      cdf[i] = cdf[i - 1] + 0.5 * (grid[i] - grid[i - 1]) * (pdf[i] + pdf[i - 1]);
    const double target = q * cdf.back();
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), target);
    if (it == cdf.begin()) return grid.front();
    if (it == cdf.end()) return grid.back();
    const std::size_t i = static_cast<std::size_t>(it - cdf.begin());
    const double span = cdf[i] - cdf[i - 1];
    const double t = span > 0.0 ? (target - cdf[i - 1]) / span : 0.0;
    return grid[i - 1] + t * (grid[i] - grid[i - 1]);
  }
};

inline constexpr std::size_t kKdeGridPoints = 512;

/// Silverman's rule 0.9 min(sd, IQR/1.34) n^(-1/5); falls back to sd when the
/// IQR is zero and to the floor 1e-9 |x| when there is no spread at all.
inline double silverman_bandwidth(std::span<const double> sorted, bool* degenerate = nullptr) {
  const double n = static_cast<double>(sorted.size());
  const double sd = sorted.size() > 1 ? std::sqrt(sample_variance(sorted)) : 0.0;
  const double iqr = sorted.size() > 1 ? quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25) : 0.0;
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  if (degenerate) *degenerate = !(spread > 0.0);
  if (!(spread > 0.0)) {
    const double scale = std::max(std::abs(sorted[sorted.size() / 2]), 1.0);
    return 1e-9 * scale;
  }
  return 0.9 * spread * std::pow(n, -0.2);
}

/// Gaussian-kernel density of `sorted` at the uniform grid lo + i dx. Exact
/// summation for small sets or samples outside the grid, linear binning onto
/// the grid otherwise.
inline std::vector<double> kde_on_grid(std::span<const double> sorted, double h, double lo, double hi, std::size_t m) {
  std::vector<double> out(m, 0.0);
  const double dx = (hi - lo) / static_cast<double>(m - 1);
  const double norm = 1.0 / (static_cast<double>(sorted.size()) * h * std::sqrt(2.0 * M_PI));
  const double cut = 8.0 * h;
  const bool binned = sorted.size() > 4 * m && dx < 0.25 * h && sorted.front() >= lo && sorted.back() <= hi;
  if (!binned) {
    for (std::size_t i = 0; i < m; ++i) {
      const double x = lo + dx * static_cast<double>(i);
      auto b = std::lower_bound(sorted.begin(), sorted.end(), x - cut);
      const auto e = std::upper_bound(b, sorted.end(), x + cut);
      double s = 0.0;
      for (; b != e; ++b) {
        const double z = (x - *b) / h;
        s += std::exp(-0.5 * z * z);
      }
      out[i] = s * norm;
    }
    return out;
  }
  std::vector<double> counts(m, 0.0);
  for (double v : sorted) {
    const double pos = std::clamp((v - lo) / dx, 0.0, static_cast<double>(m - 1));
    const auto j = std::min(static_cast<std::size_t>(pos), m - 2);
    const double f = pos - static_cast<double>(j);
    counts[j] += 1.0 - f;
    counts[j + 1] += f;
  }
  const auto reach = static_cast<std::size_t>(std::ceil(cut / dx));
  std::vector<double> kernel(reach + 1);
  for (std::size_t d = 0; d <= reach; ++d) {
    const double z = static_cast<double>(d) * dx / h;
    kernel[d] = std::exp(-0.5 * z * z);
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (counts[j] == 0.0) continue;
    const std::size_t a = j > reach ? j - reach : 0;
    const std::size_t b = std::min(m - 1, j + reach);
    for (std::size_t i = a; i <= b; ++i) out[i] += counts[j] * kernel[i > j ? i - j : j - i];
  }
  for (auto& v : out) v *= norm;
  return out;
}

/// Rescales pdf so its trapezoid integral over the uniform grid is one.
inline void normalize_density(std::span<const double> grid, std::span<double> pdf) {
  const double z = trapezoid(grid, pdf);
  if (!(z > 0.0)) throw DegenerateDistribution("density has zero mass on its grid");
  for (auto& v : pdf) v /= z;
}

inline DensityEstimate kde_fit(std::span<const double> samples, std::optional<double> bandwidth = std::nullopt,
                               std::size_t n_grid = kKdeGridPoints) {
  if (samples.empty()) throw InvalidArgument("kde_fit: no samples");
  if (n_grid < 3) throw InvalidArgument("kde_fit: grid too small");
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  DensityEstimate d;
  d.bandwidth = silverman_bandwidth(s, &d.degenerate);
  if (bandwidth) {
    if (!(*bandwidth > 0.0)) throw InvalidArgument("kde_fit: bandwidth must be positive");
    d.bandwidth = *bandwidth;
  }
  const double lo = s.front() - 4.0 * d.bandwidth;
  const double hi = s.back() + 4.0 * d.bandwidth;
  d.grid.resize(n_grid);
  for (std::size_t i = 0; i < n_grid; ++i) d.grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_grid - 1);
  d.pdf = kde_on_grid(s, d.bandwidth, lo, hi, n_grid);
  normalize_density(d.grid, d.pdf);
  return d;
}

// ---------------------------------------------------------------------------
// Normalized-time overlay
// ---------------------------------------------------------------------------

inline constexpr double kOverlayThreshold = 290.0;

struct OverlayProfile {
  std::string label;
  double depth = 0.0;
  bool applicable = false;  // false: never crossed the threshold
  double crossing_time = 0.0;
  std::vector<double> times;  // shifted and normalized
  std::vector<double> values;
  double max_value = 0.0;
};

struct OverlayComparison {
  std::string label;
  double depth = 0.0;
  double ground_max = 0.0;
  double flight_max = 0.0;
  bool ok = true;
};

struct OverlayResult {
  double threshold = kOverlayThreshold;
  double ground_duration = 0.0;
  double flight_duration = 0.0;
  std::vector<OverlayProfile> ground;
  std::vector<OverlayProfile> flight;
  std::vector<OverlayComparison> comparisons;
  bool verdict = true;
  std::vector<std::string> violations;
};

namespace detail {

// First up-crossing of `thr`, interpolated; nullopt if never reached.
inline std::optional<std::pair<double, std::size_t>> first_crossing(const TCProfile& p, double thr) {
  if (p.values.empty()) return std::nullopt;
  if (p.values[0] >= thr) return std::pair{p.times[0], std::size_t{0}};
  for (std::size_t i = 1; i < p.values.size(); ++i)
    if (p.values[i] >= thr) {
      const double f = (thr - p.values[i - 1]) / (p.values[i] - p.values[i - 1]);
      return std::pair{p.times[i - 1] + f * (p.times[i] - p.times[i - 1]), i};
    }
  return std::nullopt;
}

// Time from the first up-crossing to the last down-crossing (or record end).
inline double time_above(const TCProfile& p, double thr) {
  const auto up = first_crossing(p, thr);
  if (!up) return 0.0;
  double end = p.times.back();
  for (std::size_t i = p.values.size() - 1; i > up->second; --i)
    if (p.values[i - 1] >= thr && p.values[i] < thr) {
      const double f = (p.values[i - 1] - thr) / (p.values[i - 1] - p.values[i]);
      end = p.times[i - 1] + f * (p.times[i] - p.times[i - 1]);
      break;
    }
  return end - up->first;
}

inline std::vector<OverlayProfile> overlay_scenario(const std::vector<TCProfile>& profiles, double thr,
                                                    double& duration) {
  const auto surf = std::find_if(profiles.begin(), profiles.end(), [](const TCProfile& p) { return p.depth <= 1e-12; });
  if (surf == profiles.end()) throw InvalidArgument("normalized_overlay: each scenario needs a surface (depth 0) profile");
  duration = time_above(*surf, thr);
  std::vector<OverlayProfile> out;
  for (const auto& p : profiles) {
    OverlayProfile o;
    o.label = p.label;
    o.depth = p.depth;
    o.max_value = p.values.empty() ? 0.0 : *std::max_element(p.values.begin(), p.values.end());
    const auto up = first_crossing(p, thr);
    o.applicable = up.has_value() && duration > 0.0;
    if (o.applicable) {
      o.crossing_time = up->first;
      o.times.push_back(0.0);
      o.values.push_back(up->second == 0 ? p.values[0] : thr);
      for (std::size_t i = up->second; i < p.size(); ++i) {
        if (p.times[i] <= up->first) continue;
        o.times.push_back((p.times[i] - up->first) / duration);
        o.values.push_back(p.values[i]);
      }
    }
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace detail

/// Shifts each profile to start at its first up-crossing of `threshold` and
/// divides time by its scenario's surface time-above-threshold. The verdict
/// holds when, at every label present in both scenarios (surface node plus
/// TCs), the flight maximum does not exceed the ground maximum.
inline OverlayResult normalized_overlay(const std::vector<TCProfile>& ground, const std::vector<TCProfile>& flight,
                                        double threshold = kOverlayThreshold) {
  OverlayResult r;
  r.threshold = threshold;
  r.ground = detail::overlay_scenario(ground, threshold, r.ground_duration);
  r.flight = detail::overlay_scenario(flight, threshold, r.flight_duration);
  for (const auto& g : r.ground) {
    const auto f = std::find_if(r.flight.begin(), r.flight.end(), [&](const OverlayProfile& x) { return x.label == g.label; });
    if (f == r.flight.end()) continue;
    OverlayComparison c{g.label, g.depth, g.max_value, f->max_value, f->max_value <= g.max_value};
    if (!c.ok) {
      r.verdict = false;
      r.violations.push_back(g.label + " (depth " + std::to_string(g.depth * 1e3) + " mm)");
    }
    r.comparisons.push_back(c);
  }
  if (r.comparisons.empty()) throw InvalidArgument("normalized_overlay: scenarios share no profile labels");
  return r;
}

}  // namespace ndx
