#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ndx/common.hpp"
#include "ndx/prior.hpp"

// Morris elementary-effects screening in the joint quantile space of the
// prior, using the trajectory (one-at-a-time) design.

namespace ndx {

struct TrajectoryConfig {
  std::size_t r = 100;        // trajectories
  std::size_t levels = 101;   // d: grid levels per coordinate
  std::size_t jump = 1;       // c: level jump, delta = c/(d-1)
  std::uint64_t seed = 0;

  double delta() const { return static_cast<double>(jump) / static_cast<double>(levels - 1); }

  void validate() const {
    if (r < 1) throw InvalidArgument("Morris: need at least one trajectory");
    if (levels < 2) throw InvalidArgument("Morris: need at least two grid levels");
    if (jump < 1 || jump > levels - 1) throw InvalidArgument("Morris: level jump must be in [1, d-1]");
  }
};

struct Trajectory {
  std::vector<std::vector<double>> points;  // p+1 points in [0,1]^p
  std::vector<std::size_t> perturbed_index;  // input moved at step k
  std::vector<int> signs;                    // +1 / -1 per step

  double delta_signed(std::size_t step, double delta) const { return signs[step] * delta; }
};

/// r trajectories over the d-level grid. Start points come from an LHS design
/// snapped to the nearest level from which a jump stays inside [0,1]; each
/// trajectory perturbs every input exactly once in a fresh random order.
inline std::vector<Trajectory> build_trajectories(std::size_t p, const TrajectoryConfig& cfg) {
  if (p < 1) throw InvalidArgument("Morris: need at least one input");
  cfg.validate();
  const auto top = static_cast<long>(cfg.levels - 1);
  const auto c = static_cast<long>(cfg.jump);
  const double scale = static_cast<double>(top);

  SplitMix64 rng(cfg.seed, 0x4d6f72726973ULL);
  const auto starts = latin_hypercube(cfg.r, p, rng);

  std::vector<Trajectory> out;
  out.reserve(cfg.r);
  for (std::size_t t = 0; t < cfg.r; ++t) {
    std::vector<long> level(p);
    std::vector<int> sign(p);
    for (std::size_t j = 0; j < p; ++j) {
      long l = std::lround(starts[t][j] * scale);
      const bool up_ok = l + c <= top;
      const bool down_ok = l - c >= 0;
      if (!up_ok && !down_ok) {
        // middle band unreachable when c > (d-1)/2: move to nearest feasible level
        l = (l - (top - c) <= c - l) ? top - c : c;
      }
      const bool up = l + c <= top;
      const bool down = l - c >= 0;
      if (up && down)
        sign[j] = uniform01(rng) < 0.5 ? 1 : -1;
      else
        sign[j] = up ? 1 : -1;
      level[j] = l;
    }
    Trajectory traj;
    traj.perturbed_index = random_permutation(rng, p);
    auto to_point = [&] {
      std::vector<double> x(p);
      for (std::size_t j = 0; j < p; ++j) x[j] = static_cast<double>(level[j]) / scale;
      return x;
    };
    traj.points.push_back(to_point());
    for (std::size_t k = 0; k < p; ++k) {
      const std::size_t j = traj.perturbed_index[k];
      level[j] += sign[j] * c;
      traj.signs.push_back(sign[j]);
      traj.points.push_back(to_point());
    }
    out.push_back(std::move(traj));
  }
  return out;
}

/// Finite-difference quotient along one trajectory step. Dividing by the
/// signed step makes a linear response yield its slope in either direction.
inline double elementary_effect(double f_perturbed, double f_base, double delta_signed) {
  if (delta_signed == 0.0) throw InvalidArgument("elementary_effect: zero step");
  return (f_perturbed - f_base) / delta_signed;
}

/// EE samples laid out [trajectory][input][output].
struct EESamples {
  std::size_t r = 0;
  std::size_t p = 0;
  std::size_t n_outputs = 0;
  std::vector<double> values;

  double& at(std::size_t t, std::size_t i, std::size_t o) { return values[(t * p + i) * n_outputs + o]; }
  double at(std::size_t t, std::size_t i, std::size_t o) const { return values[(t * p + i) * n_outputs + o]; }
};

struct MorrisStats {
  std::size_t n_inputs = 0;
  std::size_t n_outputs = 0;
  std::vector<double> mu;       // [input][output]
  std::vector<double> mu_star;
  std::optional<std::vector<double>> sigma;  // absent when r < 2

  double mu_at(std::size_t i, std::size_t o) const { return mu[i * n_outputs + o]; }
  double mu_star_at(std::size_t i, std::size_t o) const { return mu_star[i * n_outputs + o]; }
  std::optional<double> sigma_at(std::size_t i, std::size_t o) const {
    if (!sigma) return std::nullopt;
    return (*sigma)[i * n_outputs + o];
  }

  double mu_star_max(std::size_t i) const {
    double m = 0.0;
    for (std::size_t o = 0; o < n_outputs; ++o) m = std::max(m, mu_star_at(i, o));
    return m;
  }
  double sigma_max(std::size_t i) const {
    if (!sigma) return 0.0;
    double m = 0.0;
    for (std::size_t o = 0; o < n_outputs; ++o) m = std::max(m, (*sigma)[i * n_outputs + o]);
    return m;
  }
};

inline MorrisStats morris_statistics(const EESamples& ee) {
  if (ee.r < 1) throw InvalidArgument("morris_statistics: no samples");
  MorrisStats s;
  s.n_inputs = ee.p;
  s.n_outputs = ee.n_outputs;
  const std::size_t m = ee.p * ee.n_outputs;
  s.mu.assign(m, 0.0);
  s.mu_star.assign(m, 0.0);
  if (ee.r >= 2) s.sigma.emplace(m, 0.0);
  const double r = static_cast<double>(ee.r);
  for (std::size_t i = 0; i < ee.p; ++i) {
    for (std::size_t o = 0; o < ee.n_outputs; ++o) {
      double sum = 0.0, abs_sum = 0.0;
      for (std::size_t t = 0; t < ee.r; ++t) {
        sum += ee.at(t, i, o);
        abs_sum += std::abs(ee.at(t, i, o));
      }
      const double mu = sum / r;
      s.mu[i * ee.n_outputs + o] = mu;
      s.mu_star[i * ee.n_outputs + o] = abs_sum / r;
      if (s.sigma) {
        double ss = 0.0;
        for (std::size_t t = 0; t < ee.r; ++t) ss += (ee.at(t, i, o) - mu) * (ee.at(t, i, o) - mu);
        (*s.sigma)[i * ee.n_outputs + o] = std::sqrt(ss / (r - 1.0));
      }
    }
  }
  return s;
}

/// Component-wise inverse CDF. Normal marginals at u = 0 or 1 are clamped to
/// 1e-12 / 1-1e-12 and reported through `warnings`.
inline ParameterVector quantile_map(std::span<const double> u, const PriorSpec& priors, Warnings* warnings = nullptr) {
  if (u.size() != priors.size()) throw InvalidArgument("quantile_map: dimension mismatch");
  ParameterVector x(u.size());
  for (std::size_t j = 0; j < u.size(); ++j) {
    if (u[j] < 0.0 || u[j] > 1.0) throw InvalidArgument("quantile_map: coordinate outside [0,1]");
    double uj = u[j];
    if (priors[j].kind == MarginalKind::Normal && (uj < 1e-12 || uj > 1.0 - 1e-12)) {
      uj = std::clamp(uj, 1e-12, 1.0 - 1e-12);
      warn(warnings, "quantile_map: clamped u for normal input '" + priors[j].name + "'");
    }
    x[j] = priors[j].inverse_cdf(uj);
  }
  return x;
}

struct ScreeningResult {
  std::vector<std::size_t> influential;  // ascending input index
  std::vector<double> distance;          // per input, sqrt(mu*_max^2 + sigma_max^2)
  Warnings warnings;
};

/// Inputs whose (mu*_max, sigma_max) point lies at least `fraction` of the
/// largest distance from the origin.
inline ScreeningResult screen(const MorrisStats& stats, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidArgument("screen: fraction must be in (0,1)");
  ScreeningResult res;
  res.distance.resize(stats.n_inputs);
  double largest = 0.0;
  for (std::size_t i = 0; i < stats.n_inputs; ++i) {
    res.distance[i] = std::hypot(stats.mu_star_max(i), stats.sigma_max(i));
    largest = std::max(largest, res.distance[i]);
  }
  if (largest == 0.0) {
    res.warnings.push_back("screen: every input has zero Morris distance; nothing is influential");
    return res;
  }
  for (std::size_t i = 0; i < stats.n_inputs; ++i)
    if (res.distance[i] >= fraction * largest) res.influential.push_back(i);
  return res;
}

struct MorrisResult {
  std::vector<Trajectory> trajectories;
  EESamples ee;
  MorrisStats stats;
  Warnings warnings;
};

/// Full screening run. `model` maps a parameter vector to a fixed-length
/// output vector (e.g. every TC x time point of a field response). Model
/// evaluations run concurrently; the reduction is serial in trajectory order.
template <class Model>
MorrisResult run_morris(Model&& model, const PriorSpec& priors, const TrajectoryConfig& cfg, unsigned threads = 0) {
  priors.validate();
  const std::size_t p = priors.size();
  MorrisResult res;
  res.trajectories = build_trajectories(p, cfg);

  const std::size_t pts_per = p + 1;
  std::vector<std::vector<double>> outputs(cfg.r * pts_per);
  std::vector<Warnings> warn_per(cfg.r * pts_per);
  parallel_for(outputs.size(), threads, [&](std::size_t k) {
    const auto& u = res.trajectories[k / pts_per].points[k % pts_per];
    outputs[k] = model(quantile_map(u, priors, &warn_per[k]));
  });
  for (auto& w : warn_per) res.warnings.insert(res.warnings.end(), w.begin(), w.end());

  const std::size_t n_out = outputs.front().size();
  res.ee.r = cfg.r;
  res.ee.p = p;
  res.ee.n_outputs = n_out;
  res.ee.values.assign(cfg.r * p * n_out, 0.0);
  const double delta = cfg.delta();
  for (std::size_t t = 0; t < cfg.r; ++t) {
    const auto& traj = res.trajectories[t];
    for (std::size_t k = 0; k < p; ++k) {
      const auto& base = outputs[t * pts_per + k];
      const auto& next = outputs[t * pts_per + k + 1];
      if (base.size() != n_out || next.size() != n_out)
        throw InvalidArgument("run_morris: model output length changed between evaluations");
      const std::size_t input = traj.perturbed_index[k];
      for (std::size_t o = 0; o < n_out; ++o)
        res.ee.at(t, input, o) = elementary_effect(next[o], base[o], traj.delta_signed(k, delta));
    }
  }
  res.stats = morris_statistics(res.ee);
  return res;
}

}  // namespace ndx
