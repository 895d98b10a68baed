#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ndx/common.hpp"

namespace ndx {

/// Point in parameter space; component meaning is given by the PriorSpec
/// (or SampleSet) it travels with.
using ParameterVector = std::vector<double>;

enum class MarginalKind { Uniform, Normal };

/// Independent marginal prior: Uniform(a, b) or Normal(mean = a, sd = b).
struct Marginal {
  std::string name;
  MarginalKind kind = MarginalKind::Uniform;
  double a = 0.0;
  double b = 1.0;

  static Marginal uniform(std::string name, double lo, double hi) {
    return {std::move(name), MarginalKind::Uniform, lo, hi};
  }
  static Marginal normal(std::string name, double mean, double sd) {
    return {std::move(name), MarginalKind::Normal, mean, sd};
  }

  double mean() const { return kind == MarginalKind::Uniform ? 0.5 * (a + b) : a; }
  double sd() const { return kind == MarginalKind::Uniform ? (b - a) / std::sqrt(12.0) : b; }

  void validate() const {
    if (kind == MarginalKind::Uniform && !(a < b))
      throw InvalidArgument("uniform marginal '" + name + "' needs a < b");
    if (kind == MarginalKind::Normal && !(b > 0.0))
      throw InvalidArgument("normal marginal '" + name + "' needs sd > 0");
  }

  double log_density(double x) const {
    if (kind == MarginalKind::Uniform) return (x >= a && x <= b) ? -std::log(b - a) : kNegInf;
    const double z = (x - a) / b;
    return -0.5 * z * z - std::log(b) - 0.5 * std::log(2.0 * M_PI);
  }

  bool in_support(double x) const { return kind == MarginalKind::Normal || (x >= a && x <= b); }

  /// Inverse CDF; u must already be inside (0,1) for normal marginals.
  double inverse_cdf(double u) const {
    return kind == MarginalKind::Uniform ? a + (b - a) * u : a + b * normal_quantile(u);
  }

  /// Map to the standard variable of the matching Wiener-Askey family:
  /// [-1,1] for uniform, N(0,1) for normal.
  double standardize(double x) const {
    return kind == MarginalKind::Uniform ? 2.0 * (x - a) / (b - a) - 1.0 : (x - a) / b;
  }

  template <class Engine>
  double sample(Engine& engine) const {
    return kind == MarginalKind::Uniform ? a + (b - a) * uniform01(engine) : a + b * standard_normal(engine);
  }
};

/// Joint prior made of independent named marginals.
struct PriorSpec {
  std::vector<Marginal> marginals;

  std::size_t size() const { return marginals.size(); }
  const Marginal& operator[](std::size_t i) const { return marginals[i]; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(marginals.size());
    for (const auto& m : marginals) out.push_back(m.name);
    return out;
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < marginals.size(); ++i)
      if (marginals[i].name == name) return i;
    throw InvalidArgument("unknown parameter '" + name + "'");
  }

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& m : marginals) {
      m.validate();
      if (!seen.insert(m.name).second) throw InvalidArgument("duplicate parameter name '" + m.name + "'");
    }
  }

  template <class Engine>
  ParameterVector sample(Engine& engine) const {
    ParameterVector x(marginals.size());
    for (std::size_t i = 0; i < marginals.size(); ++i) x[i] = marginals[i].sample(engine);
    return x;
  }

  ParameterVector means() const {
    ParameterVector x(marginals.size());
    for (std::size_t i = 0; i < marginals.size(); ++i) x[i] = marginals[i].mean();
    return x;
  }
};

/// Sum of marginal log-densities; -inf outside the support.
inline double log_prior(std::span<const double> theta, const PriorSpec& prior) {
  if (theta.size() != prior.size()) throw InvalidArgument("log_prior: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double l = prior[i].log_density(theta[i]);
    if (l == kNegInf) return kNegInf;
    s += l;
  }
  return s;
}

/// Row-major set of parameter samples.
struct SampleSet {
  std::vector<std::string> names;
  std::vector<double> data;

  SampleSet() = default;
  explicit SampleSet(std::vector<std::string> n) : names(std::move(n)) {}

  std::size_t dim() const { return names.size(); }
  std::size_t size() const { return dim() == 0 ? 0 : data.size() / dim(); }
  bool empty() const { return size() == 0; }

  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim(), dim()}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * dim(), dim()}; }

  void push_back(std::span<const double> x) {
    if (x.size() != dim()) throw InvalidArgument("SampleSet: row dimension mismatch");
    data.insert(data.end(), x.begin(), x.end());
  }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = data[i * dim() + j];
    return out;
  }
};

namespace detail {

// Column permutation mapping `target` names to positions in `source`.
inline std::vector<std::size_t> column_map(const std::vector<std::string>& target, const std::vector<std::string>& source) {
  std::vector<std::size_t> map;
  for (const auto& nm : target) {
    const auto it = std::find(source.begin(), source.end(), nm);
    if (it == source.end()) throw InvalidArgument("parameter '" + nm + "' missing from sample set");
    map.push_back(static_cast<std::size_t>(it - source.begin()));
  }
  return map;
}

}  // namespace detail

/// Latin hypercube design on [0,1]^p: one point per stratum in every
/// coordinate, jittered uniformly inside the stratum.
template <class Engine>
std::vector<std::vector<double>> latin_hypercube(std::size_t n, std::size_t p, Engine& engine) {
  std::vector<std::vector<double>> pts(n, std::vector<double>(p));
  for (std::size_t j = 0; j < p; ++j) {
    const auto perm = random_permutation(engine, n);
    for (std::size_t i = 0; i < n; ++i)
      pts[i][j] = (static_cast<double>(perm[i]) + uniform01(engine)) / static_cast<double>(n);
  }
  return pts;
}

/// LHS draws mapped through each marginal's inverse CDF.
template <class Engine>
SampleSet latin_hypercube_samples(const PriorSpec& prior, std::size_t n, Engine& engine) {
  SampleSet out(prior.names());
  out.data.reserve(n * prior.size());
  for (const auto& u : latin_hypercube(n, prior.size(), engine)) {
    for (std::size_t j = 0; j < prior.size(); ++j) {
      const double uj = std::clamp(u[j], 1e-12, 1.0 - 1e-12);
      out.data.push_back(prior[j].inverse_cdf(uj));
    }
  }
  return out;
}

}  // namespace ndx
