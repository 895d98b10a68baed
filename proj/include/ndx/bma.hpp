#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ndx/calibration.hpp"
#include "ndx/common.hpp"
#include "ndx/prior.hpp"

// Bayesian model averaging: evidence, model weights, Bayes factors, the
// two-component mixture prior and the pooled BMA posterior.

namespace ndx {

enum class ModelKind { Updated, Unupdated };

struct BayesianModel {
  std::string label;
  ModelKind kind = ModelKind::Unupdated;
  std::optional<PosteriorSamples> posterior;  // Updated
  std::string data_id;                        // Updated: experiment the posterior was conditioned on
  std::optional<PriorSpec> prior;             // Unupdated (M_up)
  double prior_probability = 0.0;
};

inline void validate_model_set(const std::vector<BayesianModel>& models) {
  if (models.empty()) throw InvalidArgument("model set is empty");
  double s = 0.0;
  for (const auto& m : models) {
    if (!(m.prior_probability >= 0.0 && m.prior_probability <= 1.0))
      throw InvalidArgument("model '" + m.label + "': prior probability outside [0,1]");
    if (m.kind == ModelKind::Updated && (!m.posterior || m.posterior->samples.empty()))
      throw InvalidArgument("model '" + m.label + "': updated model needs posterior samples");
    if (m.kind == ModelKind::Unupdated && !m.prior) throw InvalidArgument("model '" + m.label + "': M_up needs a prior");
    s += m.prior_probability;
  }
  if (std::abs(s - 1.0) > 1e-12) throw InvalidArgument("model prior probabilities must sum to 1");
}

struct EvidenceEstimate {
  double log_evidence = kNegInf;
  double std_error = 0.0;      // of the evidence itself (jackknife of the mean)
  double log_std_error = 0.0;  // jackknife on the log scale
  std::size_t n_mc = 0;
  bool underflow = false;

  double evidence() const { return std::exp(log_evidence); }

  const EvidenceEstimate& require_finite() const {
    if (underflow)
      throw EvidenceUnderflow("evidence underflow: every Monte-Carlo draw had zero likelihood; increase n_mc or temper the likelihood");
    return *this;
  }
};

/// Log-mean-exp with jackknife errors, from per-draw log likelihoods.
inline EvidenceEstimate evidence_from_log_likelihoods(std::span<const double> ll) {
  EvidenceEstimate e;
  e.n_mc = ll.size();
  const double n = static_cast<double>(ll.size());
  const double lse = log_sum_exp(ll);
  if (lse == kNegInf) {
    e.underflow = true;
    return e;
  }
  e.log_evidence = lse - std::log(n);
  double m = kNegInf;
  for (double v : ll) m = std::max(m, v);
  double S = 0.0;
  for (double v : ll) S += std::exp(v - m);
  std::vector<double> loo(ll.size());
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < ll.size(); ++i) {
    const double wi = std::exp(ll[i] - m);
    const double mean_w = S / n;
    sum_sq += (wi - mean_w) * (wi - mean_w);
    const double rest = S - wi;
    loo[i] = rest > 0.0 ? m + std::log(rest / (n - 1.0)) : kNegInf;
  }
  // jackknife of the mean reduces to the usual s / sqrt(n)
  e.std_error = std::exp(m) * std::sqrt(sum_sq / (n - 1.0) / n);
  double lbar = 0.0;
  bool finite = true;
  for (double v : loo) {
    if (v == kNegInf) finite = false;
    lbar += v;
  }
  if (finite) {
    lbar /= n;
    double acc = 0.0;
    for (double v : loo) acc += (v - lbar) * (v - lbar);
    e.log_std_error = std::sqrt((n - 1.0) / n * acc);
  } else {
    e.log_std_error = std::numeric_limits<double>::infinity();
  }
  return e;
}

/// Prior Monte Carlo estimate of the marginal likelihood.
template <class LogLik>
EvidenceEstimate estimate_evidence(LogLik&& loglik, const PriorSpec& prior, std::size_t n_mc, std::uint64_t seed,
                                   unsigned threads = 0) {
  if (n_mc < 100) throw InvalidArgument("estimate_evidence: n_mc must be >= 100");
  prior.validate();
  std::vector<double> ll(n_mc);
  parallel_for(n_mc, threads, [&](std::size_t i) {
    SplitMix64 rng(seed, i);
    const auto x = prior.sample(rng);
    const double v = loglik(std::span<const double>(x));
    ll[i] = std::isnan(v) ? kNegInf : v;
  });
  return evidence_from_log_likelihoods(ll);
}

/// Same, averaging over stored samples (e.g. a posterior standing in as the
/// prior of a later experiment). Draws uniformly with replacement.
template <class LogLik>
EvidenceEstimate estimate_evidence(LogLik&& loglik, const SampleSet& samples, std::size_t n_mc, std::uint64_t seed,
                                   unsigned threads = 0) {
  if (n_mc < 100) throw InvalidArgument("estimate_evidence: n_mc must be >= 100");
  if (samples.empty()) throw InvalidArgument("estimate_evidence: empty sample set");
  std::vector<double> ll(n_mc);
  parallel_for(n_mc, threads, [&](std::size_t i) {
    SplitMix64 rng(seed, i);
    const double v = loglik(samples.row(uniform_index(rng, samples.size())));
    ll[i] = std::isnan(v) ? kNegInf : v;
  });
  return evidence_from_log_likelihoods(ll);
}

/// P(M_j | y) = Z_j P(M_j) / sum_i Z_i P(M_i), in log space.
inline std::vector<double> model_posterior(std::span<const double> log_evidences, std::span<const double> priors) {
  if (log_evidences.size() != priors.size() || priors.empty())
    throw InvalidArgument("model_posterior: size mismatch");
  const double psum = std::accumulate(priors.begin(), priors.end(), 0.0);
  if (std::abs(psum - 1.0) > 1e-12) throw InvalidArgument("model_posterior: priors must sum to 1");
  std::vector<double> lw(priors.size());
  for (std::size_t i = 0; i < priors.size(); ++i) {
    if (priors[i] < 0.0) throw InvalidArgument("model_posterior: negative prior");
    lw[i] = priors[i] > 0.0 ? log_evidences[i] + std::log(priors[i]) : kNegInf;
  }
  const double z = log_sum_exp(lw);
  if (z == kNegInf) throw EvidenceUnderflow("model_posterior: every model has zero posterior mass");
  std::vector<double> w(lw.size());
  for (std::size_t i = 0; i < lw.size(); ++i) w[i] = lw[i] == kNegInf ? 0.0 : std::exp(lw[i] - z);
  return w;
}

inline double bayes_factor(double log_ev_j, double log_ev_k) {
  if (!std::isfinite(log_ev_j) || !std::isfinite(log_ev_k)) throw InvalidArgument("bayes_factor: non-finite log evidence");
  return std::exp(log_ev_j - log_ev_k);
}

/// w P(theta | y_exp) + (1 - w) P(theta | M_up); the informative component is
/// represented by its posterior samples.
struct MixturePrior {
  double w = 0.5;
  SampleSet informative;
  PriorSpec noninformative;

  void validate() const {
    if (!(w >= 0.0 && w <= 1.0)) throw InvalidArgument("mixture weight must lie in [0,1]");
    noninformative.validate();
    if (w > 0.0 && informative.empty()) throw InvalidArgument("mixture: w > 0 needs informative samples");
  }
};

/// n draws from the mixture; draw i uses its own counter-based stream.
/// Columns follow the non-informative prior's parameter order.
inline SampleSet mixture_sample(const MixturePrior& mix, std::size_t n, std::uint64_t seed) {
  mix.validate();
  const auto names = mix.noninformative.names();
  std::vector<std::size_t> cols;
  if (!mix.informative.empty()) cols = detail::column_map(names, mix.informative.names);
  SampleSet out(names);
  out.data.resize(n * names.size());
  for (std::size_t i = 0; i < n; ++i) {
    SplitMix64 rng(seed, i);
    std::span<double> row = out.row(i);
    if (uniform01(rng) < mix.w) {
      const auto src = mix.informative.row(uniform_index(rng, mix.informative.size()));
      for (std::size_t j = 0; j < names.size(); ++j) row[j] = src[cols[j]];
    } else {
      const auto x = mix.noninformative.sample(rng);
      std::copy(x.begin(), x.end(), row.begin());
    }
  }
  return out;
}

/// Integer allocation of n proportional to weights; remainders go to the
/// largest fractional parts (ties to the lower index).
inline std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t n) {
  const double s = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (weights.empty() || !(s > 0.0)) throw InvalidArgument("largest_remainder: weights must have positive sum");
  std::vector<std::size_t> alloc(weights.size());
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0) throw InvalidArgument("largest_remainder: negative weight");
    const double exact = static_cast<double>(n) * weights[i] / s;
    alloc[i] = static_cast<std::size_t>(std::floor(exact));
    used += alloc[i];
    frac.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++alloc[frac[k % frac.size()].second];
  return alloc;
}

/// Pooled sample from sum_i w_i P(theta | y, M_i): n w_i draws (largest
/// remainder) with replacement from each model's samples.
inline SampleSet bma_posterior(std::span<const double> weights, const std::vector<SampleSet>& sets, std::size_t n,
                               std::uint64_t seed) {
  if (weights.size() != sets.size() || sets.empty()) throw InvalidArgument("bma_posterior: size mismatch");
  const double s = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(s - 1.0) > 1e-9) throw InvalidArgument("bma_posterior: weights must sum to 1");
  const auto alloc = largest_remainder(weights, n);
  const std::vector<std::string>* names = nullptr;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (alloc[i] == 0) continue;
    if (sets[i].empty()) throw InvalidArgument("bma_posterior: model " + std::to_string(i) + " has weight but no samples");
    if (!names) names = &sets[i].names;
  }
  SampleSet out(*names);
  out.data.reserve(n * names->size());
  std::uint64_t counter = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (alloc[i] == 0) continue;
    const auto cols = detail::column_map(*names, sets[i].names);
    std::vector<double> row(names->size());
    for (std::size_t k = 0; k < alloc[i]; ++k) {
      SplitMix64 rng(seed, counter++);
      const auto src = sets[i].row(uniform_index(rng, sets[i].size()));
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = src[cols[j]];
      out.push_back(row);
    }
  }
  return out;
}

/// BMA prior over a fixed model set: sum_j P(M_j) P(theta | M_j). With one
/// experiment model plus M_up this is the two-component mixture.
inline MixturePrior two_component_prior(const BayesianModel& experiment, const BayesianModel& unupdated) {
  validate_model_set({experiment, unupdated});
  if (experiment.kind != ModelKind::Updated || unupdated.kind != ModelKind::Unupdated)
    throw InvalidArgument("two_component_prior: expects one updated model and M_up");
  MixturePrior m;
  m.w = experiment.prior_probability;
  m.informative = experiment.posterior->samples;
  m.noninformative = *unupdated.prior;
  return m;
}

}  // namespace ndx
