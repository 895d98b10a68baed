#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ndx/common.hpp"
#include "ndx/forward_model.hpp"
#include "ndx/prior.hpp"

// Bayesian calibration: log-error Gaussian likelihood (per-thermocouple or a
// single emulator sigma), DRAM sampling, chain ensembles and post-processing.

namespace ndx {

enum class LikelihoodMode { PerTC, Emulator };

struct LikelihoodSpec {
  LikelihoodMode mode = LikelihoodMode::Emulator;
  Marginal sigma_prior = Marginal::uniform("sigma", 1e-4, 0.5);  // on the log-response scale
  double epsilon = 0.0;  // observational noise sd, added in quadrature

  std::size_t n_sigmas(std::size_t n_tcs) const { return mode == LikelihoodMode::PerTC ? n_tcs : 1; }

  std::vector<std::string> sigma_names(const std::vector<TCProfile>& data) const {
    if (mode == LikelihoodMode::Emulator) return {"sigma_em"};
    std::vector<std::string> out;
    for (const auto& tc : data) out.push_back("sigma_L_" + tc.label);
    return out;
  }
};

/// Sum over thermocouples of -0.5 nu ln(2 pi s^2) - 0.5 sum_t (ln y - ln f)^2 / s^2,
/// s^2 = sigma^2 + epsilon^2. `sigmas` holds one value per TC (PerTC) or one
/// value (Emulator). Predictions must already sit on the data times.
inline double log_likelihood(std::span<const double> sigmas, const std::vector<TCProfile>& data,
                             const std::vector<TCProfile>& predictions, const LikelihoodSpec& spec) {
  if (data.size() != predictions.size()) throw InvalidArgument("log_likelihood: data/prediction TC count mismatch");
  if (sigmas.size() != spec.n_sigmas(data.size())) throw InvalidArgument("log_likelihood: wrong number of sigmas");
  double total = 0.0;
  for (std::size_t c = 0; c < data.size(); ++c) {
    const auto& y = data[c].values;
    const auto& f = predictions[c].values;
    if (y.size() != f.size()) throw InvalidArgument("log_likelihood: prediction not aligned with data for " + data[c].label);
    const double sigma = spec.mode == LikelihoodMode::PerTC ? sigmas[c] : sigmas[0];
    if (!(sigma > 0.0)) throw DomainError("log_likelihood: sigma must be positive");
    const double s2 = sigma * sigma + spec.epsilon * spec.epsilon;
    double ss = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) {
      if (!(y[t] > 0.0)) throw DomainError("log_likelihood: non-positive data in " + data[c].label + " at index " + std::to_string(t));
      if (!(f[t] > 0.0))
        throw DomainError("log_likelihood: non-positive prediction in " + data[c].label + " at index " + std::to_string(t));
      const double r = std::log(y[t]) - std::log(f[t]);
      ss += r * r;
    }
    total += -0.5 * static_cast<double>(y.size()) * std::log(2.0 * M_PI * s2) - 0.5 * ss / s2;
  }
  return total;
}

/// Interpolates each prediction onto the matching data profile's times.
inline std::vector<TCProfile> align_predictions(const std::vector<TCProfile>& predictions,
                                                const std::vector<TCProfile>& data) {
  if (predictions.size() != data.size()) throw InvalidArgument("align_predictions: TC count mismatch");
  std::vector<TCProfile> out(data.size());
  for (std::size_t c = 0; c < data.size(); ++c) {
    const auto& p = predictions[c];
    out[c].label = data[c].label;
    out[c].depth = p.depth;
    out[c].times = data[c].times;
    if (p.times == data[c].times) {
      out[c].values = p.values;
      continue;
    }
    out[c].values.resize(data[c].times.size());
    for (std::size_t t = 0; t < data[c].times.size(); ++t) out[c].values[t] = interp_linear(p.times, p.values, data[c].times[t]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// DRAM
// ---------------------------------------------------------------------------

struct DramConfig {
  std::size_t n_samples = 50000;
  double adapt_start_fraction = 0.1;
  std::size_t adapt_interval = 100;
  double dr_scale = 0.2;  // stage-2 covariance = dr_scale x stage-1 covariance
  double eps_reg = 1e-10;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_samples < 2) throw InvalidArgument("DRAM: need at least 2 samples");
    if (!(adapt_start_fraction >= 0.0 && adapt_start_fraction <= 1.0))
      throw InvalidArgument("DRAM: adaptation start fraction outside [0,1]");
    if (adapt_interval == 0) throw InvalidArgument("DRAM: adaptation interval must be >= 1");
    if (!(dr_scale > 0.0)) throw InvalidArgument("DRAM: DR scale must be positive");
    if (!(eps_reg >= 0.0)) throw InvalidArgument("DRAM: regularization must be non-negative");
  }
};

struct Chain {
  std::size_t dim = 0;
  std::vector<double> states;         // n x dim, row-major
  std::vector<double> log_posterior;  // per state
  double acceptance_rate = 0.0;
  std::uint64_t seed = 0;
  Warnings warnings;

  std::size_t size() const { return log_posterior.size(); }
  std::span<const double> state(std::size_t i) const { return {states.data() + i * dim, dim}; }
};

/// Adaptive Metropolis with one delayed-rejection stage. `log_target` is the
/// (unnormalized) log density; it may return -inf. States are recorded as
/// produced; `init` must have finite log density.
template <class LogTarget>
Chain dram_run(LogTarget&& log_target, std::span<const double> init, const Eigen::MatrixXd& initial_cov,
               const DramConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(init.size());
  if (d == 0) throw InvalidArgument("DRAM: empty state");
  if (initial_cov.rows() != d || initial_cov.cols() != d) throw InvalidArgument("DRAM: proposal covariance shape mismatch");

  Chain chain;
  chain.dim = init.size();
  chain.seed = cfg.seed;
  chain.states.reserve(cfg.n_samples * chain.dim);
  chain.log_posterior.reserve(cfg.n_samples);

  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(init.data(), d);
  double lp = log_target(std::span<const double>(x.data(), chain.dim));
  if (!std::isfinite(lp)) throw InvalidArgument("DRAM: initial state has non-finite log density");

  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd C1 = initial_cov + cfg.eps_reg * I;
  Eigen::LLT<Eigen::MatrixXd> llt(C1);
  if (llt.info() != Eigen::Success) throw InvalidArgument("DRAM: initial covariance is not positive definite");
  Eigen::MatrixXd L1 = llt.matrixL();
  Eigen::MatrixXd L2 = std::sqrt(cfg.dr_scale) * L1;
  Eigen::MatrixXd C1inv = llt.solve(I);

  const double sd = 2.4 * 2.4 / static_cast<double>(d);
  const auto adapt_start = static_cast<std::size_t>(std::ceil(cfg.adapt_start_fraction * static_cast<double>(cfg.n_samples)));

  // running moments of the history
  Eigen::VectorXd hist_mean = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd hist_m2 = Eigen::MatrixXd::Zero(d, d);
  std::size_t hist_n = 0;
  auto record = [&](const Eigen::VectorXd& s, double l) {
    chain.states.insert(chain.states.end(), s.data(), s.data() + d);
    chain.log_posterior.push_back(l);
    ++hist_n;
    const Eigen::VectorXd delta = s - hist_mean;
    hist_mean += delta / static_cast<double>(hist_n);
    hist_m2 += delta * (s - hist_mean).transpose();
  };

  SplitMix64 rng(cfg.seed, 0x4452414dULL);
  auto gauss = [&] {
    Eigen::VectorXd z(d);
    for (Eigen::Index j = 0; j < d; ++j) z(j) = standard_normal(rng);
    return z;
  };
  auto eval = [&](const Eigen::VectorXd& y) {
    const double v = log_target(std::span<const double>(y.data(), chain.dim));
    return std::isnan(v) ? kNegInf : v;
  };

  record(x, lp);
  std::size_t accepted = 0;
  const std::size_t early_window = std::min<std::size_t>(10 * chain.dim, cfg.n_samples - 1);
  std::size_t early_accepts = 0;

  for (std::size_t i = 1; i < cfg.n_samples; ++i) {
    const Eigen::VectorXd y1 = x + L1 * gauss();
    const double lp1 = eval(y1);
    const double log_a1 = std::min(0.0, lp1 - lp);
    bool moved = false;
    if (lp1 > kNegInf && std::log(uniform01(rng)) < log_a1) {
      x = y1;
      lp = lp1;
      moved = true;
    } else {
      const Eigen::VectorXd y2 = x + L2 * gauss();
      const double lp2 = eval(y2);
      if (lp2 > kNegInf) {
        const Eigen::VectorXd d21 = y1 - y2, dx1 = y1 - x;
        const double a1_rev = lp1 == kNegInf ? 0.0 : std::min(1.0, std::exp(lp1 - lp2));
        const double a1_fwd = std::exp(log_a1);
        if (a1_rev < 1.0) {
          const double num = lp2 - 0.5 * d21.dot(C1inv * d21) + std::log1p(-a1_rev);
          const double den = lp - 0.5 * dx1.dot(C1inv * dx1) + std::log1p(-a1_fwd);
          if (std::log(uniform01(rng)) < num - den) {
            x = y2;
            lp = lp2;
            moved = true;
          }
        }
      }
    }
    if (moved) {
      ++accepted;
      if (i <= early_window) ++early_accepts;
    }
    record(x, lp);

    if (i >= adapt_start && i % cfg.adapt_interval == 0 && hist_n >= 2) {
      const Eigen::MatrixXd cov = hist_m2 / static_cast<double>(hist_n - 1);
      const Eigen::MatrixXd Cn = sd * (cov + cfg.eps_reg * I);
      Eigen::LLT<Eigen::MatrixXd> nl(Cn);
      if (nl.info() == Eigen::Success) {
        C1 = Cn;
        L1 = nl.matrixL();
        L2 = std::sqrt(cfg.dr_scale) * L1;
        C1inv = nl.solve(I);
      }
    }
  }
  chain.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(cfg.n_samples - 1);
  if (early_window > 0 && early_accepts == 0)
    chain.warnings.push_back("DRAM: no moves accepted in the first " + std::to_string(early_window) + " steps");
  return chain;
}

// ---------------------------------------------------------------------------
// Sampling problems and ensembles
// ---------------------------------------------------------------------------

/// Target in sampler coordinates z. Components flagged in `log_dims` are the
/// logs of positive natural-scale parameters (x = exp(z)); the natural-scale
/// log density is log_density(z) - sum of those z.
struct SamplingProblem {
  std::vector<std::string> names;
  std::function<double(std::span<const double>)> log_density;
  std::function<ParameterVector(SplitMix64&)> draw_initial;
  std::vector<double> proposal_sd;
  std::vector<bool> log_dims;

  std::size_t dim() const { return names.size(); }

  ParameterVector to_natural(std::span<const double> z) const {
    ParameterVector x(z.begin(), z.end());
    for (std::size_t j = 0; j < x.size() && j < log_dims.size(); ++j)
      if (log_dims[j]) x[j] = std::exp(z[j]);
    return x;
  }
  double log_jacobian(std::span<const double> z) const {
    double s = 0.0;
    for (std::size_t j = 0; j < z.size() && j < log_dims.size(); ++j)
      if (log_dims[j]) s += z[j];
    return s;
  }
};

/// Plain problem on the natural scale: prior x likelihood callable.
template <class LogLik>
SamplingProblem make_problem(const PriorSpec& prior, LogLik&& loglik, double proposal_fraction = 0.1) {
  prior.validate();
  SamplingProblem p;
  p.names = prior.names();
  p.log_density = [prior, ll = std::forward<LogLik>(loglik)](std::span<const double> x) {
    const double lp = log_prior(x, prior);
    if (lp == kNegInf) return kNegInf;
    return lp + ll(x);
  };
  p.draw_initial = [prior](SplitMix64& rng) { return prior.sample(rng); };
  for (const auto& m : prior.marginals) p.proposal_sd.push_back(proposal_fraction * m.sd());
  p.log_dims.assign(prior.size(), false);
  return p;
}

struct EnsembleConfig {
  std::size_t n_chains = 4;
  DramConfig dram;
  std::uint64_t seed = 0;
  std::size_t max_init_tries = 1000;
  unsigned threads = 0;
};

struct ChainEnsemble {
  std::vector<std::string> names;  // natural-scale parameter names
  std::vector<Chain> chains;       // states on the natural scale
  std::uint64_t seed = 0;
  EnsembleConfig config;
  std::string id = "ensemble";

  std::size_t n_chains() const { return chains.size(); }
  std::size_t dim() const { return names.size(); }
};

inline ChainEnsemble run_ensemble(const SamplingProblem& problem, const EnsembleConfig& cfg) {
  if (cfg.n_chains < 1) throw InvalidArgument("run_ensemble: need at least one chain");
  cfg.dram.validate();
  const std::size_t d = problem.dim();
  if (problem.proposal_sd.size() != d) throw InvalidArgument("run_ensemble: proposal scale size mismatch");

  ChainEnsemble ens;
  ens.names = problem.names;
  ens.seed = cfg.seed;
  ens.config = cfg;
  ens.chains.resize(cfg.n_chains);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) cov(Eigen::Index(j), Eigen::Index(j)) = problem.proposal_sd[j] * problem.proposal_sd[j];

  parallel_for(cfg.n_chains, cfg.threads, [&](std::size_t c) {
    const std::uint64_t chain_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(c));
    SplitMix64 init_rng(chain_seed, 0x494e4954ULL);
    ParameterVector z;
    bool found = false;
    for (std::size_t t = 0; t < cfg.max_init_tries && !found; ++t) {
      z = problem.draw_initial(init_rng);
      found = std::isfinite(problem.log_density(z));
    }
    if (!found)
      throw ConfigError("run_ensemble: no finite-posterior initial state after " + std::to_string(cfg.max_init_tries) +
                        " prior draws (chain " + std::to_string(c) + ")");
    DramConfig dc = cfg.dram;
    dc.seed = chain_seed;
    Chain ch = dram_run(problem.log_density, z, cov, dc);
    // back to the natural scale
    for (std::size_t i = 0; i < ch.size(); ++i) {
      std::span<double> s(ch.states.data() + i * d, d);
      ch.log_posterior[i] -= problem.log_jacobian(s);
      const auto nat = problem.to_natural(s);
      std::copy(nat.begin(), nat.end(), s.begin());
    }
    ens.chains[c] = std::move(ch);
  });
  return ens;
}

struct PosteriorSamples {
  SampleSet samples;
  std::size_t burn = 0;
  std::size_t thin = 1;
  std::string source_id;
  ParameterVector map_point;
  double map_log_posterior = kNegInf;

  std::size_t size() const { return samples.size(); }
};

/// Keeps floor((n - burn)/thin) states per chain at indices burn,
/// burn+thin, ..., aggregated in chain order. The MAP point is the stored state with the largest log posterior
/// over the whole ensemble (burn-in included).
inline PosteriorSamples clean_chains(const ChainEnsemble& ens, std::size_t burn, std::size_t thin) {
  if (thin < 1) throw InvalidArgument("clean_chains: thin must be >= 1");
  if (ens.chains.empty()) throw InvalidArgument("clean_chains: empty ensemble");
  PosteriorSamples out;
  out.samples = SampleSet(ens.names);
  out.burn = burn;
  out.thin = thin;
  out.source_id = ens.id;
  std::size_t total = 0;
  for (const auto& ch : ens.chains) {
    if (burn >= ch.size()) throw InvalidArgument("clean_chains: burn-in must be smaller than the chain length");
    total += (ch.size() - burn) / thin;
  }
  out.samples.data.reserve(total * ens.dim());
  for (const auto& ch : ens.chains) {
    const std::size_t keep = (ch.size() - burn) / thin;
    for (std::size_t k = 0; k < keep; ++k) out.samples.push_back(ch.state(burn + k * thin));
    for (std::size_t i = 0; i < ch.size(); ++i)
      if (ch.log_posterior[i] > out.map_log_posterior) {
        out.map_log_posterior = ch.log_posterior[i];
        out.map_point.assign(ch.state(i).begin(), ch.state(i).end());
      }
  }
  if (out.samples.empty()) throw InvalidArgument("clean_chains: no samples left");
  return out;
}

// ---------------------------------------------------------------------------
// Thermal calibration problem
// ---------------------------------------------------------------------------

/// theta (material inputs) followed by the likelihood sigmas. Sigmas are
/// sampled as log(sigma) with the Jacobian, so a uniform natural-scale prior
/// stays uniform on the natural scale. problem() captures `this`.
template <class Predictor>
class PosteriorModel {
 public:
  PosteriorModel(PriorSpec theta_prior, LikelihoodSpec spec, std::vector<TCProfile> data, Predictor predictor)
      : theta_prior_(std::move(theta_prior)), spec_(std::move(spec)), data_(std::move(data)), predict_(std::move(predictor)) {
    theta_prior_.validate();
    spec_.sigma_prior.validate();
    if (data_.empty()) throw InvalidArgument("PosteriorModel: no data");
    if (spec_.sigma_prior.kind == MarginalKind::Uniform && !(spec_.sigma_prior.a > 0.0))
      throw InvalidArgument("PosteriorModel: sigma prior must have positive support");
    if (spec_.sigma_prior.kind == MarginalKind::Normal)
      throw InvalidArgument("PosteriorModel: sigma prior must be a positive uniform");
    n_theta_ = theta_prior_.size();
    n_sigma_ = spec_.n_sigmas(data_.size());
    full_ = full_prior();
  }

  std::size_t n_theta() const { return n_theta_; }
  std::size_t n_sigma() const { return n_sigma_; }
  std::size_t dim() const { return n_theta_ + n_sigma_; }
  const std::vector<TCProfile>& data() const { return data_; }
  const LikelihoodSpec& spec() const { return spec_; }
  const Predictor& predictor() const { return predict_; }

  /// Prior over theta and sigmas on the natural scale.
  PriorSpec full_prior() const {
    PriorSpec p = theta_prior_;
    for (const auto& nm : spec_.sigma_names(data_)) {
      Marginal m = spec_.sigma_prior;
      m.name = nm;
      p.marginals.push_back(m);
    }
    return p;
  }

  std::vector<TCProfile> predict(std::span<const double> theta) const {
    return align_predictions(predict_(theta.first(n_theta_)), data_);
  }

  /// Log likelihood at a natural-scale point; -inf where the model output is
  /// non-positive (outside the log-error model's domain).
  double log_likelihood_at(std::span<const double> x) const {
    std::vector<TCProfile> pred;
    try {
      pred = predict(x);
    } catch (const SolverDivergence&) {
      return kNegInf;
    }
    for (const auto& tc : pred)
      for (double v : tc.values)
        if (!(v > 0.0) || !std::isfinite(v)) return kNegInf;
    return log_likelihood(x.subspan(n_theta_, n_sigma_), data_, pred, spec_);
  }

  double log_posterior(std::span<const double> x) const {
    const double lp = log_prior(x, full_);
    if (lp == kNegInf) return kNegInf;
    return lp + log_likelihood_at(x);
  }

  SamplingProblem problem(double proposal_fraction = 0.1) const {
    SamplingProblem p;
    const PriorSpec full = full_prior();
    p.names = full.names();
    p.log_dims.assign(dim(), false);
    for (std::size_t j = n_theta_; j < dim(); ++j) p.log_dims[j] = true;
    for (std::size_t j = 0; j < n_theta_; ++j) p.proposal_sd.push_back(proposal_fraction * theta_prior_[j].sd());
    const double lo = std::log(spec_.sigma_prior.a), hi = std::log(spec_.sigma_prior.b);
    for (std::size_t j = 0; j < n_sigma_; ++j) p.proposal_sd.push_back(proposal_fraction * (hi - lo) / std::sqrt(12.0));
    p.log_density = [this](std::span<const double> z) {
      ParameterVector x(z.begin(), z.end());
      double jac = 0.0;
      for (std::size_t j = n_theta_; j < dim(); ++j) {
        x[j] = std::exp(z[j]);
        jac += z[j];
      }
      const double lp = log_posterior(x);
      return lp == kNegInf ? kNegInf : lp + jac;
    };
    p.draw_initial = [full, this](SplitMix64& rng) {
      ParameterVector x = full.sample(rng);
      for (std::size_t j = n_theta_; j < dim(); ++j) x[j] = std::log(x[j]);
      return x;
    };
    return p;
  }

 private:
  PriorSpec theta_prior_;
  LikelihoodSpec spec_;
  std::vector<TCProfile> data_;
  Predictor predict_;
  std::size_t n_theta_ = 0;
  std::size_t n_sigma_ = 0;
  PriorSpec full_;
};

}  // namespace ndx
