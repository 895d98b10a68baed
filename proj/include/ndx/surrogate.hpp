#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ndx/common.hpp"
#include "ndx/forward_model.hpp"
#include "ndx/prior.hpp"

// Polynomial chaos surrogates: orthonormal Wiener-Askey bases, hyperbolic
// truncation, LARS-ordered sparse least squares with corrected LOO error.

namespace ndx {

struct MultiIndex {
  std::vector<unsigned> degrees;

  unsigned total_degree() const { return std::accumulate(degrees.begin(), degrees.end(), 0u); }
  bool is_zero() const { return total_degree() == 0; }
  bool operator==(const MultiIndex&) const = default;
  bool operator<(const MultiIndex& o) const { return degrees < o.degrees; }
};

namespace detail {

// Compositions of `total` into p parts, first component descending.
inline void compositions(std::size_t p, unsigned total, std::vector<unsigned>& cur, std::size_t pos,
                         std::vector<MultiIndex>& out) {
  if (pos + 1 == p) {
    cur[pos] = total;
    out.push_back({cur});
    return;
  }
  for (unsigned k = total + 1; k-- > 0;) {
    cur[pos] = k;
    compositions(p, total - k, cur, pos + 1, out);
  }
}

}  // namespace detail

/// All multi-indices with q-norm (sum eta_i^q)^(1/q) <= order, graded by total
/// degree; within a degree the first component descends.
inline std::vector<MultiIndex> hyperbolic_multi_indices(std::size_t p, unsigned order, double q) {
  if (p < 1) throw InvalidArgument("hyperbolic_multi_indices: need p >= 1");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidArgument("hyperbolic_multi_indices: q must be in (0,1]");
  std::vector<MultiIndex> all;
  std::vector<unsigned> cur(p, 0);
  for (unsigned deg = 0; deg <= order; ++deg) detail::compositions(p, deg, cur, 0, all);
  if (q == 1.0) return all;
  std::vector<MultiIndex> out;
  const double bound = static_cast<double>(order) * (1.0 + 1e-12);
  for (auto& m : all) {
    double s = 0.0;
    for (unsigned d : m.degrees)
      if (d > 0) s += std::pow(static_cast<double>(d), q);
    if (std::pow(s, 1.0 / q) <= bound) out.push_back(std::move(m));
  }
  return out;
}

enum class BasisKind { Legendre, Hermite };

inline BasisKind basis_for(const Marginal& m) {
  return m.kind == MarginalKind::Uniform ? BasisKind::Legendre : BasisKind::Hermite;
}

/// psi_0..psi_max at x, orthonormal under U[-1,1] (Legendre) or N(0,1)
/// (probabilists' Hermite / sqrt(n!)).
inline void orthonormal_table(BasisKind kind, unsigned max_degree, double x, double* out) {
  out[0] = 1.0;
  if (max_degree == 0) return;
  if (kind == BasisKind::Legendre) {
    double pm1 = 1.0, p = x;
    out[1] = std::sqrt(3.0) * x;
    for (unsigned n = 1; n < max_degree; ++n) {
      const double pn1 = ((2.0 * n + 1.0) * x * p - n * pm1) / (n + 1.0);
      pm1 = p;
      p = pn1;
      out[n + 1] = std::sqrt(2.0 * (n + 1) + 1.0) * p;
    }
  } else {
    // normalized recurrence: h_{n+1} = (x h_n - sqrt(n) h_{n-1}) / sqrt(n+1)
    double hm1 = 1.0, h = x;
    out[1] = x;
    for (unsigned n = 1; n < max_degree; ++n) {
      const double hn1 = (x * h - std::sqrt(static_cast<double>(n)) * hm1) / std::sqrt(n + 1.0);
      hm1 = h;
      h = hn1;
      out[n + 1] = h;
    }
  }
}

inline double orthonormal_poly(BasisKind kind, unsigned degree, double x) {
  std::vector<double> t(degree + 1);
  orthonormal_table(kind, degree, x, t.data());
  return t[degree];
}

/// Product basis function at a standardized point.
inline double basis_eval(const MultiIndex& index, std::span<const double> u, std::span<const BasisKind> kinds) {
  if (index.degrees.size() != u.size() || u.size() != kinds.size())
    throw InvalidArgument("basis_eval: dimension mismatch");
  double v = 1.0;
  for (std::size_t j = 0; j < u.size(); ++j)
    if (index.degrees[j] > 0) v *= orthonormal_poly(kinds[j], index.degrees[j], u[j]);
  return v;
}

struct PCEModel {
  std::vector<Marginal> inputs;  // standardization map, one per input
  std::vector<MultiIndex> indices;
  std::vector<double> coefficients;
  double loo_error = 0.0;
  unsigned order = 0;
  double q_norm = 1.0;

  std::size_t dim() const { return inputs.size(); }

  std::vector<BasisKind> basis_kinds() const {
    std::vector<BasisKind> k;
    for (const auto& m : inputs) k.push_back(basis_for(m));
    return k;
  }

  unsigned max_degree() const {
    unsigned d = 0;
    for (const auto& m : indices)
      for (unsigned e : m.degrees) d = std::max(d, e);
    return d;
  }

  static PCEModel constant(std::vector<Marginal> inputs, double value) {
    PCEModel m;
    m.indices.push_back({std::vector<unsigned>(inputs.size(), 0)});
    m.inputs = std::move(inputs);
    m.coefficients = {value};
    return m;
  }
};

inline std::vector<double> standardize(std::span<const double> theta, std::span<const Marginal> inputs) {
  if (theta.size() != inputs.size()) throw InvalidArgument("standardize: dimension mismatch");
  std::vector<double> u(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) u[j] = inputs[j].standardize(theta[j]);
  return u;
}

inline double pce_eval(const PCEModel& model, std::span<const double> theta) {
  if (theta.size() != model.dim()) throw InvalidArgument("pce_eval: dimension mismatch");
  const unsigned dmax = model.max_degree();
  const auto kinds = model.basis_kinds();
  std::vector<double> table((dmax + 1) * model.dim());
  for (std::size_t j = 0; j < model.dim(); ++j)
    orthonormal_table(kinds[j], dmax, model.inputs[j].standardize(theta[j]), table.data() + j * (dmax + 1));
  double s = 0.0;
  for (std::size_t k = 0; k < model.indices.size(); ++k) {
    double v = model.coefficients[k];
    const auto& deg = model.indices[k].degrees;
    for (std::size_t j = 0; j < deg.size(); ++j)
      if (deg[j] > 0) v *= table[j * (dmax + 1) + deg[j]];
    s += v;
  }
  return s;
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

inline Moments pce_moments(const PCEModel& model) {
  Moments m;
  for (std::size_t k = 0; k < model.indices.size(); ++k) {
    if (model.indices[k].is_zero())
      m.mean += model.coefficients[k];
    else
      m.variance += model.coefficients[k] * model.coefficients[k];
  }
  return m;
}

struct PceConfig {
  double q = 0.75;
  double cv_target = 1e-3;
  unsigned max_order = 8;
};

namespace detail {

/// Design matrix: rows = samples, columns = basis functions.
inline Eigen::MatrixXd design_matrix(const std::vector<std::vector<double>>& u, const std::vector<MultiIndex>& basis,
                                     std::span<const BasisKind> kinds, unsigned dmax) {
  const std::size_t n = u.size(), p = kinds.size();
  Eigen::MatrixXd psi(n, basis.size());
  std::vector<double> table((dmax + 1) * p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) orthonormal_table(kinds[j], dmax, u[i][j], table.data() + j * (dmax + 1));
    for (std::size_t k = 0; k < basis.size(); ++k) {
      double v = 1.0;
      const auto& deg = basis[k].degrees;
      for (std::size_t j = 0; j < p; ++j)
        if (deg[j] > 0) v *= table[j * (dmax + 1) + deg[j]];
      psi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v;
    }
  }
  return psi;
}

/// Least-angle regression path over the non-constant columns of psi (column 0
/// is the constant). Returns column indices in order of entry.
inline std::vector<std::size_t> lars_order(const Eigen::MatrixXd& psi, const Eigen::VectorXd& y, std::size_t max_steps) {
  const Eigen::Index n = psi.rows();
  const Eigen::Index m = psi.cols() - 1;
  std::vector<std::size_t> order;
  if (m <= 0) return order;

  Eigen::MatrixXd X = psi.rightCols(m);
  Eigen::VectorXd norms(m);
  std::vector<bool> usable(static_cast<std::size_t>(m), true);
  for (Eigen::Index j = 0; j < m; ++j) {
    X.col(j).array() -= X.col(j).mean();
    norms(j) = X.col(j).norm();
    if (norms(j) < 1e-12 * std::sqrt(static_cast<double>(n))) {
      usable[static_cast<std::size_t>(j)] = false;
      norms(j) = 1.0;
    }
    X.col(j) /= norms(j);
  }
  const Eigen::VectorXd yc = y.array() - y.mean();
  Eigen::VectorXd c = X.transpose() * yc;
  const double c0 = c.cwiseAbs().maxCoeff();
  if (c0 <= 0.0) return order;

  std::vector<Eigen::Index> active;
  std::vector<bool> in_active(static_cast<std::size_t>(m), false);
  Eigen::MatrixXd L(0, 0);  // Cholesky factor of the active Gram matrix
  bool need_entry = true;

  while (order.size() < max_steps) {
    if (need_entry) {
      Eigen::Index best = -1;
      double cbest = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (!usable[sj] || in_active[sj]) continue;
        if (std::abs(c(j)) > cbest) {
          cbest = std::abs(c(j));
          best = j;
        }
      }
      if (best < 0 || cbest <= 1e-13 * c0) break;
      // Cholesky append; reject numerically dependent columns
      const Eigen::Index k = static_cast<Eigen::Index>(active.size());
      Eigen::VectorXd g(k);
      for (Eigen::Index a = 0; a < k; ++a) g(a) = X.col(active[static_cast<std::size_t>(a)]).dot(X.col(best));
      Eigen::VectorXd l = k > 0 ? Eigen::VectorXd(L.triangularView<Eigen::Lower>().solve(g)) : Eigen::VectorXd(0);
      const double d2 = 1.0 - l.squaredNorm();
      if (d2 <= 1e-10) {
        usable[static_cast<std::size_t>(best)] = false;
        continue;
      }
      Eigen::MatrixXd L2 = Eigen::MatrixXd::Zero(k + 1, k + 1);
      L2.topLeftCorner(k, k) = L;
      L2.block(k, 0, 1, k) = l.transpose();
      L2(k, k) = std::sqrt(d2);
      L = std::move(L2);
      active.push_back(best);
      in_active[static_cast<std::size_t>(best)] = true;
      order.push_back(static_cast<std::size_t>(best) + 1);
    }
    need_entry = true;

    const Eigen::Index k = static_cast<Eigen::Index>(active.size());
    Eigen::VectorXd s(k);
    double cmax = 0.0;
    for (Eigen::Index a = 0; a < k; ++a) {
      const double ca = c(active[static_cast<std::size_t>(a)]);
      s(a) = ca >= 0.0 ? 1.0 : -1.0;
      cmax = std::max(cmax, std::abs(ca));
    }
    Eigen::VectorXd v = L.triangularView<Eigen::Lower>().solve(s);
    v = L.transpose().triangularView<Eigen::Upper>().solve(v);
    const double AA = 1.0 / std::sqrt(s.dot(v));
    const Eigen::VectorXd w = AA * v;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    for (Eigen::Index a = 0; a < k; ++a) u += w(a) * X.col(active[static_cast<std::size_t>(a)]);
    const Eigen::VectorXd acorr = X.transpose() * u;

    double gamma = cmax / AA;
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      if (!usable[sj] || in_active[sj]) continue;
      const double g1 = (cmax - c(j)) / (AA - acorr(j));
      const double g2 = (cmax + c(j)) / (AA + acorr(j));
      if (g1 > 1e-15 && g1 < gamma) gamma = g1;
      if (g2 > 1e-15 && g2 < gamma) gamma = g2;
    }
    c -= gamma * acorr;
    if (gamma == cmax / AA) break;  // full least-squares fit on the active set reached
  }
  return order;
}

struct PathCandidate {
  std::size_t support = 0;  // number of non-constant terms
  double error = std::numeric_limits<double>::infinity();
};

/// Corrected LOO error (normalized by output variance) for every prefix of
/// the LARS order, via incremental Gram-Schmidt QR of [1, a_1, a_2, ...].
inline std::vector<PathCandidate> loo_along_path(const Eigen::MatrixXd& psi, const Eigen::VectorXd& y,
                                                 const std::vector<std::size_t>& order, double var_y) {
  const Eigen::Index n = psi.rows();
  const double nd = static_cast<double>(n);
  std::vector<PathCandidate> out;
  Eigen::MatrixXd Q(n, static_cast<Eigen::Index>(order.size()) + 1);
  Eigen::MatrixXd Rinv = Eigen::MatrixXd::Zero(Q.cols(), Q.cols());
  Eigen::VectorXd resid = y;
  Eigen::VectorXd h = Eigen::VectorXd::Zero(n);
  double rinv_frob2 = 0.0;

  for (std::size_t step = 0; step <= order.size(); ++step) {
    const Eigen::Index k = static_cast<Eigen::Index>(step);
    Eigen::VectorXd a = psi.col(step == 0 ? 0 : static_cast<Eigen::Index>(order[step - 1]));
    const double anorm = a.norm();
    Eigen::VectorXd r = Eigen::VectorXd::Zero(k);
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index j = 0; j < k; ++j) {
        const double proj = Q.col(j).dot(a);
        r(j) += proj;
        a -= proj * Q.col(j);
      }
    }
    const double rkk = a.norm();
    if (!(rkk > 1e-10 * anorm)) break;
    Q.col(k) = a / rkk;
    // R^{-1} grows by one column: [-R^{-1} r / rkk ; 1/rkk]
    Eigen::VectorXd newcol(k + 1);
    if (k > 0) newcol.head(k) = -Rinv.topLeftCorner(k, k) * r / rkk;
    newcol(k) = 1.0 / rkk;
    Rinv.block(0, k, k + 1, 1) = newcol;
    rinv_frob2 += newcol.squaredNorm();

    resid -= Q.col(k).dot(y) * Q.col(k);
    h += Q.col(k).cwiseAbs2();
    const std::size_t P = step + 1;
    if (P >= static_cast<std::size_t>(n)) break;

    double sse = 0.0;
    bool ok = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double denom = 1.0 - h(i);
      if (denom <= 1e-12) {
        ok = false;
        break;
      }
      const double e = resid(i) / denom;
      sse += e * e;
    }
    if (!ok) continue;
    const double Pd = static_cast<double>(P);
    const double T = nd / (nd - Pd) * (1.0 + rinv_frob2);
    out.push_back({step, sse / nd / var_y * T});
  }
  return out;
}

}  // namespace detail

/// Sparse PCE fit. `x` holds samples drawn from `priors`; orders grow until
/// the normalized LOO error reaches cfg.cv_target, two orders in a row fail
/// to improve, or cfg.max_order is hit. The best model seen is returned.
inline PCEModel fit_pce(const std::vector<std::vector<double>>& x, std::span<const double> y, const PriorSpec& priors,
                        const PceConfig& cfg) {
  priors.validate();
  const std::size_t n = x.size();
  const std::size_t p = priors.size();
  if (y.size() != n) throw InvalidArgument("fit_pce: sample/output count mismatch");
  if (cfg.max_order < 1) throw InvalidArgument("fit_pce: max_order must be >= 1");
  if (n < 2 * (p + 1)) throw InvalidArgument("fit_pce: need at least 2x the order-1 basis size in samples");
  for (double v : y)
    if (!std::isfinite(v)) throw InvalidArgument("fit_pce: non-finite output");

  std::vector<std::vector<double>> u(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i].size() != p) throw InvalidArgument("fit_pce: input dimension mismatch");
    u[i] = standardize(x[i], priors.marginals);
  }
  const double ymean = mean(y);
  const double var_y = sample_variance(y);
  if (!(var_y > 1e-300) || var_y <= 1e-28 * ymean * ymean) return PCEModel::constant(priors.marginals, ymean);

  const auto kinds_vec = [&] {
    std::vector<BasisKind> k;
    for (const auto& m : priors.marginals) k.push_back(basis_for(m));
    return k;
  }();
  Eigen::VectorXd yv(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) yv(static_cast<Eigen::Index>(i)) = y[i];

  PCEModel best;
  double best_err = std::numeric_limits<double>::infinity();
  unsigned stalls = 0;
  for (unsigned order = 1; order <= cfg.max_order; ++order) {
    const auto basis = hyperbolic_multi_indices(p, order, cfg.q);
    const Eigen::MatrixXd psi = detail::design_matrix(u, basis, kinds_vec, order);
    if (order == 1) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(psi);
      qr.setThreshold(1e-10);
      if (static_cast<std::size_t>(qr.rank()) < basis.size())
        throw FitError("fit_pce: rank-deficient design after standardization", basis.size());
    }
    const std::size_t max_steps = std::min<std::size_t>(basis.size() - 1, n - 2);
    const auto order_path = detail::lars_order(psi, yv, max_steps);
    const auto cands = detail::loo_along_path(psi, yv, order_path, var_y);
    if (cands.empty()) {
      if (++stalls >= 2) break;
      continue;
    }
    double emin = std::numeric_limits<double>::infinity();
    for (const auto& c : cands) emin = std::min(emin, c.error);
    std::size_t support = 0;
    for (const auto& c : cands)
      if (c.error <= emin + 1e-14) {
        support = c.support;
        break;
      }

    if (emin < best_err) {
      std::vector<Eigen::Index> cols{0};
      for (std::size_t s = 0; s < support; ++s) cols.push_back(static_cast<Eigen::Index>(order_path[s]));
      Eigen::MatrixXd A(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t j = 0; j < cols.size(); ++j) A.col(static_cast<Eigen::Index>(j)) = psi.col(cols[j]);
      const Eigen::VectorXd coef = A.colPivHouseholderQr().solve(yv);
      PCEModel m;
      m.inputs = priors.marginals;
      m.order = order;
      m.q_norm = cfg.q;
      m.loo_error = std::max(0.0, emin);
      for (std::size_t j = 0; j < cols.size(); ++j) {
        m.indices.push_back(basis[static_cast<std::size_t>(cols[j])]);
        m.coefficients.push_back(coef(static_cast<Eigen::Index>(j)));
      }
      best = std::move(m);
      best_err = emin;
      stalls = 0;
    } else if (++stalls >= 2) {
      break;
    }
    if (best_err <= cfg.cv_target) break;
  }
  if (best.indices.empty()) throw FitError("fit_pce: no admissible least-squares support", p + 1);
  return best;
}

inline PCEModel fit_pce(const SampleSet& x, std::span<const double> y, const PriorSpec& priors, const PceConfig& cfg) {
  std::vector<std::vector<double>> rows(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) rows[i].assign(x.row(i).begin(), x.row(i).end());
  return fit_pce(rows, y, priors, cfg);
}

/// Frozen-time surrogate: one PCE per (thermocouple, time knot).
class FieldSurrogate {
 public:
  std::vector<Marginal> inputs;
  std::vector<std::string> tc_labels;
  std::vector<double> tc_depths;  // m from surface
  std::vector<double> knots;      // s
  std::vector<PCEModel> models;   // [tc * n_knots + knot]
  std::vector<bool> failed;       // knots whose fit threw and fell back to a constant
  double worst_loo = 0.0;
  Warnings warnings;

  std::size_t n_tcs() const { return tc_labels.size(); }
  std::size_t n_knots() const { return knots.size(); }
  const PCEModel& model(std::size_t tc, std::size_t knot) const { return models[tc * n_knots() + knot]; }

  /// Rebuilds the shared-basis lookup used by evaluate(); call after editing models.
  void prepare() {
    dmax_ = 0;
    std::map<MultiIndex, std::size_t> ids;
    terms_.assign(models.size(), {});
    basis_.clear();
    for (std::size_t k = 0; k < models.size(); ++k) {
      if (models[k].dim() != inputs.size()) throw InvalidArgument("FieldSurrogate: model input dimension mismatch");
      for (std::size_t t = 0; t < models[k].indices.size(); ++t) {
        const auto& idx = models[k].indices[t];
        auto [it, fresh] = ids.emplace(idx, basis_.size());
        if (fresh) basis_.push_back(idx);
        terms_[k].push_back({it->second, models[k].coefficients[t]});
        for (unsigned e : idx.degrees) dmax_ = std::max(dmax_, e);
      }
    }
    kinds_.clear();
    for (const auto& m : inputs) kinds_.push_back(basis_for(m));
  }

  /// Values at every (tc, knot), laid out tc-major.
  std::vector<double> evaluate_flat(std::span<const double> theta) const {
    if (theta.size() != inputs.size()) throw InvalidArgument("FieldSurrogate: dimension mismatch");
    const std::size_t p = inputs.size();
    std::vector<double> table((dmax_ + 1) * p);
    for (std::size_t j = 0; j < p; ++j)
      orthonormal_table(kinds_[j], dmax_, inputs[j].standardize(theta[j]), table.data() + j * (dmax_ + 1));
    std::vector<double> bv(basis_.size());
    for (std::size_t b = 0; b < basis_.size(); ++b) {
      double v = 1.0;
      const auto& deg = basis_[b].degrees;
      for (std::size_t j = 0; j < p; ++j)
        if (deg[j] > 0) v *= table[j * (dmax_ + 1) + deg[j]];
      bv[b] = v;
    }
    std::vector<double> out(models.size());
    for (std::size_t k = 0; k < models.size(); ++k) {
      double s = 0.0;
      for (const auto& [id, coef] : terms_[k]) s += coef * bv[id];
      out[k] = s;
    }
    return out;
  }

  std::vector<TCProfile> evaluate(std::span<const double> theta) const {
    const auto flat = evaluate_flat(theta);
    std::vector<TCProfile> out(n_tcs());
    for (std::size_t c = 0; c < n_tcs(); ++c) {
      out[c].label = tc_labels[c];
      out[c].depth = tc_depths[c];
      out[c].times = knots;
      out[c].values.assign(flat.begin() + static_cast<std::ptrdiff_t>(c * n_knots()),
                           flat.begin() + static_cast<std::ptrdiff_t>((c + 1) * n_knots()));
    }
    return out;
  }

  std::vector<TCProfile> operator()(std::span<const double> theta) const { return evaluate(theta); }

 private:
  struct Term {
    std::size_t id;
    double coef;
  };
  std::vector<MultiIndex> basis_;
  std::vector<std::vector<Term>> terms_;
  std::vector<BasisKind> kinds_;
  unsigned dmax_ = 0;
};

/// Uniform knots from t0 to t1 inclusive (the last knot is dropped when the
/// span is not a whole number of spacings).
inline std::vector<double> make_knots(double t0, double t1, double spacing) {
  if (!(spacing > 0.0)) throw InvalidArgument("knot spacing must be positive");
  std::vector<double> k;
  const auto n = static_cast<std::size_t>(std::floor((t1 - t0) / spacing + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) k.push_back(t0 + static_cast<double>(i) * spacing);
  return k;
}

/// Fits a FieldSurrogate from solver runs. runs[i] is the TC output of the
/// solve at x.row(i); all runs must share one time grid. Per-knot failures
/// are recorded in `failed`/`warnings` and replaced by the sample-mean constant.
inline FieldSurrogate fit_field(const SampleSet& x, const std::vector<std::vector<TCProfile>>& runs,
                                const PriorSpec& priors, double knot_spacing, const PceConfig& cfg,
                                unsigned threads = 0) {
  if (runs.empty() || runs.size() != x.size()) throw InvalidArgument("fit_field: run/sample count mismatch");
  const auto& ref = runs.front();
  if (ref.empty()) throw InvalidArgument("fit_field: runs carry no thermocouples");
  for (const auto& r : runs) {
    if (r.size() != ref.size()) throw InvalidArgument("fit_field: thermocouple count differs between runs");
    for (std::size_t c = 0; c < r.size(); ++c)
      if (r[c].times != ref[c].times) throw InvalidArgument("fit_field: runs do not share a time grid");
  }
  FieldSurrogate fs;
  fs.inputs = priors.marginals;
  for (const auto& tc : ref) {
    fs.tc_labels.push_back(tc.label);
    fs.tc_depths.push_back(tc.depth);
  }
  fs.knots = make_knots(ref.front().times.front(), ref.front().times.back(), knot_spacing);
  for (double k : fs.knots) {
    const auto& t = ref.front().times;
    const bool hit = std::any_of(t.begin(), t.end(), [&](double s) { return std::abs(s - k) <= 1e-9 * (1.0 + k); });
    if (!hit) warn(&fs.warnings, "fit_field: knot " + std::to_string(k) + " s is not a stored output time; interpolating");
  }

  std::vector<std::vector<double>> rows(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) rows[i].assign(x.row(i).begin(), x.row(i).end());

  const std::size_t nk = fs.knots.size();
  const std::size_t total = ref.size() * nk;
  fs.models.resize(total);
  std::vector<char> failed(total, 0);
  std::vector<std::string> messages(total);
  parallel_for(total, threads, [&](std::size_t k) {
    const std::size_t c = k / nk, j = k % nk;
    std::vector<double> y(runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) y[i] = interp_linear(runs[i][c].times, runs[i][c].values, fs.knots[j]);
    try {
      fs.models[k] = fit_pce(rows, y, priors, cfg);
    } catch (const NumericalError& e) {
      failed[k] = 1;
      messages[k] = e.what();
      fs.models[k] = PCEModel::constant(priors.marginals, mean(y));
      fs.models[k].loo_error = std::numeric_limits<double>::quiet_NaN();
    }
  });
  fs.failed.assign(failed.begin(), failed.end());
  for (std::size_t k = 0; k < total; ++k) {
    if (failed[k])
      fs.warnings.push_back("fit_field: " + fs.tc_labels[k / nk] + " knot " + std::to_string(fs.knots[k % nk]) +
                            " s: " + messages[k]);
    else
      fs.worst_loo = std::max(fs.worst_loo, fs.models[k].loo_error);
  }
  fs.prepare();
  return fs;
}

}  // namespace ndx
