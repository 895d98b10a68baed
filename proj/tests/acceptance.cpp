// Acceptance checks, one PASS/FAIL line per criterion.
// Usage: ndx_acceptance [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ndx/calibration.hpp"
#include "ndx/config.hpp"
#include "ndx/divergence.hpp"
#include "ndx/forward_model.hpp"
#include "ndx/pipeline.hpp"
#include "ndx/predictive.hpp"
#include "ndx/sensitivity.hpp"
#include "ndx/surrogate.hpp"

#ifndef NDX_SOURCE_DIR
#define NDX_SOURCE_DIR "."
#endif

using namespace ndx;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      else detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

std::vector<double> normal_draws(double mu, double sd, std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = mu + sd * standard_normal(rng);
  return x;
}

double kl_normal(double m1, double s1, double m2, double s2) {
  return std::log(s2 / s1) + (s1 * s1 + (m1 - m2) * (m1 - m2)) / (2 * s2 * s2) - 0.5;
}

PriorSpec unit_cube(std::size_t p) {
  PriorSpec s;
  for (std::size_t i = 0; i < p; ++i) s.marginals.push_back(Marginal::uniform("u" + std::to_string(i), 0.0, 1.0));
  return s;
}

std::vector<std::size_t> rank_desc(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] > v[b]; });
  return idx;
}

// 1
void chain_bookkeeping(Outcome& o) {
  ChainEnsemble ens;
  ens.names = {"x"};
  for (std::size_t c = 0; c < 20; ++c) {
    Chain ch;
    ch.dim = 1;
    ch.states.resize(500000);
    ch.log_posterior.resize(500000);
    for (std::size_t i = 0; i < 500000; ++i) {
      ch.states[i] = static_cast<double>(c * 1000000 + i);
      ch.log_posterior[i] = -static_cast<double>(i % 977);
    }
    ens.chains.push_back(std::move(ch));
  }
  const auto post = clean_chains(ens, 300000, 20);
  o.detail << post.size() << " samples";
  o.check(post.size() == 200000, "expected 200000");
  o.check(post.samples.row(0)[0] == 300000.0, "first kept state");
  o.check(post.samples.row(199999)[0] == 19.0 * 1000000 + 499980.0, "last kept state");
}

// 2
void optimal_w(Outcome& o) {
  const double rows[11][4] = {{0.0, 425.3, 64.32, 489.6}, {0.1, 298.1, 55.82, 353.9}, {0.2, 203.4, 48.37, 251.8},
                              {0.3, 138.9, 41.88, 180.8}, {0.4, 99.67, 36.33, 136.0}, {0.5, 74.80, 31.72, 106.5},
                              {0.6, 54.84, 28.08, 82.92}, {0.7, 39.14, 25.56, 64.70}, {0.8, 28.18, 24.47, 52.65},
                              {0.9, 24.79, 26.11, 50.90}, {1.0, 29.07, 34.17, 63.23}};
  DivergenceTable t;
  for (const auto& r : rows) t.rows.push_back({r[0], r[1], r[2], r[3], true, ""});
  const double wj = select_optimal_w(t, WCriterion::Jeffreys), wb = select_optimal_w(t, WCriterion::BackwardKL);
  o.detail << "jeffreys " << wj << ", backward KL " << wb;
  o.check(wj == 0.9, "jeffreys != 0.9");
  o.check(wb == 0.8, "backward KL != 0.8");
}

// 3
void gaussian_suite(Outcome& o) {
  const double r2 = std::sqrt(2.0);
  const double pairs[12][4] = {{0, 1, 1, 1},     {0, 1, 0.5, 1},   {0, 1, 0, r2},      {0, r2, 0, 1},
                               {0, 1, 0, 1.5},   {3, 0.5, 3.2, 0.6}, {10, 2, 11, 2.5}, {-1, 1, 0.5, 1.5},
                               {300, 20, 310, 25}, {0, 1, 0.2, 0.8}, {5, 3, 4, 3},     {0, 1, 1.5, 1.2}};
  std::uint64_t seed = 100;
  double worst = 0.0;
  for (const auto& pr : pairs) {
    const auto p = normal_draws(pr[0], pr[1], 10000, seed++), q = normal_draws(pr[2], pr[3], 10000, seed++);
    const double kl = kl_normal(pr[0], pr[1], pr[2], pr[3]), back = kl_normal(pr[2], pr[3], pr[0], pr[1]);
    const double tol_f = std::max(0.03, 0.05 * kl), tol_b = std::max(0.03, 0.05 * back);
    const auto a = divergences(p, q);
    const double ef = std::abs(a.forward - kl) / tol_f, eb = std::abs(a.backward - back) / tol_b,
                 ej = std::abs(a.jeffreys - kl - back) / (tol_f + tol_b);
    worst = std::max({worst, ef, eb, ej});
    std::ostringstream tag;
    tag << "N(" << pr[0] << "," << pr[1] << ") vs N(" << pr[2] << "," << pr[3] << ")";
    o.check(ef <= 1.0, tag.str() + " forward " + std::to_string(a.forward) + " vs " + std::to_string(kl));
    o.check(eb <= 1.0, tag.str() + " backward " + std::to_string(a.backward) + " vs " + std::to_string(back));
    o.check(ej <= 1.0, tag.str() + " jeffreys " + std::to_string(a.jeffreys) + " vs " + std::to_string(kl + back));
  }
  o.detail << (o.pass ? "" : "; ") << "worst error/tolerance " << worst;
}

// 4
void conjugate_posterior(Outcome& o) {
  Eigen::MatrixXd A(4, 2);
  A << 1.0, 0.5, 0.3, 1.0, -0.7, 0.4, 1.2, -0.2;
  const Eigen::Vector4d y(2.1, -0.4, -2.0, 3.1);
  const double s = 0.6;
  const Eigen::Vector2d m0(1.0, -1.0);
  const Eigen::Matrix2d S0 = Eigen::Vector2d(4.0, 2.25).asDiagonal();
  const Eigen::Matrix2d cov = (S0.inverse() + A.transpose() * A / (s * s)).inverse();
  const Eigen::Vector2d mean = cov * (S0.inverse() * m0 + A.transpose() * y / (s * s));

  PriorSpec prior;
  prior.marginals = {Marginal::normal("t1", 1.0, 2.0), Marginal::normal("t2", -1.0, 1.5)};
  auto loglik = [&](std::span<const double> t) {
    const Eigen::Vector4d r = y - A * Eigen::Vector2d(t[0], t[1]);
    return -0.5 * r.squaredNorm() / (s * s);
  };
  EnsembleConfig ec;
  ec.n_chains = 4;
  ec.dram.n_samples = 50000;
  ec.seed = 2026;
  const auto post = clean_chains(run_ensemble(make_problem(prior, loglik), ec), 5000, 1);
  const auto c0 = post.samples.column(0), c1 = post.samples.column(1);
  const double mu0 = mean_of(c0), mu1 = mean_of(c1);
  double v00 = 0, v01 = 0, v11 = 0;
  for (std::size_t i = 0; i < c0.size(); ++i) {
    v00 += (c0[i] - mu0) * (c0[i] - mu0);
    v01 += (c0[i] - mu0) * (c1[i] - mu1);
    v11 += (c1[i] - mu1) * (c1[i] - mu1);
  }
  const double n = static_cast<double>(c0.size() - 1);
  const double em = std::max(rel_err(mu0, mean(0)), rel_err(mu1, mean(1)));
  const double ec_ = std::max({rel_err(v00 / n, cov(0, 0)), rel_err(v01 / n, cov(0, 1)), rel_err(v11 / n, cov(1, 1))});
  o.detail << "mean rel err " << em << ", cov rel err " << ec_;
  o.check(em <= 0.02, "mean");
  o.check(ec_ <= 0.05, "covariance");
}

// 5
struct Rule {
  std::vector<double> x, w;
};

Rule gauss_legendre(int n) {
  Rule r;
  for (int i = 1; i <= n; ++i) {
    double x = std::cos(M_PI * (i - 0.25) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    r.x.push_back(x);
    r.w.push_back(1.0 / ((1.0 - x * x) * dp * dp));
  }
  return r;
}

Rule gauss_hermite(int n) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(static_cast<double>(i));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  Rule r;
  for (int i = 0; i < n; ++i) {
    r.x.push_back(es.eigenvalues()(i));
    r.w.push_back(es.eigenvectors()(0, i) * es.eigenvectors()(0, i));
  }
  return r;
}

double legendre_hand(unsigned n, double x) {
  switch (n) {
    case 0: return 1.0;
    case 1: return std::sqrt(3.0) * x;
    case 2: return std::sqrt(5.0) * 0.5 * (3.0 * x * x - 1.0);
    default: return std::sqrt(7.0) * 0.5 * (5.0 * x * x * x - 3.0 * x);
  }
}

double hermite_hand(unsigned n, double x) {
  switch (n) {
    case 0: return 1.0;
    case 1: return x;
    case 2: return (x * x - 1.0) / std::sqrt(2.0);
    default: return (x * x * x - 3.0 * x) / std::sqrt(6.0);
  }
}

void pce_exactness(Outcome& o) {
  PriorSpec pr;
  pr.marginals = {Marginal::uniform("a", 1.0, 3.0), Marginal::normal("b", 2.0, 0.5), Marginal::uniform("c", -2.0, 0.0)};
  auto f = [](const std::vector<double>& v) {
    return 1.0 + 2.0 * v[0] - v[1] * v[1] + 0.5 * v[0] * v[1] * v[2] + 0.3 * std::pow(v[2], 3) + v[0] * v[0] * v[1];
  };
  SplitMix64 rng(21);
  const auto s = latin_hypercube_samples(pr, 300, rng);
  std::vector<std::vector<double>> x(300);
  std::vector<double> y;
  for (std::size_t i = 0; i < 300; ++i) {
    x[i].assign(s.row(i).begin(), s.row(i).end());
    y.push_back(f(x[i]));
  }
  PceConfig cfg;
  cfg.q = 1.0;
  cfg.cv_target = 1e-12;
  cfg.max_order = 5;
  const auto m = fit_pce(x, y, pr, cfg);

  const auto gl = gauss_legendre(6);
  const auto gh = gauss_hermite(6);
  double worst = 0.0;
  for (const auto& idx : hyperbolic_multi_indices(3, 3, 1.0)) {
    double a = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        for (std::size_t k = 0; k < 6; ++k) {
          const std::vector<double> v{2.0 + gl.x[i], 2.0 + 0.5 * gh.x[j], -1.0 + gl.x[k]};
          a += gl.w[i] * gh.w[j] * gl.w[k] * f(v) * legendre_hand(idx.degrees[0], gl.x[i]) *
               hermite_hand(idx.degrees[1], gh.x[j]) * legendre_hand(idx.degrees[2], gl.x[k]);
        }
    double c = 0.0;
    for (std::size_t t = 0; t < m.indices.size(); ++t)
      if (m.indices[t].degrees == idx.degrees) c = m.coefficients[t];
    worst = std::max(worst, std::abs(c - a));
  }
  o.detail << "loo " << m.loo_error << ", worst coefficient error " << worst;
  o.check(m.loo_error <= 1e-10, "loo error");
  o.check(worst <= 1e-8, "coefficients");
}

// 6
double ishigami(const std::vector<double>& u) {
  const double a = 2.0 * M_PI * u[0] - M_PI, b = 2.0 * M_PI * u[1] - M_PI, c = 2.0 * M_PI * u[2] - M_PI;
  return std::sin(a) + 7.0 * std::sin(b) * std::sin(b) + 0.1 * std::pow(c, 4) * std::sin(a);
}

// total-effect indices on an m^3 midpoint grid
std::vector<double> ishigami_total_effects(int m) {
  std::vector<double> f(static_cast<std::size_t>(m * m * m));
  auto at = [&](int i, int j, int k) -> double& { return f[static_cast<std::size_t>((i * m + j) * m + k)]; };
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) at(i, j, k) = ishigami({(i + 0.5) / m, (j + 0.5) / m, (k + 0.5) / m});
  const double mu = mean_of(f);
  double var = 0.0;
  for (double v : f) var += (v - mu) * (v - mu);
  var /= static_cast<double>(f.size());
  std::vector<double> st(3, 0.0);
  for (int axis = 0; axis < 3; ++axis) {
    double acc = 0.0;
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        double s = 0.0, s2 = 0.0;
        for (int t = 0; t < m; ++t) {
          const double v = axis == 0 ? at(t, a, b) : axis == 1 ? at(a, t, b) : at(a, b, t);
          s += v;
          s2 += v * v;
        }
        acc += s2 / m - (s / m) * (s / m);
      }
    st[static_cast<std::size_t>(axis)] = acc / (m * m) / var;
  }
  return st;
}

void morris_exactness(Outcome& o) {
  const std::vector<double> b{5.0, 1.0, 0.0};
  auto linear = [&](const ParameterVector& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i) s += b[i] * x[i];
    return std::vector<double>{s};
  };
  const auto res = run_morris(linear, unit_cube(3), TrajectoryConfig{30, 101, 1, 5}, 1);
  double ee_err = 0.0, sig = 0.0;
  for (std::size_t t = 0; t < 30; ++t)
    for (std::size_t i = 0; i < 3; ++i) ee_err = std::max(ee_err, std::abs(res.ee.at(t, i, 0) - b[i]));
  for (std::size_t i = 0; i < 3; ++i) sig = std::max(sig, res.stats.sigma_max(i));
  o.check(ee_err <= 1e-10, "linear EE");
  o.check(sig <= 1e-10, "linear sigma");

  const auto st = ishigami_total_effects(41);
  auto model = [](const ParameterVector& x) { return std::vector<double>{ishigami(x)}; };
  const auto ish = run_morris(model, unit_cube(3), TrajectoryConfig{500, 11, 4, 2024}, 1);
  const std::vector<double> mu_star{ish.stats.mu_star[0], ish.stats.mu_star[1], ish.stats.mu_star[2]};
  const auto rm = rank_desc(mu_star), rt = rank_desc(st);
  o.detail << (o.pass ? "" : "; ") << "EE err " << ee_err << ", sigma " << sig << ", mu* ranking " << rm[0] << rm[1]
           << rm[2] << " vs grid " << rt[0] << rt[1] << rt[2];
  o.check(rm == rt, "Ishigami ranking");
}

// 7
MaterialParams inert() {
  MaterialParams p;
  p.logA = {-100.0, -100.0, -100.0};
  return p;
}

Scenario flux_scenario(double thickness, double duration, double dt, TimeSeries q) {
  Scenario s;
  s.thickness = thickness;
  s.duration = duration;
  s.dt = dt;
  s.surface_kind = SurfaceBcKind::HeatFlux;
  s.surface_bc = std::move(q);
  return s;
}

std::vector<double> final_row(const TemperatureField& f) {
  return {f.temperatures.end() - static_cast<std::ptrdiff_t>(f.n_nodes()), f.temperatures.end()};
}

void solver_physics(Outcome& o) {
  auto s = flux_scenario(0.02, 20.0, 0.1, {{0.0, 20.0}, {0.0, 0.0}});
  s.initial_temperature = 350.0;
  double drift = 0.0;
  for (double T : solve(s, inert(), build_grid(40, 0.02, 0.1)).temperatures) drift = std::max(drift, std::abs(T - 350.0));
  o.check(drift <= 1e-10, "adiabatic drift");

  Scenario st;
  st.thickness = 0.01;
  st.duration = 4000.0;
  st.dt = 5.0;
  st.output_every = 800;
  st.surface_kind = SurfaceBcKind::Temperature;
  st.surface_bc = {{0.0, 4000.0}, {500.0, 500.0}};
  st.back_kind = BackBcKind::FixedTemperature;
  st.back_temperature = 300.0;
  st.initial_temperature = 300.0;
  MaterialParams lin = inert();
  lin.k3_v = 0.0;
  const auto g = build_grid(30, 0.01, 0.2);
  const auto Ts = final_row(solve(st, lin, g));
  double steady = 0.0;
  for (std::size_t i = 0; i < g.n_cells(); ++i)
    steady = std::max(steady, rel_err(Ts[i], 500.0 - 200.0 * g.node_positions[i] / 0.01));
  o.check(steady <= 1e-6, "steady profile");

  const auto q = trapezoid_pulse(5e4, 2.0, 27.0, 2.0, 60.0);
  const auto ge = build_grid(100, 0.0254, 0.1);
  MaterialParams p;
  const auto sc = flux_scenario(0.0254, 60.0, 0.1, q);
  const auto Te = final_row(solve(sc, p, ge));
  double stored = 0.0;
  for (std::size_t i = 0; i < ge.n_cells(); ++i) stored += p.rho_cp * ge.cell_widths[i] * (Te[i] - sc.initial_temperature);
  const double balance = rel_err(stored, 5e4 * 29.0);
  o.check(balance <= 1e-6, "energy balance");

  const auto qr = trapezoid_pulse(3e4, 2.0, 10.0, 2.0, 20.0);
  const auto gr = build_grid(20, 0.02, 0.3);
  auto run = [&](double dt) { return final_row(solve(flux_scenario(0.02, 20.0, dt, qr), lin, gr)); };
  const auto a = run(0.2), b = run(0.1), c = run(0.05);
  double d1 = 0.0, d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d1 = std::max(d1, std::abs(a[i] - b[i]));
    d2 = std::max(d2, std::abs(b[i] - c[i]));
  }
  const double order = std::log2(d1 / d2);
  o.check(order >= 0.9, "convergence order");
  o.detail << (o.pass ? "" : "; ") << "adiabatic drift " << drift << " K, steady rel " << steady << ", energy rel "
           << balance << ", order " << order;
}

// 8
struct LinearModel {
  std::vector<TCProfile> operator()(std::span<const double> th) const {
    std::vector<TCProfile> out(2);
    for (int c = 0; c < 2; ++c) {
      out[c].label = "TC" + std::to_string(c + 1);
      out[c].times = {0.0, 1.0, 2.0};
      for (double t : out[c].times) out[c].values.push_back(th[0] * (1.0 + c + t));
    }
    return out;
  }
};

void emulator_noise(Outcome& o) {
  const EnsembleLayout layout{{"TC1", "TC2"}, {0.001, 0.004}, {0.0, 1.0, 2.0}};
  double worst = 0.0;
  for (double sigma : {0.03, 0.2}) {
    SampleSet s({"a", "sigma_em"});
    for (std::size_t i = 0; i < 10000; ++i) s.push_back(std::vector<double>{7.0, sigma});
    PropagationOptions opt;
    opt.theta_names = {"a"};
    opt.sigma_names = {"sigma_em"};
    opt.seed = 12;
    const auto ens = propagate(s, LinearModel{}, layout, opt);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < 3; ++k) {
        auto col = ens.column(c, k);
        for (auto& v : col) v = std::log(v / (7.0 * (1.0 + c + k)));
        worst = std::max(worst, rel_err(std::sqrt(sample_variance(col)), sigma));
      }
  }
  o.detail << "worst sd rel err " << worst;
  o.check(worst <= 0.03, "sd");
}

// 9
void end_to_end(Outcome& o) {
  RunConfig cfg = load_config(fs::path(NDX_SOURCE_DIR) / "configs" / "small.json");
  const fs::path out = fs::temp_directory_path() / "ndx_acceptance_pipeline";
  fs::remove_all(out);
  cfg.output_dir = out.string();
  cfg.validate();
  RunContext ctx(cfg, out, "pipeline");
  const auto rep = run_pipeline(ctx);
  ctx.write_manifest();
  o.detail << "coverage95 parametric " << rep.coverage_parametric << ", emulator " << rep.coverage_emulator << ", gap "
           << rep.coverage_gap << " pp, w* " << rep.w_star << ", containment " << rep.containment;
  o.check(rep.coverage_gap >= 10.0, "coverage gap");
  o.check(rep.containment >= 0.9, "containment");
}

// 10
TCProfile profile(std::string label, std::vector<double> values) {
  TCProfile p;
  p.label = std::move(label);
  for (std::size_t i = 0; i < values.size(); ++i) p.times.push_back(static_cast<double>(i));
  p.values = std::move(values);
  return p;
}

void likelihood_invariance(Outcome& o) {
  const std::vector<TCProfile> data{profile("A", {300, 350, 400}), profile("B", {320, 330, 335}), profile("C", {290, 291, 295})};
  const std::vector<TCProfile> pred{profile("A", {305, 340, 410}), profile("B", {318, 333, 330}),
                                    profile("C", {290.5, 292, 294})};
  LikelihoodSpec em, per;
  em.mode = LikelihoodMode::Emulator;
  per.mode = LikelihoodMode::PerTC;
  for (double s : {0.001, 0.03, 0.4})
    o.check(log_likelihood(std::vector<double>{s}, data, pred, em) ==
                log_likelihood(std::vector<double>{s, s, s}, data, pred, per),
            "tied sigma " + std::to_string(s));

  double worst = 0.0;
  for (double eps : {0.0, 0.01})
    for (double c : {1e-3, 0.37, 12.5, 1e4}) {
      auto d2 = data, p2 = pred;
      for (auto& tc : d2)
        for (auto& v : tc.values) v *= c;
      for (auto& tc : p2)
        for (auto& v : tc.values) v *= c;
      LikelihoodSpec spec = per;
      spec.epsilon = eps;
      const std::vector<double> sig{0.02, 0.05, 0.1};
      const double a = log_likelihood(sig, data, pred, spec), b = log_likelihood(sig, d2, p2, spec);
      worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(a)));
    }
  o.detail << "rescaling err " << worst;
  o.check(worst <= 1e-12, "rescaling");
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "chain bookkeeping", chain_bookkeeping},
      {2, "optimal w from the divergence totals", optimal_w},
      {3, "Gaussian divergence suite", gaussian_suite},
      {4, "conjugate posterior recovery", conjugate_posterior},
      {5, "PCE exactness", pce_exactness},
      {6, "Morris exactness", morris_exactness},
      {7, "solver physics", solver_physics},
      {8, "emulator noise statistics", emulator_noise},
      {9, "end-to-end synthetic pipeline", end_to_end},
      {10, "likelihood invariances", likelihood_invariance},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d (%s): %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.str().c_str(),
                secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
