#pragma once

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ndx/bma.hpp"
#include "ndx/calibration.hpp"
#include "ndx/config.hpp"
#include "ndx/divergence.hpp"
#include "ndx/forward_model.hpp"
#include "ndx/io.hpp"
#include "ndx/predictive.hpp"
#include "ndx/sensitivity.hpp"
#include "ndx/surrogate.hpp"

// Pipeline stages. Each stage writes its artifacts under the run directory
// and records them, with their stage seeds, in the run manifest.

namespace ndx {

namespace fs = std::filesystem;

class RunContext {
 public:
  RunContext(RunConfig cfg, fs::path out, std::string command)
      : cfg_(std::move(cfg)), out_(std::move(out)), command_(std::move(command)) {
    fs::create_directories(out_);
  }

  const RunConfig& config() const { return cfg_; }
  const fs::path& out() const { return out_; }
  unsigned threads() const { return cfg_.threads; }
  Warnings& warnings() { return warnings_; }

  std::uint64_t seed(const std::string& stage) {
    const auto s = cfg_.stage_seed(stage);
    seeds_[stage] = s;
    return s;
  }

  void emit(const std::string& name, const std::string& content) {
    auto os = io::open_out(out_ / name);
    os << content;
    if (!os) throw InvalidArgument("failed writing '" + (out_ / name).string() + "'");
    outputs_.push_back({{"file", name}, {"fnv1a64", io::hex64(fnv1a64(content))}, {"bytes", content.size()}});
  }

  template <class Writer>
  void emit_with(const std::string& name, Writer&& w) {
    std::ostringstream os;
    w(os);
    emit(name, os.str());
  }

  void emit_json(const std::string& name, const Json& j) { emit(name, j.dump(2) + "\n"); }

  Json manifest() const {
    Json m;
    m["tool"] = "ndx";
    m["version"] = std::string(kVersion);
    m["command"] = command_;
    m["config_hash"] = cfg_.hash();
    m["seed"] = cfg_.seed;
    Json seeds = Json::object();
    for (const auto& [k, v] : seeds_) seeds[k] = v;
    m["stage_seeds"] = seeds;
    Json mods = Json::object();
    for (const char* name : {"forward_model", "sensitivity", "surrogate", "calibration", "bma", "predictive", "divergence", "cli"})
      mods[name] = std::string(kVersion);
    m["modules"] = mods;
    m["outputs"] = outputs_;
    m["warnings"] = warnings_;
    return m;
  }

  void write_manifest() {
    auto os = io::open_out(out_ / "manifest.json");
    os << manifest().dump(2) << '\n';
  }

 private:
  RunConfig cfg_;
  fs::path out_;
  std::string command_;
  std::map<std::string, std::uint64_t> seeds_;
  Json outputs_ = Json::array();
  Warnings warnings_;
};

namespace stage {

inline Grid grid_for(const RunConfig& cfg, const Scenario& s) {
  return build_grid(cfg.grid.n_cells, s.thickness, cfg.grid.stretch);
}

inline std::vector<TCProfile> simulate(const RunConfig& cfg, const std::string& key, const MaterialParams& m) {
  const auto& s = cfg.scenario(key).scenario;
  return extract_thermocouples(solve(s, m, grid_for(cfg, s)), s);
}

/// Solver run at the synthetic truth times exp(sigma N(0,1)), one stream per TC.
inline std::vector<TCProfile> synthesize(RunContext& ctx, const std::string& key) {
  const auto& cfg = ctx.config();
  auto tcs = simulate(cfg, key, cfg.truth_material());
  const auto seed = ctx.seed("synthesize-" + key);
  for (std::size_t c = 0; c < tcs.size(); ++c) {
    SplitMix64 rng(seed, c);
    for (double& v : tcs[c].values) v *= std::exp(cfg.synthetic.sigma * standard_normal(rng));
  }
  return tcs;
}

/// Measured data for a scenario: the configured CSV, else synthetic data
/// (written to data_<key>.csv).
inline std::vector<TCProfile> scenario_data(RunContext& ctx, const std::string& key) {
  const auto& sc = ctx.config().scenario(key);
  if (sc.data) return io::ingest_tc_csv(*sc.data, sc.scenario);
  auto d = synthesize(ctx, key);
  ctx.emit_with("data_" + key + ".csv", [&](std::ostream& os) { io::write_tc_csv(os, d); });
  return d;
}

inline std::vector<double> output_knots(const RunConfig& cfg, const std::string& key) {
  const auto& s = cfg.scenario(key).scenario;
  return make_knots(0.0, s.duration, cfg.pce.knot_spacing);
}

inline MorrisResult morris(RunContext& ctx, const std::string& key) {
  const auto& cfg = ctx.config();
  const auto& s = cfg.scenario(key).scenario;
  const ScenarioModel model(s, grid_for(cfg, s), cfg.nominal, cfg.prior.names());
  const auto knots = output_knots(cfg, key);
  std::vector<std::string> outputs;
  for (std::size_t c = 0; c < s.tc_depths_mm.size(); ++c)
    for (double t : knots) outputs.push_back(s.tc_label(c) + "@" + io::num(t));
  auto flat = [&](const ParameterVector& x) {
    std::vector<double> out;
    for (const auto& tc : model(x))
      for (double t : knots) out.push_back(interp_linear(tc.times, tc.values, t));
    return out;
  };
  TrajectoryConfig tc{cfg.morris.r, cfg.morris.levels, cfg.morris.jump, ctx.seed("morris-" + key)};
  auto res = run_morris(flat, cfg.prior, tc, ctx.threads());
  const auto screening = screen(res.stats, cfg.morris.fraction);
  const auto names = cfg.prior.names();
  ctx.emit_with("morris_" + key + ".csv", [&](std::ostream& os) { io::write_morris_csv(os, res.stats, names, outputs); });
  ctx.emit_with("morris_" + key + "_plot.csv",
                [&](std::ostream& os) { io::write_morris_plot_csv(os, res.stats, screening, names); });
  Json j;
  j["scenario"] = key;
  j["r"] = cfg.morris.r;
  j["levels"] = cfg.morris.levels;
  j["jump"] = cfg.morris.jump;
  j["delta"] = tc.delta();
  Json infl = Json::array();
  for (auto i : screening.influential) infl.push_back(names[i]);
  j["influential"] = infl;
  j["distance"] = screening.distance;
  j["warnings"] = res.warnings;
  for (const auto& w : screening.warnings) j["warnings"].push_back(w);
  ctx.emit_json("screening_" + key + ".json", j);
  return res;
}

/// LHS design over the prior, solver runs, frozen-time PCE per (TC, knot).
inline FieldSurrogate surrogate(RunContext& ctx, const std::string& key) {
  const auto& cfg = ctx.config();
  const auto& s = cfg.scenario(key).scenario;
  const ScenarioModel model(s, grid_for(cfg, s), cfg.nominal, cfg.prior.names());
  SplitMix64 rng(ctx.seed("pce-" + key));
  const SampleSet x = latin_hypercube_samples(cfg.prior, cfg.pce.n_train, rng);
  std::vector<std::vector<TCProfile>> runs(x.size());
  parallel_for(x.size(), ctx.threads(), [&](std::size_t i) { runs[i] = model(x.row(i)); });
  auto fsur = fit_field(x, runs, cfg.prior, cfg.pce.knot_spacing, cfg.pce.pce, ctx.threads());
  for (const auto& w : fsur.warnings) ctx.warnings().push_back("pce-" + key + ": " + w);
  ctx.emit_json("pce_" + key + ".json", io::to_json(fsur));
  ctx.emit_with("pce_" + key + "_loo.csv", [&](std::ostream& os) {
    os << "tc,time,order,n_terms,loo_error,failed\n";
    for (std::size_t c = 0; c < fsur.n_tcs(); ++c)
      for (std::size_t k = 0; k < fsur.n_knots(); ++k) {
        const auto& m = fsur.model(c, k);
        os << fsur.tc_labels[c] << ',' << io::num(fsur.knots[k]) << ',' << m.order << ',' << m.indices.size() << ','
           << io::num(m.loo_error) << ',' << (fsur.failed[c * fsur.n_knots() + k] ? 1 : 0) << '\n';
      }
  });
  return fsur;
}

inline FieldSurrogate load_surrogate(const fs::path& path) { return io::surrogate_from_json(io::read_json(path)); }

inline EnsembleLayout layout_of(const FieldSurrogate& s) { return {s.tc_labels, s.tc_depths, s.knots}; }

struct Calibration {
  ChainEnsemble chains;
  PosteriorSamples posterior;
};

/// DRAM ensemble against `data` with the surrogate as the forward model.
inline Calibration calibrate(RunContext& ctx, const std::string& key, const std::vector<TCProfile>& data,
                             const FieldSurrogate& sur) {
  const auto& cfg = ctx.config();
  if (data.size() != sur.n_tcs()) throw InvalidArgument("calibrate: data has a different TC count than the surrogate");
  for (std::size_t c = 0; c < data.size(); ++c) {
    if (data[c].label != sur.tc_labels[c])
      throw InvalidArgument("calibrate: data column '" + data[c].label + "' does not match surrogate TC '" +
                            sur.tc_labels[c] + "'");
    if (data[c].times.front() < sur.knots.front() - 1e-9 || data[c].times.back() > sur.knots.back() + 1e-9)
      throw InvalidArgument("calibrate: data times of " + data[c].label + " extend beyond the surrogate knots");
  }
  auto predictor = [&sur](std::span<const double> th) { return sur.evaluate(th); };
  const PosteriorModel<decltype(predictor)> pm(cfg.prior, cfg.likelihood, data, predictor);
  EnsembleConfig ec;
  ec.n_chains = cfg.mcmc.n_chains;
  ec.dram = {cfg.mcmc.n_samples, cfg.mcmc.adapt_start_fraction, cfg.mcmc.adapt_interval, cfg.mcmc.dr_scale,
             cfg.mcmc.eps_reg, 0};
  ec.seed = ctx.seed("calibrate-" + key);
  ec.threads = ctx.threads();
  Calibration out;
  out.chains = run_ensemble(pm.problem(cfg.mcmc.proposal_fraction), ec);
  out.chains.id = "calibrate-" + key;
  out.posterior = clean_chains(out.chains, cfg.mcmc.burn, cfg.mcmc.thin);
  ctx.emit_with("chains_" + key + ".csv", [&](std::ostream& os) { io::write_chains_csv(os, out.chains); });
  ctx.emit_with("posterior_" + key + ".csv", [&](std::ostream& os) { io::write_samples_csv(os, out.posterior.samples); });
  Json j = io::to_json(out.posterior);
  j["likelihood"] = cfg.likelihood.mode == LikelihoodMode::Emulator ? "emulator" : "per_tc";
  j["n_chains"] = out.chains.n_chains();
  j["n_samples_per_chain"] = cfg.mcmc.n_samples;
  Json acc = Json::array();
  for (const auto& ch : out.chains.chains) {
    acc.push_back(ch.acceptance_rate);
    for (const auto& w : ch.warnings) ctx.warnings().push_back("calibrate-" + key + ": " + w);
  }
  j["acceptance_rates"] = acc;
  Json mean = Json::object();
  for (std::size_t k = 0; k < out.posterior.samples.dim(); ++k)
    mean[out.posterior.samples.names[k]] = ndx::mean(out.posterior.samples.column(k));
  j["posterior_mean"] = mean;
  ctx.emit_json("posterior_" + key + ".json", j);
  return out;
}

/// Names of the likelihood sigmas for the given TC labels.
inline std::vector<std::string> sigma_names(const RunConfig& cfg, const std::vector<std::string>& labels) {
  std::vector<TCProfile> dummy(labels.size());
  for (std::size_t c = 0; c < labels.size(); ++c) dummy[c].label = labels[c];
  return cfg.likelihood.sigma_names(dummy);
}

/// Theta prior followed by the sigma priors (the non-updated model).
inline PriorSpec full_prior(const RunConfig& cfg, const std::vector<std::string>& labels) {
  PriorSpec p = cfg.prior;
  for (const auto& nm : sigma_names(cfg, labels)) {
    Marginal m = cfg.likelihood.sigma_prior;
    m.name = nm;
    p.marginals.push_back(m);
  }
  return p;
}

/// n draws (with replacement) pushed through the surrogate; emulator noise on
/// request.
inline PredictiveEnsemble propagate_samples(RunContext& ctx, const std::string& tag, const SampleSet& samples,
                                            const FieldSurrogate& sur, bool emulator, std::size_t n) {
  const auto& cfg = ctx.config();
  const auto seed = ctx.seed("propagate-" + tag);
  const std::vector<double> one{1.0};
  const SampleSet draws = bma_posterior(one, {samples}, n, derive_seed(seed, "resample"));
  PropagationOptions opt;
  opt.theta_names = cfg.prior.names();
  if (emulator) opt.sigma_names = sigma_names(cfg, sur.tc_labels);
  opt.seed = derive_seed(seed, "noise");
  opt.threads = ctx.threads();
  opt.source_id = tag;
  return propagate(draws, sur, layout_of(sur), opt);
}

inline std::vector<PredictionBands> bands_at(const PredictiveEnsemble& e, const std::vector<double>& levels) {
  std::vector<PredictionBands> out;
  for (double l : levels) out.push_back(prediction_bands(e, l));
  return out;
}

inline void emit_bands(RunContext& ctx, const std::string& name, const std::vector<PredictionBands>& b) {
  ctx.emit_with(name, [&](std::ostream& os) { io::write_bands_csv(os, b); });
}

inline void emit_map(RunContext& ctx, const std::string& name, const PosteriorSamples& post, const FieldSurrogate& sur) {
  const auto map = map_trajectory(post, sur, ctx.config().prior.names());
  ctx.emit_with(name, [&](std::ostream& os) { io::write_tc_csv(os, map); });
}

inline OverlayResult overlay(RunContext& ctx, const std::vector<TCProfile>& ground, const std::vector<TCProfile>& flight) {
  auto r = normalized_overlay(ground, flight);
  ctx.emit_json("overlay.json", io::to_json(r));
  return r;
}

struct SweepResult {
  DivergenceTable table;
  double w_star = 1.0;
  double w_jeffreys = 1.0;
  double w_backward = 1.0;
  PredictiveEnsemble best;  // mixture ensemble at w_star
};

/// Mixture-weight sweep: w x informative posterior + (1 - w) x prior, each
/// mixture propagated with emulator noise and compared to `reference`.
inline SweepResult sweep(RunContext& ctx, const PosteriorSamples& informative, const PredictiveEnsemble& reference,
                         const FieldSurrogate& sur) {
  const auto& cfg = ctx.config();
  const auto seed = ctx.seed("sweep-w");
  MixturePrior mix;
  mix.informative = informative.samples;
  mix.noninformative = full_prior(cfg, sur.tc_labels);
  PropagationOptions opt;
  opt.theta_names = cfg.prior.names();
  opt.sigma_names = sigma_names(cfg, sur.tc_labels);
  opt.threads = ctx.threads();
  const auto ws = w_grid(cfg.mixture.w_step);
  auto build = [&](double w) {
    const auto i = static_cast<std::uint64_t>(std::llround(w / cfg.mixture.w_step));
    MixturePrior m = mix;
    m.w = w;
    const auto draws = mixture_sample(m, cfg.mixture.n_samples, derive_seed(seed, 2 * i));
    PropagationOptions o = opt;
    o.seed = derive_seed(seed, 2 * i + 1);
    o.source_id = "mixture-w" + io::num(w);
    return propagate(draws, sur, layout_of(sur), o);
  };
  DivergenceConfig dc;
  dc.grid_points = cfg.mixture.grid_points;
  dc.floor = cfg.mixture.floor;
  dc.truncate_level = cfg.mixture.truncate_level;
  dc.threads = ctx.threads();
  SweepResult r;
  r.table = sweep_w(ws, build, reference, dc, &ctx.warnings());
  r.w_jeffreys = select_optimal_w(r.table, WCriterion::Jeffreys);
  r.w_backward = select_optimal_w(r.table, WCriterion::BackwardKL);
  r.w_star = cfg.mixture.criterion == WCriterion::Jeffreys ? r.w_jeffreys : r.w_backward;
  r.best = build(r.w_star);
  ctx.emit_with("divergence_table.csv", [&](std::ostream& os) { r.table.write_csv(os); });
  ctx.emit_with("divergence_contour.csv", [&](std::ostream& os) { r.table.write_contour_csv(os); });
  for (std::size_t i = 0; i < r.table.rows.size(); ++i)
    if (r.table.rows[i].w == r.w_star && r.table.rows[i].ok)
      ctx.emit_with("divergence_pointwise_best.csv",
                    [&](std::ostream& os) { io::write_pointwise_csv(os, r.table.pointwise[i]); });
  mix.w = r.w_star;
  ctx.emit_json("mixture.json", io::mixture_json(mix, informative.source_id));
  return r;
}

inline Json selection_json(const DivergenceTable& t, WCriterion crit) {
  Json j;
  j["criterion"] = crit == WCriterion::Jeffreys ? "jeffreys" : "backward_kl";
  j["w_star"] = select_optimal_w(t, crit);
  j["w_jeffreys"] = select_optimal_w(t, WCriterion::Jeffreys);
  j["w_backward_kl"] = select_optimal_w(t, WCriterion::BackwardKL);
  j["rows"] = t.rows.size();
  Json failed = Json::array();
  for (const auto& r : t.rows)
    if (!r.ok) failed.push_back({{"w", r.w}, {"error", r.error}});
  j["failed_rows"] = failed;
  return j;
}

/// log L(flight data | theta, sigma) for model evidence, on the surrogate.
inline auto flight_loglik(const RunConfig& cfg, const std::vector<TCProfile>& data, const FieldSurrogate& sur) {
  const std::size_t nt = cfg.prior.size();
  return [&cfg, &data, &sur, nt](std::span<const double> x) {
    const auto pred = align_predictions(sur.evaluate(x.first(nt)), data);
    for (const auto& tc : pred)
      for (double v : tc.values)
        if (!(v > 0.0)) return kNegInf;
    return log_likelihood(x.subspan(nt), data, pred, cfg.likelihood);
  };
}

}  // namespace stage

struct PipelineReport {
  double coverage_parametric = 0.0;
  double coverage_emulator = 0.0;
  double coverage_gap = 0.0;  // percentage points
  double w_star = 1.0;
  double containment = 0.0;
  bool interpolative = false;
  Json json;
};

/// Ground calibration, propagation to flight (parametric-only and emulator),
/// mixture sweep against a flight-calibrated reference, overlay check.
inline PipelineReport run_pipeline(RunContext& ctx) {
  const auto& cfg = ctx.config();
  const auto ground = stage::scenario_data(ctx, "ground");
  const auto flight = stage::scenario_data(ctx, "flight");
  const auto sur_g = stage::surrogate(ctx, "ground");
  const auto sur_f = stage::surrogate(ctx, "flight");
  const auto cal_g = stage::calibrate(ctx, "ground", ground, sur_g);
  const auto cal_f = stage::calibrate(ctx, "flight", flight, sur_f);

  const std::size_t n = cfg.propagation.n_samples;
  const auto par = stage::propagate_samples(ctx, "ground-to-flight-parametric", cal_g.posterior.samples, sur_f, false, n);
  const auto emu = stage::propagate_samples(ctx, "ground-to-flight-emulator", cal_g.posterior.samples, sur_f, true, n);
  const auto ref = stage::propagate_samples(ctx, "flight-reference", cal_f.posterior.samples, sur_f, true, n);
  const auto b_par = stage::bands_at(par, cfg.propagation.levels);
  const auto b_emu = stage::bands_at(emu, cfg.propagation.levels);
  const auto b_ref = stage::bands_at(ref, cfg.propagation.levels);
  stage::emit_bands(ctx, "bands_ground_to_flight_parametric.csv", b_par);
  stage::emit_bands(ctx, "bands_ground_to_flight_emulator.csv", b_emu);
  stage::emit_bands(ctx, "bands_flight_reference.csv", b_ref);
  stage::emit_map(ctx, "map_ground_on_flight.csv", cal_g.posterior, sur_f);
  stage::emit_map(ctx, "map_flight.csv", cal_f.posterior, sur_f);

  PipelineReport rep;
  const auto p95 = prediction_bands(par, 0.95), e95 = prediction_bands(emu, 0.95);
  rep.coverage_parametric = coverage(p95, flight);
  rep.coverage_emulator = coverage(e95, flight);
  rep.coverage_gap = 100.0 * (rep.coverage_emulator - rep.coverage_parametric);

  const auto sw = stage::sweep(ctx, cal_g.posterior, ref, sur_f);
  rep.w_star = sw.w_star;
  const double lvl = cfg.mixture.containment_level;
  rep.containment = containment(prediction_bands(sw.best, lvl), prediction_bands(ref, lvl));
  stage::emit_bands(ctx, "bands_mixture_best.csv", stage::bands_at(sw.best, cfg.propagation.levels));
  ctx.emit_json("selection.json", stage::selection_json(sw.table, cfg.mixture.criterion));

  // model set {M_ground, M_up} scored on the flight data
  const auto full = stage::full_prior(cfg, sur_f.tc_labels);
  auto ll = stage::flight_loglik(cfg, flight, sur_f);
  const auto ev_seed = ctx.seed("evidence");
  std::vector<EvidenceEstimate> ev{estimate_evidence(ll, cal_g.posterior.samples, 2000, derive_seed(ev_seed, 0), ctx.threads()),
                                   estimate_evidence(ll, full, 2000, derive_seed(ev_seed, 1), ctx.threads())};
  std::vector<BayesianModel> models(2);
  models[0] = {"ground", ModelKind::Updated, cal_g.posterior, "ground", std::nullopt, rep.w_star};
  models[1] = {"M_up", ModelKind::Unupdated, std::nullopt, "", full, 1.0 - rep.w_star};
  std::vector<double> weights;
  try {
    const std::vector<double> le{ev[0].log_evidence, ev[1].log_evidence}, pr{rep.w_star, 1.0 - rep.w_star};
    weights = model_posterior(le, pr);
  } catch (const EvidenceUnderflow& e) {
    ctx.warnings().push_back(std::string("model weights: ") + e.what());
  }
  ctx.emit_json("models.json", io::model_weights_json(models, ev, weights));

  const auto names = cfg.prior.names();
  const auto cols = ndx::detail::column_map(names, cal_g.posterior.samples.names);
  std::vector<double> map_theta;
  for (auto c : cols) map_theta.push_back(cal_g.posterior.map_point[c]);
  const auto mat = cfg.nominal.with(names, map_theta);
  const auto ov = stage::overlay(ctx, stage::simulate(cfg, "ground", mat), stage::simulate(cfg, "flight", mat));
  rep.interpolative = ov.verdict;

  Json j;
  j["config_hash"] = cfg.hash();
  j["posterior_samples"] = {{"ground", cal_g.posterior.samples.size()}, {"flight", cal_f.posterior.samples.size()}};
  j["coverage_95"] = {{"parametric_only", rep.coverage_parametric},
                      {"emulator", rep.coverage_emulator},
                      {"gap_percentage_points", rep.coverage_gap}};
  j["w_sweep"] = {{"criterion", cfg.mixture.criterion == WCriterion::Jeffreys ? "jeffreys" : "backward_kl"},
                  {"w_star", sw.w_star},
                  {"w_jeffreys", sw.w_jeffreys},
                  {"w_backward_kl", sw.w_backward}};
  j["containment"] = {{"level", lvl}, {"fraction", rep.containment}};
  j["overlay_verdict"] = ov.verdict ? "interpolative" : "extrapolative";
  j["warnings"] = ctx.warnings();
  rep.json = j;
  ctx.emit_json("report.json", j);
  return rep;
}

}  // namespace ndx
