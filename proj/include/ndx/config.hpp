#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ndx/calibration.hpp"
#include "ndx/common.hpp"
#include "ndx/divergence.hpp"
#include "ndx/forward_model.hpp"
#include "ndx/io.hpp"
#include "ndx/prior.hpp"
#include "ndx/sensitivity.hpp"
#include "ndx/surrogate.hpp"

// Run configuration: one JSON document. Schema in configs/README.md.

namespace ndx {

struct ScenarioConfig {
  Scenario scenario;
  std::optional<std::filesystem::path> data;  // measured TC CSV
};

struct GridConfig {
  std::size_t n_cells = 40;
  double stretch = 0.3;
};

struct MorrisConfig {
  std::size_t r = 20;
  std::size_t levels = 11;
  std::size_t jump = 4;
  double fraction = 0.1;
};

struct PceRunConfig {
  std::size_t n_train = 80;
  double knot_spacing = 1.0;
  PceConfig pce;
};

struct McmcConfig {
  std::size_t n_chains = 4;
  std::size_t n_samples = 20000;
  std::size_t burn = 10000;
  std::size_t thin = 10;
  double adapt_start_fraction = 0.1;
  std::size_t adapt_interval = 100;
  double dr_scale = 0.2;
  double eps_reg = 1e-10;
  double proposal_fraction = 0.1;
};

struct PropagationConfig {
  std::size_t n_samples = 4000;
  std::vector<double> levels{0.95, 0.99, 0.997};
};

struct MixtureConfig {
  double w_step = 0.1;
  WCriterion criterion = WCriterion::Jeffreys;
  std::size_t n_samples = 4000;
  std::optional<double> truncate_level;
  std::size_t grid_points = kKdeGridPoints;
  double floor = 1e-12;
  double containment_level = 0.99;
};

struct SyntheticConfig {
  std::map<std::string, double> truth;  // material parameters of the data-generating run
  double sigma = 0.03;                  // multiplicative log-normal noise
};

struct RunConfig {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::filesystem::path output_dir = "out";
  GridConfig grid;
  MaterialParams nominal;
  std::map<std::string, ScenarioConfig> scenarios;
  PriorSpec prior;
  LikelihoodSpec likelihood;
  MorrisConfig morris;
  PceRunConfig pce;
  McmcConfig mcmc;
  PropagationConfig propagation;
  MixtureConfig mixture;
  SyntheticConfig synthetic;
  Json raw;  // as loaded, for hashing and echo

  const ScenarioConfig& scenario(const std::string& key) const {
    const auto it = scenarios.find(key);
    if (it == scenarios.end()) throw ConfigError("config has no scenario '" + key + "'");
    return it->second;
  }

  MaterialParams truth_material() const {
    MaterialParams m = nominal;
    for (const auto& [k, v] : synthetic.truth) m.at(k) = v;
    return m;
  }

  /// Stage sub-seed; every stochastic stage draws from its own stream.
  std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }

  /// Hash of the configuration with run-local fields (threads, output_dir)
  /// removed; seed overrides are folded in.
  std::string hash() const {
    nlohmann::json canon = nlohmann::json::parse(raw.dump());
    canon.erase("threads");
    canon.erase("output_dir");
    canon["seed"] = seed;
    return io::hex64(fnv1a64(canon.dump()));
  }

  void validate() const {
    if (grid.n_cells < 2) throw ConfigError("grid.n_cells must be >= 2");
    if (!(grid.stretch > 0.0)) throw ConfigError("grid.stretch must be positive");
    nominal.validate();
    if (scenarios.empty()) throw ConfigError("config defines no scenarios");
    for (const auto& [key, sc] : scenarios) {
      try {
        sc.scenario.validate();
      } catch (const Error& e) {
        throw ConfigError(std::string("scenarios.") + key + ": " + e.what());
      }
      if (sc.data && !std::filesystem::exists(*sc.data))
        throw ConfigError("scenarios." + key + ".data: file '" + sc.data->string() + "' does not exist");
    }
    prior.validate();
    for (const auto& m : prior.marginals) {
      const auto& names = MaterialParams::parameter_names();
      if (std::find(names.begin(), names.end(), m.name) == names.end())
        throw ConfigError("prior: '" + m.name + "' is not a material parameter");
    }
    if (!(likelihood.sigma_prior.kind == MarginalKind::Uniform && likelihood.sigma_prior.a > 0.0))
      throw ConfigError("likelihood.sigma_prior must be a uniform range with lo > 0");
    if (!(likelihood.epsilon >= 0.0)) throw ConfigError("likelihood.epsilon must be >= 0");
    TrajectoryConfig tc{morris.r, morris.levels, morris.jump, 0};
    try {
      tc.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("morris: ") + e.what());
    }
    if (!(morris.fraction > 0.0 && morris.fraction < 1.0)) throw ConfigError("morris.fraction must lie in (0,1)");
    if (pce.n_train < 2 * (prior.size() + 1))
      throw ConfigError("pce.n_train must be at least twice the order-1 basis size (" + std::to_string(2 * (prior.size() + 1)) +
                        ")");
    if (!(pce.knot_spacing > 0.0)) throw ConfigError("pce.knot_spacing must be positive");
    if (!(pce.pce.q > 0.0 && pce.pce.q <= 1.0)) throw ConfigError("pce.q must lie in (0,1]");
    if (pce.pce.max_order < 1) throw ConfigError("pce.max_order must be >= 1");
    if (mcmc.n_chains < 1) throw ConfigError("mcmc.n_chains must be >= 1");
    if (mcmc.thin < 1) throw ConfigError("mcmc.thin must be >= 1");
    if (mcmc.burn >= mcmc.n_samples) throw ConfigError("mcmc.burn must be smaller than mcmc.n_samples");
    DramConfig d{mcmc.n_samples, mcmc.adapt_start_fraction, mcmc.adapt_interval, mcmc.dr_scale, mcmc.eps_reg, 0};
    try {
      d.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("mcmc: ") + e.what());
    }
    if (!(mcmc.proposal_fraction > 0.0)) throw ConfigError("mcmc.proposal_fraction must be positive");
    if (propagation.n_samples < 2) throw ConfigError("propagation.n_samples must be >= 2");
    for (double l : propagation.levels)
      if (!(l > 0.0 && l < 1.0)) throw ConfigError("propagation.levels must lie in (0,1)");
    try {
      (void)w_grid(mixture.w_step);
    } catch (const Error& e) {
      throw ConfigError(std::string("mixture.w_step: ") + e.what());
    }
    if (mixture.n_samples < 10) throw ConfigError("mixture.n_samples must be >= 10");
    if (mixture.truncate_level && !(*mixture.truncate_level > 0.0 && *mixture.truncate_level < 1.0))
      throw ConfigError("mixture.truncate_level must lie in (0,1)");
    if (mixture.grid_points < 3) throw ConfigError("mixture.grid_points must be >= 3");
    if (!(mixture.floor > 0.0)) throw ConfigError("mixture.floor must be positive");
    if (!(mixture.containment_level > 0.0 && mixture.containment_level < 1.0))
      throw ConfigError("mixture.containment_level must lie in (0,1)");
    for (const auto& [k, v] : synthetic.truth) {
      try {
        (void)nominal.get(k);
      } catch (const Error&) {
        throw ConfigError("synthetic.truth: '" + k + "' is not a material parameter");
      }
    }
    truth_material().validate();
    if (!(synthetic.sigma >= 0.0)) throw ConfigError("synthetic.sigma must be >= 0");
  }
};

namespace detail {

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline Scenario scenario_from_json(const std::string& key, const Json& j) {
  Scenario s;
  s.name = j.value("name", key);
  read_opt(j, "thickness", s.thickness);
  read_opt(j, "duration", s.duration);
  read_opt(j, "dt", s.dt);
  read_opt(j, "output_every", s.output_every);
  read_opt(j, "initial_temperature", s.initial_temperature);
  read_opt(j, "tc_depths_mm", s.tc_depths_mm);
  read_opt(j, "tc_labels", s.tc_labels);
  const Json& surf = j.at("surface");
  const auto kind = surf.value("kind", std::string("heat_flux"));
  if (kind == "heat_flux")
    s.surface_kind = SurfaceBcKind::HeatFlux;
  else if (kind == "temperature")
    s.surface_kind = SurfaceBcKind::Temperature;
  else
    throw ConfigError("scenarios." + key + ".surface.kind: unknown '" + kind + "'");
  if (surf.contains("pulse")) {
    const Json& p = surf.at("pulse");
    s.surface_bc = trapezoid_pulse(p.at("peak").get<double>(), p.at("ramp_up").get<double>(), p.at("hold").get<double>(),
                                   p.at("ramp_down").get<double>(), s.duration);
  } else {
    s.surface_bc.times = surf.at("times").get<std::vector<double>>();
    s.surface_bc.values = surf.at("values").get<std::vector<double>>();
  }
  if (j.contains("back")) {
    const Json& b = j.at("back");
    const auto bk = b.value("kind", std::string("adiabatic"));
    if (bk == "adiabatic")
      s.back_kind = BackBcKind::Adiabatic;
    else if (bk == "fixed_temperature") {
      s.back_kind = BackBcKind::FixedTemperature;
      s.back_temperature = b.at("temperature").get<double>();
    } else
      throw ConfigError("scenarios." + key + ".back.kind: unknown '" + bk + "'");
  }
  return s;
}

inline std::map<std::string, double> param_map(const Json& j) {
  std::map<std::string, double> out;
  for (const auto& [k, v] : j.items()) out[k] = v.get<double>();
  return out;
}

}  // namespace detail

/// Parses a configuration document. Relative data paths resolve against
/// `base_dir` (the config file's directory).
inline RunConfig parse_config(const Json& j, const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  c.raw = j;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    detail::read_opt(j, "seed", c.seed);
    detail::read_opt(j, "threads", c.threads);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("grid")) {
      detail::read_opt(j["grid"], "n_cells", c.grid.n_cells);
      detail::read_opt(j["grid"], "stretch", c.grid.stretch);
    }
    if (j.contains("nominal"))
      for (const auto& [k, v] : detail::param_map(j["nominal"])) c.nominal.at(k) = v;
    if (!j.contains("scenarios") || !j["scenarios"].is_object()) throw ConfigError("config needs a 'scenarios' object");
    for (const auto& [key, js] : j["scenarios"].items()) {
      ScenarioConfig sc;
      sc.scenario = detail::scenario_from_json(key, js);
      if (js.contains("data")) {
        std::filesystem::path p = js["data"].get<std::string>();
        sc.data = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      }
      c.scenarios.emplace(key, std::move(sc));
    }
    if (!j.contains("prior")) throw ConfigError("config needs a 'prior' array");
    c.prior = io::prior_from_json(j["prior"]);
    if (j.contains("likelihood")) {
      const Json& l = j["likelihood"];
      const auto mode = l.value("mode", std::string("emulator"));
      if (mode == "emulator")
        c.likelihood.mode = LikelihoodMode::Emulator;
      else if (mode == "per_tc")
        c.likelihood.mode = LikelihoodMode::PerTC;
      else
        throw ConfigError("likelihood.mode: unknown '" + mode + "' (emulator | per_tc)");
      if (l.contains("sigma_prior")) {
        const auto r = l["sigma_prior"].get<std::vector<double>>();
        if (r.size() != 2) throw ConfigError("likelihood.sigma_prior must be [lo, hi]");
        c.likelihood.sigma_prior = Marginal::uniform("sigma", r[0], r[1]);
      }
      detail::read_opt(l, "epsilon", c.likelihood.epsilon);
    }
    if (j.contains("morris")) {
      const Json& m = j["morris"];
      detail::read_opt(m, "r", c.morris.r);
      detail::read_opt(m, "levels", c.morris.levels);
      detail::read_opt(m, "jump", c.morris.jump);
      detail::read_opt(m, "fraction", c.morris.fraction);
    }
    if (j.contains("pce")) {
      const Json& p = j["pce"];
      detail::read_opt(p, "n_train", c.pce.n_train);
      detail::read_opt(p, "knot_spacing", c.pce.knot_spacing);
      detail::read_opt(p, "q", c.pce.pce.q);
      detail::read_opt(p, "cv_target", c.pce.pce.cv_target);
      detail::read_opt(p, "max_order", c.pce.pce.max_order);
    }
    if (j.contains("mcmc")) {
      const Json& m = j["mcmc"];
      detail::read_opt(m, "n_chains", c.mcmc.n_chains);
      detail::read_opt(m, "n_samples", c.mcmc.n_samples);
      detail::read_opt(m, "burn", c.mcmc.burn);
      detail::read_opt(m, "thin", c.mcmc.thin);
      detail::read_opt(m, "adapt_start_fraction", c.mcmc.adapt_start_fraction);
      detail::read_opt(m, "adapt_interval", c.mcmc.adapt_interval);
      detail::read_opt(m, "dr_scale", c.mcmc.dr_scale);
      detail::read_opt(m, "eps_reg", c.mcmc.eps_reg);
      detail::read_opt(m, "proposal_fraction", c.mcmc.proposal_fraction);
    }
    if (j.contains("propagation")) {
      detail::read_opt(j["propagation"], "n_samples", c.propagation.n_samples);
      detail::read_opt(j["propagation"], "levels", c.propagation.levels);
    }
    if (j.contains("mixture")) {
      const Json& m = j["mixture"];
      detail::read_opt(m, "w_step", c.mixture.w_step);
      detail::read_opt(m, "n_samples", c.mixture.n_samples);
      detail::read_opt(m, "grid_points", c.mixture.grid_points);
      detail::read_opt(m, "floor", c.mixture.floor);
      detail::read_opt(m, "containment_level", c.mixture.containment_level);
      if (m.contains("truncate_level") && !m["truncate_level"].is_null())
        c.mixture.truncate_level = m["truncate_level"].get<double>();
      const auto crit = m.value("criterion", std::string("jeffreys"));
      if (crit == "jeffreys")
        c.mixture.criterion = WCriterion::Jeffreys;
      else if (crit == "backward_kl")
        c.mixture.criterion = WCriterion::BackwardKL;
      else
        throw ConfigError("mixture.criterion: unknown '" + crit + "' (jeffreys | backward_kl)");
    }
    if (j.contains("synthetic")) {
      const Json& s = j["synthetic"];
      if (s.contains("truth")) c.synthetic.truth = detail::param_map(s["truth"]);
      detail::read_opt(s, "sigma", c.synthetic.sigma);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(io::read_json(path), path.parent_path());
}

}  // namespace ndx
