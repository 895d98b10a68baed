#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "ndx/config.hpp"
#include "ndx/io.hpp"
#include "ndx/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ndx;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

RunConfig load(const Common& c) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw ConfigError(std::string(what) + ": file '" + path + "' does not exist");
}

void finish(RunContext& ctx) {
  Json echo = ctx.config().raw;
  echo["seed"] = ctx.config().seed;
  ctx.emit_json("config.json", echo);
  ctx.write_manifest();
  for (const auto& w : ctx.warnings()) std::cerr << "warning: " << w << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ndx: calibration, propagation and mixture-weight selection for in-depth thermal response"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--out", common.out, "output directory (overrides output_dir)");
  app.add_option("--seed", common.seed, "global seed (overrides seed)");
  app.add_option("--threads", common.threads, "worker threads, 0 = hardware");

  std::string scenario = "ground";
  std::string data, surrogate, posterior, map_json, informative, reference, table, mode, criterion;
  std::string ground_csv, flight_csv;
  bool truth = false, no_emulator = false;
  std::optional<double> sigma;
  std::optional<std::size_t> n_override;

  auto* simulate = app.add_subcommand("simulate", "solver run; thermocouple CSV out");
  simulate->add_option("--scenario", scenario, "scenario key");
  simulate->add_flag("--truth", truth, "use the synthetic truth parameters instead of the nominal ones");

  auto* synth = app.add_subcommand("synthesize-data", "solver run at the truth with log-normal noise");
  synth->add_option("--scenario", scenario, "scenario key");
  synth->add_option("--sigma", sigma, "noise sd on the log scale (overrides synthetic.sigma)");

  auto* morris = app.add_subcommand("morris", "Morris screening");
  morris->add_option("--scenario", scenario, "scenario key");

  auto* pce = app.add_subcommand("pce", "frozen-time PCE surrogate");
  pce->add_option("--scenario", scenario, "scenario key");

  auto* calibrate = app.add_subcommand("calibrate", "DRAM calibration against thermocouple data");
  calibrate->add_option("--scenario", scenario, "scenario key");
  calibrate->add_option("--data", data, "thermocouple CSV (overrides the scenario's data)");
  calibrate->add_option("--surrogate", surrogate, "surrogate JSON from `pce` (fitted when absent)");
  calibrate->add_option("--mode", mode, "likelihood mode: emulator | per_tc");

  auto* propagate = app.add_subcommand("propagate", "posterior or mixture samples to prediction intervals");
  propagate->add_option("--posterior", posterior, "parameter sample CSV")->required();
  propagate->add_option("--scenario", scenario, "target scenario key");
  propagate->add_option("--surrogate", surrogate, "surrogate JSON for the target scenario (fitted when absent)");
  propagate->add_option("--map", map_json, "posterior JSON holding the MAP point");
  propagate->add_flag("--no-emulator", no_emulator, "parametric uncertainty only");
  propagate->add_option("--n", n_override, "number of propagated samples");

  auto* overlay = app.add_subcommand("overlay", "normalized-time interpolativity check");
  overlay->add_option("--ground", ground_csv, "ground thermocouple CSV (simulated when absent)");
  overlay->add_option("--flight", flight_csv, "flight thermocouple CSV (simulated when absent)");
  overlay->add_flag("--truth", truth, "simulate at the synthetic truth");

  auto* sweep = app.add_subcommand("sweep-w", "divergence table over the mixture weight");
  sweep->add_option("--informative", informative, "posterior sample CSV of the informative component")->required();
  sweep->add_option("--reference", reference, "posterior sample CSV of the reference calibration")->required();
  sweep->add_option("--scenario", scenario, "target scenario key");
  sweep->add_option("--surrogate", surrogate, "surrogate JSON for the target scenario (fitted when absent)");

  auto* select = app.add_subcommand("select-w", "optimal w from a divergence table");
  select->add_option("--table", table, "divergence_table.csv")->required();
  select->add_option("--criterion", criterion, "jeffreys | backward_kl");

  auto* pipeline = app.add_subcommand("pipeline", "full flow: calibrate, propagate, sweep, report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = load(common);
    if (sigma) {
      if (!(*sigma >= 0.0)) throw ConfigError("--sigma must be >= 0");
      cfg.synthetic.sigma = *sigma;
    }
    if (!mode.empty()) {
      if (mode == "emulator")
        cfg.likelihood.mode = LikelihoodMode::Emulator;
      else if (mode == "per_tc")
        cfg.likelihood.mode = LikelihoodMode::PerTC;
      else
        throw ConfigError("--mode must be emulator or per_tc");
    }
    if (!criterion.empty()) {
      if (criterion == "jeffreys")
        cfg.mixture.criterion = WCriterion::Jeffreys;
      else if (criterion == "backward_kl")
        cfg.mixture.criterion = WCriterion::BackwardKL;
      else
        throw ConfigError("--criterion must be jeffreys or backward_kl");
    }
    if (n_override) cfg.propagation.n_samples = *n_override;
    const bool needs_scenario = !select->parsed() && !pipeline->parsed() && !overlay->parsed();
    if (needs_scenario) (void)cfg.scenario(scenario);
    if (pipeline->parsed()) {
      (void)cfg.scenario("ground");
      (void)cfg.scenario("flight");
    }
    for (const auto* p : {&data, &surrogate, &posterior, &map_json, &informative, &reference, &table, &ground_csv, &flight_csv})
      if (!p->empty()) require_file(*p, "input");

    const std::string command = app.get_subcommands().front()->get_name();
    RunContext ctx(cfg, cfg.output_dir, command);
    auto get_surrogate = [&](const std::string& key) {
      return surrogate.empty() ? stage::surrogate(ctx, key) : stage::load_surrogate(surrogate);
    };

    if (simulate->parsed()) {
      const auto tcs = stage::simulate(cfg, scenario, truth ? cfg.truth_material() : cfg.nominal);
      ctx.emit_with("simulate_" + scenario + ".csv", [&](std::ostream& os) { io::write_tc_csv(os, tcs); });
    } else if (synth->parsed()) {
      const auto d = stage::synthesize(ctx, scenario);
      ctx.emit_with("data_" + scenario + ".csv", [&](std::ostream& os) { io::write_tc_csv(os, d); });
    } else if (morris->parsed()) {
      stage::morris(ctx, scenario);
    } else if (pce->parsed()) {
      const auto s = stage::surrogate(ctx, scenario);
      std::printf("%zu TCs x %zu knots, worst LOO error %.3g\n", s.n_tcs(), s.n_knots(), s.worst_loo);
    } else if (calibrate->parsed()) {
      const auto& sc = cfg.scenario(scenario);
      const auto d = !data.empty() ? io::ingest_tc_csv(data, sc.scenario) : stage::scenario_data(ctx, scenario);
      const auto sur = get_surrogate(scenario);
      const auto cal = stage::calibrate(ctx, scenario, d, sur);
      std::printf("%zu chains, %zu clean samples\n", cal.chains.n_chains(), cal.posterior.samples.size());
    } else if (propagate->parsed()) {
      const auto samples = io::read_samples_csv(posterior);
      const auto sur = get_surrogate(scenario);
      const auto ens = stage::propagate_samples(ctx, scenario, samples, sur, !no_emulator, cfg.propagation.n_samples);
      ctx.emit_with("ensemble_" + scenario + ".csv", [&](std::ostream& os) { io::write_ensemble_csv(os, ens); });
      stage::emit_bands(ctx, "bands_" + scenario + ".csv", stage::bands_at(ens, cfg.propagation.levels));
      if (!map_json.empty()) {
        const auto j = io::read_json(map_json);
        PosteriorSamples post;
        post.samples = SampleSet(j.at("names").get<std::vector<std::string>>());
        post.map_point = j.at("map_point").get<std::vector<double>>();
        stage::emit_map(ctx, "map_" + scenario + ".csv", post, sur);
      }
    } else if (overlay->parsed()) {
      const MaterialParams m = truth ? cfg.truth_material() : cfg.nominal;
      const auto g = !ground_csv.empty() ? io::ingest_tc_csv(ground_csv, cfg.scenario("ground").scenario)
                                         : stage::simulate(cfg, "ground", m);
      const auto f = !flight_csv.empty() ? io::ingest_tc_csv(flight_csv, cfg.scenario("flight").scenario)
                                         : stage::simulate(cfg, "flight", m);
      const auto r = stage::overlay(ctx, g, f);
      std::printf("overlay: %s\n", r.verdict ? "interpolative" : "extrapolative");
    } else if (sweep->parsed()) {
      PosteriorSamples inf;
      inf.samples = io::read_samples_csv(informative);
      inf.source_id = fs::path(informative).stem().string();
      const auto refs = io::read_samples_csv(reference);
      const auto sur = get_surrogate(scenario);
      const auto ref = stage::propagate_samples(ctx, "reference", refs, sur, true, cfg.propagation.n_samples);
      const auto r = stage::sweep(ctx, inf, ref, sur);
      ctx.emit_json("selection.json", stage::selection_json(r.table, cfg.mixture.criterion));
      std::printf("w* = %g (jeffreys %g, backward KL %g)\n", r.w_star, r.w_jeffreys, r.w_backward);
    } else if (select->parsed()) {
      std::ifstream in(table, std::ios::binary);
      const auto t = io::read_divergence_table(in);
      const auto j = stage::selection_json(t, cfg.mixture.criterion);
      ctx.emit_json("selection.json", j);
      std::printf("w* = %g\n", j["w_star"].get<double>());
    } else if (pipeline->parsed()) {
      const auto rep = run_pipeline(ctx);
      std::printf("coverage95 parametric %.3f emulator %.3f (gap %.1f pp); w* = %g; containment %.3f; overlay %s\n",
                  rep.coverage_parametric, rep.coverage_emulator, rep.coverage_gap, rep.w_star, rep.containment,
                  rep.interpolative ? "interpolative" : "extrapolative");
    }
    finish(ctx);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.numerical() ? 2 : 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
