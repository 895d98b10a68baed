#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ndx/config.hpp"
#include "ndx/io.hpp"
#include "ndx/pipeline.hpp"

#ifndef NDX_SOURCE_DIR
#define NDX_SOURCE_DIR "."
#endif

using namespace ndx;
namespace fs = std::filesystem;

namespace {

const fs::path kSmall = fs::path(NDX_SOURCE_DIR) / "configs" / "small.json";

// small.json shrunk so a stage runs in well under a second
Json tiny_json() {
  Json j = io::read_json(kSmall);
  j["pce"]["n_train"] = 16;
  j["pce"]["max_order"] = 2;
  j["mcmc"] = {{"n_chains", 3}, {"n_samples", 1200}, {"burn", 400}, {"thin", 7}};
  j["propagation"]["n_samples"] = 200;
  j["mixture"]["n_samples"] = 200;
  j["mixture"]["w_step"] = 0.25;
  return j;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ndx_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t parse_row(const std::string& csv) {
  std::istringstream in(csv);
  try {
    io::parse_tc_csv(in);
  } catch (const ParseError& e) {
    return e.row();
  }
  return 0;
}

}  // namespace

TEST_CASE("thermocouple CSV ingestion", "[cli]") {
  std::istringstream two("time,TC1,TC2\n0,300,301\n1.5,310,305\n");
  const std::vector<double> depths{0.001, 0.004};
  const auto p = io::parse_tc_csv(two, depths);
  REQUIRE(p.size() == 2);
  CHECK(p[0].label == "TC1");
  CHECK(p[1].depth == 0.004);
  CHECK(p[0].times == std::vector<double>{0.0, 1.5});
  CHECK(p[1].values == std::vector<double>{301.0, 305.0});

  std::istringstream header_only("time,TC1,TC2\n");
  CHECK_THROWS_AS(io::parse_tc_csv(header_only), ParseError);

  try {
    std::istringstream bad("time,TC1\n0,300\n10,310\n5,320\n");
    io::parse_tc_csv(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 3);
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }

  CHECK(parse_row("time,TC1\n0,300\n1,abc\n") == 2);
  CHECK(parse_row("time,TC1\n0,300\n1,310,7\n") == 2);
  CHECK(parse_row("time,TC1\n0,-4\n") == 1);
  CHECK(parse_row("temp,TC1\n0,300\n") == 0);
  std::istringstream mismatch("time,TC1,TC2\n0,300,301\n");
  CHECK_THROWS_AS(io::parse_tc_csv(mismatch, std::vector<double>{0.001}), ParseError);
}

TEST_CASE("thermocouple CSV round trip through a file", "[cli]") {
  const auto cfg = load_config(kSmall);
  const auto& sc = cfg.scenario("ground").scenario;
  const auto tcs = stage::simulate(cfg, "ground", cfg.nominal);
  const auto dir = scratch("tc_roundtrip");
  const auto path = dir / "sub" / "tc.csv";
  {
    auto os = io::open_out(path);
    io::write_tc_csv(os, tcs);
  }
  const auto back = io::ingest_tc_csv(path, sc);
  REQUIRE(back.size() == tcs.size());
  for (std::size_t c = 0; c < tcs.size(); ++c) {
    CHECK(back[c].label == tcs[c].label);
    CHECK(back[c].values == tcs[c].values);
    CHECK(back[c].times == tcs[c].times);
    CHECK(back[c].depth == tcs[c].depth);
  }
  CHECK_THROWS_AS(io::ingest_tc_csv(dir / "missing.csv", sc), ConfigError);
}

TEST_CASE("sample CSV round trip is exact", "[cli]") {
  SampleSet s({"a", "b"});
  SplitMix64 rng(5);
  for (int i = 0; i < 50; ++i) s.push_back(std::vector<double>{standard_normal(rng), 1e-7 * uniform01(rng)});
  std::stringstream ss;
  io::write_samples_csv(ss, s);
  const auto back = io::read_samples_csv(ss);
  CHECK(back.names == s.names);
  CHECK(back.data == s.data);
}

TEST_CASE("config loading and validation", "[cli]") {
  const auto cfg = load_config(kSmall);
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.scenarios.size() == 2);
  CHECK(cfg.scenario("flight").scenario.tc_depths_mm.size() == 4);
  CHECK_THROWS_AS(cfg.scenario("nope"), ConfigError);

  // run-local fields do not enter the hash; the seed does
  Json j = io::read_json(kSmall);
  const auto base = parse_config(j, kSmall.parent_path()).hash();
  j["threads"] = 7;
  j["output_dir"] = "elsewhere";
  CHECK(parse_config(j, kSmall.parent_path()).hash() == base);
  auto reseeded = parse_config(j, kSmall.parent_path());
  reseeded.seed += 1;
  CHECK(reseeded.hash() != base);

  CHECK(cfg.stage_seed("calibrate-ground") == cfg.stage_seed("calibrate-ground"));
  CHECK(cfg.stage_seed("calibrate-ground") != cfg.stage_seed("calibrate-flight"));

  auto invalid = [&](auto edit) {
    Json k = io::read_json(kSmall);
    edit(k);
    return [k] { parse_config(k, kSmall.parent_path()).validate(); };
  };
  CHECK_THROWS_AS(invalid([](Json& k) { k["mcmc"]["n_chains"] = 0; })(), ConfigError);
  CHECK_THROWS_AS(invalid([](Json& k) { k["mcmc"]["burn"] = 1e6; })(), ConfigError);
  CHECK_THROWS_AS(invalid([](Json& k) { k["mixture"]["w_step"] = 0.3; })(), ConfigError);
  CHECK_THROWS_AS(invalid([](Json& k) { k["scenarios"]["ground"]["data"] = "no_such.csv"; })(), ConfigError);
  CHECK_THROWS_AS(invalid([](Json& k) { k["synthetic"]["truth"]["bogus"] = 1.0; })(), ConfigError);
}

TEST_CASE("calibrate output matches the configured chain counts", "[cli]") {
  const auto cfg = parse_config(tiny_json(), kSmall.parent_path());
  const auto dir = scratch("calibrate");
  RunContext ctx(cfg, dir, "calibrate");
  const auto data = stage::scenario_data(ctx, "ground");
  const auto sur = stage::surrogate(ctx, "ground");
  const auto cal = stage::calibrate(ctx, "ground", data, sur);
  CHECK(cal.chains.n_chains() == 3);
  CHECK(cal.posterior.size() == 3 * ((1200 - 400) / 7));

  std::istringstream chains(slurp(dir / "chains_ground.csv"));
  std::string line;
  std::getline(chains, line);
  std::set<std::string> ids;
  std::size_t rows = 0;
  while (std::getline(chains, line)) {
    ids.insert(line.substr(0, line.find(',')));
    ++rows;
  }
  CHECK(ids.size() == 3);
  CHECK(rows == 3 * 1200);

  const auto j = io::read_json(dir / "posterior_ground.json");
  CHECK(j["n_chains"].get<std::size_t>() == cfg.mcmc.n_chains);
  CHECK(j["n_samples_per_chain"].get<std::size_t>() == cfg.mcmc.n_samples);
  CHECK(io::read_samples_csv(dir / "posterior_ground.csv").size() == cal.posterior.size());

  ctx.write_manifest();
  const auto m = io::read_json(dir / "manifest.json");
  CHECK(m["config_hash"] == cfg.hash());
  CHECK(m["stage_seeds"].contains("calibrate-ground"));
  CHECK(m["modules"].size() == 8);
  for (const auto& o : m["outputs"]) CHECK(fs::exists(dir / o["file"].get<std::string>()));
}

TEST_CASE("sweep table has one row per w and runs are byte identical", "[cli]") {
  const auto cfg = parse_config(tiny_json(), kSmall.parent_path());
  auto run = [&](const std::string& name, unsigned threads) {
    RunConfig c = cfg;
    c.threads = threads;
    const auto dir = scratch(name);
    RunContext ctx(c, dir, "sweep-w");
    const auto sur = stage::surrogate(ctx, "flight");
    PosteriorSamples inf;
    SplitMix64 rng(3);
    inf.samples = latin_hypercube_samples(stage::full_prior(c, sur.tc_labels), 300, rng);
    const auto ref = stage::propagate_samples(ctx, "reference", inf.samples, sur, true, c.propagation.n_samples);
    const auto r = stage::sweep(ctx, inf, ref, sur);
    ctx.write_manifest();
    return std::pair{r, dir};
  };
  const auto [a, da] = run("sweep_a", 1);
  const auto [b, db] = run("sweep_b", 3);
  CHECK(a.table.rows.size() == w_grid(0.25).size());

  std::istringstream csv(slurp(da / "divergence_table.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 5);

  for (const auto* f : {"divergence_table.csv", "divergence_contour.csv", "mixture.json", "pce_flight.json", "manifest.json"})
    CHECK(slurp(da / f) == slurp(db / f));
}
