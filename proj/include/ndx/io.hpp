#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ndx/bma.hpp"
#include "ndx/calibration.hpp"
#include "ndx/common.hpp"
#include "ndx/divergence.hpp"
#include "ndx/forward_model.hpp"
#include "ndx/predictive.hpp"
#include "ndx/prior.hpp"
#include "ndx/sensitivity.hpp"
#include "ndx/surrogate.hpp"

// File formats: thermocouple CSV, sample and chain CSV, surrogate JSON,
// prediction bands, overlay and model-weight reports.

namespace ndx {

using Json = nlohmann::ordered_json;

namespace io {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidArgument("cannot open '" + path.string() + "' for writing");
  return os;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  auto os = open_out(path);
  os << j.dump(2) << '\n';
}

inline Json read_json(const std::filesystem::path& path) {
  const auto text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(v);
}

}  // namespace detail

/// Parses `time,TC1,TC2,...`. Rows are counted from the first data row (the
/// header is row 0); columns from 1. `depths` (m from the surface) is joined
/// by column order; empty leaves depths at zero.
inline std::vector<TCProfile> parse_tc_csv(std::istream& in, std::span<const double> depths = {}) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file", 0, 1);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split(line);
  if (header.empty() || header[0] != "time") throw ParseError("first header cell must be 'time'", 0, 1);
  if (header.size() < 2) throw ParseError("no thermocouple columns", 0, 2);
  const std::size_t n_tc = header.size() - 1;
  if (!depths.empty() && depths.size() != n_tc)
    throw ParseError("file has " + std::to_string(n_tc) + " thermocouple columns but " + std::to_string(depths.size()) +
                         " depths are configured",
                     0, std::min(header.size(), depths.size() + 1) + 1);
  std::vector<TCProfile> out(n_tc);
  for (std::size_t c = 0; c < n_tc; ++c) {
    if (header[c + 1].empty()) throw ParseError("empty column name", 0, c + 2);
    out[c].label = header[c + 1];
    if (!depths.empty()) out[c].depth = depths[c];
  }
  std::size_t row = 0;
  double prev_t = 0.0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split(line);
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()), row,
                       std::min(cells.size(), header.size()) + 1);
    double t = 0.0;
    if (!detail::parse_double(cells[0], t)) throw ParseError("non-numeric time '" + cells[0] + "'", row, 1);
    if (row > 1 && !(t > prev_t)) throw ParseError("times must strictly increase", row, 1);
    prev_t = t;
    for (std::size_t c = 0; c < n_tc; ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c + 1], v)) throw ParseError("non-numeric temperature '" + cells[c + 1] + "'", row, c + 2);
      if (!(v > 0.0)) throw ParseError("temperature must be positive (K)", row, c + 2);
      out[c].times.push_back(t);
      out[c].values.push_back(v);
    }
  }
  if (row == 0) throw ParseError("no data rows: every thermocouple profile is empty", 1, 1);
  return out;
}

/// Reads a thermocouple CSV and joins the scenario's depths by column order.
inline std::vector<TCProfile> ingest_tc_csv(const std::filesystem::path& path, const Scenario& scenario) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  const auto depths = scenario.tc_depths_from_surface();
  try {
    return parse_tc_csv(in, depths);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.row(), e.column());
  }
}

inline void write_tc_csv(std::ostream& os, const std::vector<TCProfile>& profiles) {
  if (profiles.empty()) throw InvalidArgument("write_tc_csv: no profiles");
  os << "time";
  for (const auto& p : profiles) {
    if (p.times != profiles.front().times) throw InvalidArgument("write_tc_csv: profiles must share one time grid");
    os << ',' << p.label;
  }
  os << '\n';
  for (std::size_t i = 0; i < profiles.front().size(); ++i) {
    os << num(profiles.front().times[i]);
    for (const auto& p : profiles) os << ',' << num(p.values[i]);
    os << '\n';
  }
}

inline void write_samples_csv(std::ostream& os, const SampleSet& s) {
  for (std::size_t j = 0; j < s.dim(); ++j) os << (j ? "," : "") << s.names[j];
  os << '\n';
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto r = s.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) os << (j ? "," : "") << num(r[j]);
    os << '\n';
  }
}

inline SampleSet read_samples_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty sample file", 0, 1);
  SampleSet s(detail::split(line));
  if (s.names.empty()) throw ParseError("sample file has no columns", 0, 1);
  std::size_t row = 0;
  std::vector<double> x(s.dim());
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split(line);
    if (cells.size() != s.dim()) throw ParseError("wrong cell count", row, std::min(cells.size(), s.dim()) + 1);
    for (std::size_t j = 0; j < cells.size(); ++j)
      if (!detail::parse_double(cells[j], x[j])) throw ParseError("non-numeric cell '" + cells[j] + "'", row, j + 1);
    s.push_back(x);
  }
  return s;
}

inline SampleSet read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  return read_samples_csv(in);
}

/// Long format: chain, step, log_posterior, then one column per parameter.
inline void write_chains_csv(std::ostream& os, const ChainEnsemble& ens) {
  os << "chain,step,log_posterior";
  for (const auto& n : ens.names) os << ',' << n;
  os << '\n';
  for (std::size_t c = 0; c < ens.chains.size(); ++c) {
    const auto& ch = ens.chains[c];
    for (std::size_t i = 0; i < ch.log_posterior.size(); ++i) {
      os << c << ',' << i << ',' << num(ch.log_posterior[i]);
      for (std::size_t j = 0; j < ch.dim; ++j) os << ',' << num(ch.states[i * ch.dim + j]);
      os << '\n';
    }
  }
}

inline Json to_json(const Marginal& m) {
  Json j;
  j["name"] = m.name;
  if (m.kind == MarginalKind::Uniform) {
    j["kind"] = "uniform";
    j["lo"] = m.a;
    j["hi"] = m.b;
  } else {
    j["kind"] = "normal";
    j["mean"] = m.a;
    j["sd"] = m.b;
  }
  return j;
}

inline Marginal marginal_from_json(const Json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    const auto name = j.value("name", std::string("x"));
    Marginal m;
    if (kind == "uniform")
      m = Marginal::uniform(name, j.at("lo").get<double>(), j.at("hi").get<double>());
    else if (kind == "normal")
      m = Marginal::normal(name, j.at("mean").get<double>(), j.at("sd").get<double>());
    else
      throw ConfigError("marginal '" + name + "': unknown kind '" + kind + "'");
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("marginal: ") + e.what());
  }
}

inline Json to_json(const PriorSpec& p) {
  Json j = Json::array();
  for (const auto& m : p.marginals) j.push_back(to_json(m));
  return j;
}

inline PriorSpec prior_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("prior must be a non-empty array of marginals");
  PriorSpec p;
  for (const auto& m : j) p.marginals.push_back(marginal_from_json(m));
  p.validate();
  return p;
}

inline Json to_json(const PosteriorSamples& post) {
  Json j;
  j["source_id"] = post.source_id;
  j["names"] = post.samples.names;
  j["n_samples"] = post.samples.size();
  j["burn"] = post.burn;
  j["thin"] = post.thin;
  j["map_point"] = post.map_point;
  j["map_log_posterior"] = post.map_log_posterior;
  return j;
}

inline Json to_json(const FieldSurrogate& fs) {
  Json j;
  j["inputs"] = Json::array();
  for (const auto& m : fs.inputs) j["inputs"].push_back(to_json(m));
  j["tc_labels"] = fs.tc_labels;
  j["tc_depths"] = fs.tc_depths;
  j["knots"] = fs.knots;
  j["worst_loo"] = fs.worst_loo;
  j["warnings"] = fs.warnings;
  Json models = Json::array();
  for (std::size_t k = 0; k < fs.models.size(); ++k) {
    const auto& m = fs.models[k];
    Json jm;
    jm["tc"] = fs.tc_labels[k / fs.n_knots()];
    jm["time"] = fs.knots[k % fs.n_knots()];
    jm["order"] = m.order;
    jm["q"] = m.q_norm;
    jm["loo_error"] = m.loo_error;
    jm["failed"] = static_cast<bool>(fs.failed.empty() ? false : fs.failed[k]);
    Json idx = Json::array();
    for (const auto& mi : m.indices) idx.push_back(mi.degrees);
    jm["indices"] = std::move(idx);
    jm["coefficients"] = m.coefficients;
    models.push_back(std::move(jm));
  }
  j["models"] = std::move(models);
  return j;
}

inline FieldSurrogate surrogate_from_json(const Json& j) {
  try {
    FieldSurrogate fs;
    for (const auto& m : j.at("inputs")) fs.inputs.push_back(marginal_from_json(m));
    fs.tc_labels = j.at("tc_labels").get<std::vector<std::string>>();
    fs.tc_depths = j.at("tc_depths").get<std::vector<double>>();
    fs.knots = j.at("knots").get<std::vector<double>>();
    fs.worst_loo = j.value("worst_loo", 0.0);
    for (const auto& jm : j.at("models")) {
      PCEModel m;
      m.inputs = fs.inputs;
      m.order = jm.at("order").get<unsigned>();
      m.q_norm = jm.at("q").get<double>();
      m.loo_error = jm.at("loo_error").get<double>();
      for (const auto& d : jm.at("indices")) m.indices.push_back({d.get<std::vector<unsigned>>()});
      m.coefficients = jm.at("coefficients").get<std::vector<double>>();
      if (m.coefficients.size() != m.indices.size()) throw ConfigError("surrogate: coefficient/index count mismatch");
      fs.failed.push_back(jm.value("failed", false));
      fs.models.push_back(std::move(m));
    }
    if (fs.models.size() != fs.n_tcs() * fs.n_knots()) throw ConfigError("surrogate: model count does not match TCs x knots");
    fs.prepare();
    return fs;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("surrogate: ") + e.what());
  }
}

/// input, output (tc@time label), mu, mu_star, sigma (empty when r < 2).
inline void write_morris_csv(std::ostream& os, const MorrisStats& st, const std::vector<std::string>& inputs,
                             const std::vector<std::string>& outputs) {
  os << "input,output,mu,mu_star,sigma\n";
  for (std::size_t i = 0; i < st.n_inputs; ++i)
    for (std::size_t o = 0; o < st.n_outputs; ++o) {
      const auto s = st.sigma_at(i, o);
      os << inputs[i] << ',' << outputs[o] << ',' << num(st.mu_at(i, o)) << ',' << num(st.mu_star_at(i, o)) << ','
         << (s ? num(*s) : std::string()) << '\n';
    }
}

/// One row per input for the (mu*, sigma) plot: maxima over outputs.
inline void write_morris_plot_csv(std::ostream& os, const MorrisStats& st, const ScreeningResult& sr,
                                  const std::vector<std::string>& inputs) {
  os << "input,mu_star_max,sigma_max,distance,influential\n";
  for (std::size_t i = 0; i < st.n_inputs; ++i) {
    const bool infl = std::find(sr.influential.begin(), sr.influential.end(), i) != sr.influential.end();
    os << inputs[i] << ',' << num(st.mu_star_max(i)) << ',' << num(st.sigma_max(i)) << ',' << num(sr.distance[i]) << ','
       << (infl ? 1 : 0) << '\n';
  }
}

/// tc, depth, time, level, lo, hi, median; one block per band.
inline void write_bands_csv(std::ostream& os, const std::vector<PredictionBands>& bands) {
  os << "tc,depth,time,level,lo,hi,median\n";
  for (const auto& b : bands)
    for (std::size_t c = 0; c < b.layout.n_tcs(); ++c)
      for (std::size_t k = 0; k < b.layout.n_knots(); ++k) {
        const auto& iv = b.at(c, k);
        os << b.layout.tc_labels[c] << ',' << num(b.layout.tc_depths[c]) << ',' << num(b.layout.knots[k]) << ','
           << num(b.level) << ',' << num(iv.lo) << ',' << num(iv.hi) << ',' << num(b.median[c * b.layout.n_knots() + k])
           << '\n';
      }
}

/// Wide format: one row per sample, one column per (tc, time).
inline void write_ensemble_csv(std::ostream& os, const PredictiveEnsemble& e) {
  os << "sample";
  for (std::size_t c = 0; c < e.layout.n_tcs(); ++c)
    for (double t : e.layout.knots) os << ',' << e.layout.tc_labels[c] << '@' << num(t);
  os << '\n';
  for (std::size_t s = 0; s < e.n_samples; ++s) {
    os << s;
    for (std::size_t p = 0; p < e.layout.n_points(); ++p) os << ',' << num(e.values[s * e.layout.n_points() + p]);
    os << '\n';
  }
}

inline void write_pointwise_csv(std::ostream& os, const DivergencePointwise& d) {
  os << "tc,time,kl_mix_ref,kl_ref_mix,jeffreys\n";
  for (std::size_t c = 0; c < d.layout.n_tcs(); ++c)
    for (std::size_t k = 0; k < d.layout.n_knots(); ++k) {
      const std::size_t i = c * d.layout.n_knots() + k;
      os << d.layout.tc_labels[c] << ',' << num(d.layout.knots[k]) << ',' << num(d.forward[i]) << ','
         << num(d.backward[i]) << ',' << num(d.jeffreys[i]) << '\n';
    }
}

/// Reads the `w,kl_mix_ref,kl_ref_mix,jeffreys` table; empty cells mark
/// failed rows.
inline DivergenceTable read_divergence_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::split(line) != std::vector<std::string>{"w", "kl_mix_ref", "kl_ref_mix", "jeffreys"})
    throw ParseError("divergence table header must be w,kl_mix_ref,kl_ref_mix,jeffreys", 0, 1);
  DivergenceTable t;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split(line);
    if (cells.size() != 4) throw ParseError("expected 4 cells", row, std::min<std::size_t>(cells.size(), 4) + 1);
    DivergenceRow r;
    double* dst[4] = {&r.w, &r.forward, &r.backward, &r.jeffreys};
    for (std::size_t c = 0; c < 4; ++c) {
      if (c > 0 && (cells[c].empty() || cells[c] == "nan")) {
        r.ok = false;
        *dst[c] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      if (!detail::parse_double(cells[c], *dst[c])) throw ParseError("non-numeric cell '" + cells[c] + "'", row, c + 1);
    }
    t.rows.push_back(r);
  }
  if (t.rows.empty()) throw ParseError("divergence table has no rows", 1, 1);
  if (t.rows.size() > 1) t.spacing = t.rows[1].w - t.rows[0].w;
  return t;
}

inline Json to_json(const OverlayResult& r) {
  Json j;
  j["threshold"] = r.threshold;
  j["ground_duration"] = r.ground_duration;
  j["flight_duration"] = r.flight_duration;
  j["verdict"] = r.verdict ? "interpolative" : "extrapolative";
  j["violations"] = r.violations;
  auto profiles = [](const std::vector<OverlayProfile>& ps) {
    Json a = Json::array();
    for (const auto& p : ps) {
      Json jp;
      jp["label"] = p.label;
      jp["depth"] = p.depth;
      jp["applicable"] = p.applicable;
      jp["crossing_time"] = p.crossing_time;
      jp["max_value"] = p.max_value;
      jp["normalized_times"] = p.times;
      jp["values"] = p.values;
      a.push_back(std::move(jp));
    }
    return a;
  };
  j["comparisons"] = Json::array();
  for (const auto& c : r.comparisons)
    j["comparisons"].push_back({{"label", c.label}, {"depth", c.depth}, {"ground_max", c.ground_max},
                                {"flight_max", c.flight_max}, {"ok", c.ok}});
  j["ground"] = profiles(r.ground);
  j["flight"] = profiles(r.flight);
  return j;
}

inline Json to_json(const EvidenceEstimate& e) {
  Json j;
  j["log_evidence"] = std::isfinite(e.log_evidence) ? Json(e.log_evidence) : Json(nullptr);
  j["std_error"] = e.std_error;
  j["log_std_error"] = std::isfinite(e.log_std_error) ? Json(e.log_std_error) : Json(nullptr);
  j["n_mc"] = e.n_mc;
  j["underflow"] = e.underflow;
  return j;
}

/// Model set with prior and posterior probabilities.
inline Json model_weights_json(const std::vector<BayesianModel>& models, const std::vector<EvidenceEstimate>& evidence,
                               const std::vector<double>& weights) {
  Json j = Json::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    Json m;
    m["label"] = models[i].label;
    m["kind"] = models[i].kind == ModelKind::Updated ? "updated" : "unupdated";
    if (!models[i].data_id.empty()) m["data_id"] = models[i].data_id;
    m["prior_probability"] = models[i].prior_probability;
    if (i < evidence.size()) m["evidence"] = to_json(evidence[i]);
    if (i < weights.size()) m["posterior_probability"] = weights[i];
    j.push_back(std::move(m));
  }
  return j;
}

inline Json mixture_json(const MixturePrior& mix, const std::string& informative_source) {
  Json j;
  j["w"] = mix.w;
  j["informative"] = {{"source", informative_source}, {"n_samples", mix.informative.size()}};
  j["noninformative"] = to_json(mix.noninformative);
  return j;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace io
}  // namespace ndx
