#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ndx/common.hpp"
#include "ndx/prior.hpp"

// Synthetic 1-D charring-ablator thermal response: cell-centred finite
// volumes on a stretched grid, backward Euler in time, Picard-lagged
// conductivity k(T, chi) = (1-chi)(k0_v + k3_v T^3) + chi (k0_c + k3_c T^3),
// and three irreversible Arrhenius decomposition sub-phases driving chi.

namespace ndx {

struct MaterialParams {
  std::array<double, 3> logA{9.393, 20.03, 20.03};  // ln(1/s)
  std::array<double, 3> Ea_over_R{8000.0, 12000.0, 12000.0};  // K
  double k0_v = 0.2294;     // W/(m K)
  double k3_v = 1.694e-11;  // W/(m K^4)
  double k0_c = 0.2569;
  double k3_c = 4.510e-11;
  double rho_cp = 3.0e5;  // J/(m^3 K)
  std::array<double, 3> phase_weights{0.25, 0.5, 0.25};

  void validate() const {
    if (!(k0_v > 0.0 && k0_c > 0.0)) throw InvalidArgument("conductivity k0 coefficients must be positive");
    if (!(k3_v >= 0.0 && k3_c >= 0.0)) throw InvalidArgument("conductivity k3 coefficients must be non-negative");
    if (!(rho_cp > 0.0)) throw InvalidArgument("rho_cp must be positive");
    double s = 0.0;
    for (double w : phase_weights) {
      if (!(w >= 0.0)) throw InvalidArgument("phase weights must be non-negative");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-12) throw InvalidArgument("phase weights must sum to 1");
  }

  /// Names accepted by at()/get(); these are the uncertain-input names used
  /// in priors and configuration files.
  static const std::vector<std::string>& parameter_names() {
    static const std::vector<std::string> names{"logA_1", "logA_2", "logA_3", "k0_v",
                                                "k3_v",   "k0_c",   "k3_c",   "rho_cp"};
    return names;
  }

  double& at(const std::string& name) {
    if (name == "logA_1") return logA[0];
    if (name == "logA_2") return logA[1];
    if (name == "logA_3") return logA[2];
    if (name == "k0_v") return k0_v;
    if (name == "k3_v") return k3_v;
    if (name == "k0_c") return k0_c;
    if (name == "k3_c") return k3_c;
    if (name == "rho_cp") return rho_cp;
    throw InvalidArgument("unknown material parameter '" + name + "'");
  }
  double get(const std::string& name) const { return const_cast<MaterialParams&>(*this).at(name); }

  /// Copy with the named components overwritten.
  MaterialParams with(std::span<const std::string> names, std::span<const double> values) const {
    if (names.size() != values.size()) throw InvalidArgument("MaterialParams::with: size mismatch");
    MaterialParams out = *this;
    for (std::size_t i = 0; i < names.size(); ++i) out.at(names[i]) = values[i];
    return out;
  }
};

struct Grid {
  std::vector<double> node_positions;  // cell centres, depth from heated surface (m)
  std::vector<double> cell_widths;     // surface cell first (m)

  std::size_t n_cells() const { return cell_widths.size(); }
  double thickness() const {
    double s = 0.0;
    for (double w : cell_widths) s += w;
    return s;
  }
};

/// Geometric grid. `stretch` is the blockMesh-style expansion ratio read from
/// the back face towards the heated surface: width(surface)/width(back). So
/// stretch < 1 refines the surface, and stretch = 1 is uniform.
inline Grid build_grid(std::size_t n_cells, double thickness, double stretch) {
  if (n_cells < 2) throw InvalidArgument("build_grid: need at least 2 cells");
  if (!(thickness > 0.0)) throw InvalidArgument("build_grid: thickness must be positive");
  if (!(stretch > 0.0)) throw InvalidArgument("build_grid: stretch must be positive");

  const double q = std::pow(stretch, 1.0 / static_cast<double>(n_cells - 1));
  // widths from the back: w, wq, ..., wq^{n-1}
  std::vector<double> from_back(n_cells);
  double sum = 0.0;
  for (std::size_t i = 0; i < n_cells; ++i) {
    from_back[i] = std::pow(q, static_cast<double>(i));
    sum += from_back[i];
  }
  Grid g;
  g.cell_widths.resize(n_cells);
  for (std::size_t i = 0; i < n_cells; ++i) g.cell_widths[i] = thickness * from_back[n_cells - 1 - i] / sum;
  g.node_positions.resize(n_cells);
  double x = 0.0;
  for (std::size_t i = 0; i < n_cells; ++i) {
    g.node_positions[i] = x + 0.5 * g.cell_widths[i];
    x += g.cell_widths[i];
  }
  return g;
}

inline double conductivity(double T, double chi, const MaterialParams& p) {
  const double T3 = T * T * T;
  return (1.0 - chi) * (p.k0_v + p.k3_v * T3) + chi * (p.k0_c + p.k3_c * T3);
}

/// Exact update of d(xi_j)/dt = A_j exp(-E_j/T) (1 - xi_j) over dt at frozen T.
inline std::array<double, 3> advance_decomposition(const std::array<double, 3>& xi, double T, double dt,
                                                   const MaterialParams& p) {
  std::array<double, 3> out{};
  for (std::size_t j = 0; j < 3; ++j) {
    const double rate = std::exp(p.logA[j] - p.Ea_over_R[j] / T);
    // 1 - (1 - xi) exp(-rate dt), written with expm1 to keep small increments exact
    const double next = xi[j] - (1.0 - xi[j]) * std::expm1(-rate * dt);
    out[j] = std::clamp(std::max(next, xi[j]), 0.0, 1.0);
  }
  return out;
}

inline double char_fraction(const std::array<double, 3>& xi, const MaterialParams& p) {
  return p.phase_weights[0] * xi[0] + p.phase_weights[1] * xi[1] + p.phase_weights[2] * xi[2];
}

/// Piecewise-linear boundary history.
struct TimeSeries {
  std::vector<double> times;
  std::vector<double> values;

  double at(double t) const { return interp_linear(times, values, t); }

  /// Exact mean of the piecewise-linear series over [t0, t1].
  double mean_over(double t0, double t1) const {
    if (!(t1 > t0)) return at(t0);
    double integral = 0.0;
    double prev_t = t0;
    double prev_v = at(t0);
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] <= t0) continue;
      if (times[i] >= t1) break;
      integral += 0.5 * (times[i] - prev_t) * (values[i] + prev_v);
      prev_t = times[i];
      prev_v = values[i];
    }
    integral += 0.5 * (t1 - prev_t) * (at(t1) + prev_v);
    return integral / (t1 - t0);
  }
};

enum class SurfaceBcKind { Temperature, HeatFlux };
enum class BackBcKind { Adiabatic, FixedTemperature };

struct Scenario {
  std::string name = "scenario";
  double thickness = 0.03175;  // m
  double duration = 60.0;      // s
  double dt = 0.1;             // s
  std::size_t output_every = 1;
  SurfaceBcKind surface_kind = SurfaceBcKind::HeatFlux;
  TimeSeries surface_bc;  // K or W/m^2 depending on surface_kind
  BackBcKind back_kind = BackBcKind::Adiabatic;
  double back_temperature = 290.0;
  double initial_temperature = 290.0;
  std::vector<double> tc_depths_mm;  // measured from the back substructure
  std::vector<std::string> tc_labels;

  std::size_t n_steps() const { return static_cast<std::size_t>(std::ceil(duration / dt - 1e-9)); }

  std::vector<double> tc_depths_from_surface() const {
    std::vector<double> out;
    out.reserve(tc_depths_mm.size());
    for (double d : tc_depths_mm) out.push_back(thickness - d * 1e-3);
    return out;
  }

  std::string tc_label(std::size_t i) const {
    return i < tc_labels.size() ? tc_labels[i] : "TC" + std::to_string(i + 1);
  }

  void validate() const {
    if (!(thickness > 0.0)) throw InvalidArgument("scenario '" + name + "': thickness must be positive");
    if (!(dt > 0.0)) throw InvalidArgument("scenario '" + name + "': dt must be positive");
    if (!(duration >= dt)) throw InvalidArgument("scenario '" + name + "': duration must be >= dt");
    if (output_every == 0) throw InvalidArgument("scenario '" + name + "': output_every must be >= 1");
    if (!(initial_temperature > 0.0)) throw InvalidArgument("scenario '" + name + "': initial temperature must be positive");
    if (surface_bc.times.empty() || surface_bc.times.size() != surface_bc.values.size())
      throw InvalidArgument("scenario '" + name + "': surface boundary series is empty or ragged");
    for (std::size_t i = 1; i < surface_bc.times.size(); ++i)
      if (!(surface_bc.times[i] > surface_bc.times[i - 1]))
        throw InvalidArgument("scenario '" + name + "': surface boundary times must increase");
    if (surface_bc.times.front() > 0.0 || surface_bc.times.back() < duration)
      throw InvalidArgument("scenario '" + name + "': surface boundary series must cover [0, duration]");
    for (double d : tc_depths_mm)
      if (d < 0.0 || d * 1e-3 > thickness)
        throw OutOfRange("scenario '" + name + "': thermocouple depth " + std::to_string(d) + " mm outside material");
    if (!tc_labels.empty() && tc_labels.size() != tc_depths_mm.size())
      throw InvalidArgument("scenario '" + name + "': tc_labels and tc_depths_mm differ in length");
  }
};

struct TemperatureField {
  std::vector<double> times;
  std::vector<double> node_positions;
  std::vector<double> temperatures;   // row-major n_times x n_nodes
  std::vector<double> char_fraction;  // same layout

  std::size_t n_times() const { return times.size(); }
  std::size_t n_nodes() const { return node_positions.size(); }
  double T(std::size_t it, std::size_t node) const { return temperatures[it * n_nodes() + node]; }
  double chi(std::size_t it, std::size_t node) const { return char_fraction[it * n_nodes() + node]; }

  std::vector<double> node_series(std::size_t node) const {
    std::vector<double> out(n_times());
    for (std::size_t it = 0; it < n_times(); ++it) out[it] = T(it, node);
    return out;
  }

  void write_csv(std::ostream& os) const {
    os << "time";
    for (std::size_t j = 0; j < n_nodes(); ++j) os << ",node_" << j;
    os << '\n';
    char buf[32];
    for (std::size_t it = 0; it < n_times(); ++it) {
      std::snprintf(buf, sizeof buf, "%.17g", times[it]);
      os << buf;
      for (std::size_t j = 0; j < n_nodes(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", T(it, j));
        os << ',' << buf;
      }
      os << '\n';
    }
  }
};

struct TCProfile {
  std::string label;
  std::vector<double> times;
  std::vector<double> values;  // K
  double depth = 0.0;          // m from heated surface

  std::size_t size() const { return times.size(); }
};

namespace detail {

/// Thomas algorithm; sub[0] and sup[n-1] unused. Overwrites diag and rhs.
inline void solve_tridiagonal(std::span<const double> sub, std::span<double> diag, std::span<const double> sup,
                              std::span<double> rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = sub[i] / diag[i - 1];
    diag[i] -= m * sup[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
}

}  // namespace detail

inline constexpr std::size_t kMaxPicardSweeps = 50;
inline constexpr double kPicardTolerance = 1e-8;  // K, sweep-to-sweep max change

/// Backward-Euler solve of rho_cp dT/dt = d/dx(k dT/dx). Decomposition is
/// advanced with the start-of-step temperature, then the conductivity is
/// Picard-lagged until successive sweeps agree to kPicardTolerance.
inline TemperatureField solve(const Scenario& scenario, const MaterialParams& params, const Grid& grid) {
  scenario.validate();
  params.validate();
  const std::size_t n = grid.n_cells();
  if (n < 2) throw InvalidArgument("solve: grid needs at least 2 cells");
  if (std::abs(grid.thickness() - scenario.thickness) > 1e-9 * scenario.thickness)
    throw InvalidArgument("solve: grid thickness does not match scenario thickness");

  const std::size_t n_steps = scenario.n_steps();
  TemperatureField field;
  field.node_positions = grid.node_positions;
  const std::size_t n_out = n_steps / scenario.output_every + 1 + (n_steps % scenario.output_every ? 1 : 0);
  field.times.reserve(n_out);
  field.temperatures.reserve(n_out * n);
  field.char_fraction.reserve(n_out * n);

  std::vector<double> T(n, scenario.initial_temperature);
  std::vector<std::array<double, 3>> xi(n, std::array<double, 3>{0.0, 0.0, 0.0});
  std::vector<double> chi(n, 0.0);

  auto store = [&](double t) {
    field.times.push_back(t);
    field.temperatures.insert(field.temperatures.end(), T.begin(), T.end());
    field.char_fraction.insert(field.char_fraction.end(), chi.begin(), chi.end());
  };
  store(0.0);

  std::vector<double> cap(n);
  for (std::size_t i = 0; i < n; ++i) cap[i] = params.rho_cp * grid.cell_widths[i];

  std::vector<double> k(n), G(n + 1), sub(n), diag(n), sup(n), rhs(n), iterate(n);

  for (std::size_t step = 1; step <= n_steps; ++step) {
    const double t0 = static_cast<double>(step - 1) * scenario.dt;
    const double t1 = std::min(static_cast<double>(step) * scenario.dt, scenario.duration);
    const double h = t1 - t0;

    for (std::size_t i = 0; i < n; ++i) {
      xi[i] = advance_decomposition(xi[i], T[i], h, params);
      chi[i] = char_fraction(xi[i], params);
    }

    const bool flux_bc = scenario.surface_kind == SurfaceBcKind::HeatFlux;
    const double q_surface = flux_bc ? scenario.surface_bc.mean_over(t0, t1) : 0.0;
    const double T_surface = flux_bc ? 0.0 : scenario.surface_bc.at(t1);
    const bool fixed_back = scenario.back_kind == BackBcKind::FixedTemperature;

    iterate = T;
    bool converged = false;
    for (std::size_t sweep = 1; sweep <= kMaxPicardSweeps; ++sweep) {
      for (std::size_t i = 0; i < n; ++i) k[i] = conductivity(iterate[i], chi[i], params);
      // face conductances; G[0] surface face, G[n] back face
      G[0] = flux_bc ? 0.0 : k[0] / (0.5 * grid.cell_widths[0]);
      for (std::size_t f = 1; f < n; ++f)
        G[f] = 1.0 / (0.5 * grid.cell_widths[f - 1] / k[f - 1] + 0.5 * grid.cell_widths[f] / k[f]);
      G[n] = fixed_back ? k[n - 1] / (0.5 * grid.cell_widths[n - 1]) : 0.0;

      for (std::size_t i = 0; i < n; ++i) {
        sub[i] = -G[i];
        sup[i] = -G[i + 1];
        diag[i] = cap[i] / h + G[i] + G[i + 1];
        rhs[i] = cap[i] / h * T[i];
      }
      if (flux_bc)
        rhs[0] += q_surface;
      else
        rhs[0] += G[0] * T_surface;
      if (fixed_back) rhs[n - 1] += G[n] * scenario.back_temperature;

      detail::solve_tridiagonal(sub, diag, sup, rhs);

      double change = 0.0;
      for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(rhs[i] - iterate[i]));
      iterate.swap(rhs);
      if (sweep >= 2 && change < kPicardTolerance) {
        converged = true;
        break;
      }
    }
    if (!converged) throw SolverDivergence("Picard iteration did not converge", step);
    T.swap(iterate);
    for (double v : T)
      if (!(v > 0.0)) throw SolverDivergence("non-positive temperature", step);

    if (step % scenario.output_every == 0 || step == n_steps) store(t1);
  }
  return field;
}

/// Linear interpolation in depth between bracketing cell centres. Depths
/// between a boundary face and the outermost centre take that centre's value.
inline std::vector<TCProfile> extract_thermocouples(const TemperatureField& field, const Scenario& scenario) {
  const auto depths = scenario.tc_depths_from_surface();
  const auto& x = field.node_positions;
  std::vector<TCProfile> out;
  out.reserve(depths.size());
  for (std::size_t c = 0; c < depths.size(); ++c) {
    const double d = depths[c];
    if (d < -1e-12 || d > scenario.thickness * (1.0 + 1e-12))
      throw OutOfRange("thermocouple depth " + std::to_string(d) + " m outside grid");
    TCProfile prof;
    prof.label = scenario.tc_label(c);
    prof.depth = d;
    prof.times = field.times;
    prof.values.resize(field.n_times());

    std::size_t lo = 0, hi = 0;
    double t = 0.0;
    if (d <= x.front()) {
      lo = hi = 0;
    } else if (d >= x.back()) {
      lo = hi = x.size() - 1;
    } else {
      hi = static_cast<std::size_t>(std::lower_bound(x.begin(), x.end(), d) - x.begin());
      if (x[hi] == d) {
        lo = hi;
      } else {
        lo = hi - 1;
        t = (d - x[lo]) / (x[hi] - x[lo]);
      }
    }
    for (std::size_t it = 0; it < field.n_times(); ++it) {
      const double a = field.T(it, lo);
      prof.values[it] = lo == hi ? a : a + t * (field.T(it, hi) - a);
    }
    out.push_back(std::move(prof));
  }
  return out;
}

/// Scenario + grid + nominal material bound together; maps the named
/// uncertain inputs to thermocouple histories.
class ScenarioModel {
 public:
  ScenarioModel(Scenario scenario, Grid grid, MaterialParams nominal, std::vector<std::string> input_names)
      : scenario_(std::move(scenario)),
        grid_(std::move(grid)),
        nominal_(nominal),
        names_(std::move(input_names)) {
    scenario_.validate();
    nominal_.validate();
    for (const auto& nm : names_) (void)nominal_.get(nm);
  }

  const Scenario& scenario() const { return scenario_; }
  const Grid& grid() const { return grid_; }
  const MaterialParams& nominal() const { return nominal_; }
  const std::vector<std::string>& input_names() const { return names_; }

  MaterialParams material(std::span<const double> theta) const { return nominal_.with(names_, theta); }

  TemperatureField field(std::span<const double> theta) const { return solve(scenario_, material(theta), grid_); }

  std::vector<TCProfile> operator()(std::span<const double> theta) const {
    return extract_thermocouples(field(theta), scenario_);
  }

 private:
  Scenario scenario_;
  Grid grid_;
  MaterialParams nominal_;
  std::vector<std::string> names_;
};

/// Trapezoidal flux pulse: ramp up, hold, ramp down, then zero to `duration`.
inline TimeSeries trapezoid_pulse(double peak, double ramp_up, double hold, double ramp_down, double duration) {
  TimeSeries s;
  const double t1 = ramp_up, t2 = ramp_up + hold, t3 = ramp_up + hold + ramp_down;
  s.times = {0.0, t1, t2, t3};
  s.values = {0.0, peak, peak, 0.0};
  if (duration > t3) {
    s.times.push_back(duration);
    s.values.push_back(0.0);
  }
  return s;
}

}  // namespace ndx
