#include "flowrecon/flow.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "flowrecon/errors.hpp"
#include "flowrecon/mac_system.hpp"

namespace flowrecon {

void FlowParams::validate() const {
  auto check = [](double v, double lo, double hi, const char* name) {
    if (!(v >= lo && v <= hi)) {
      std::ostringstream os;
      os << name << " = " << v << " outside [" << lo << ", " << hi << "]";
      throw DomainError(os.str());
    }
  };
  check(HR, 48.0, 120.0, "HR");
  check(s, 0.0, 0.2, "s");
  check(T_sys, 0.2863, 0.3182, "T_sys");
  check(u0, 17.0, 20.0, "u0");
  check(eta, 0.5, 1.5, "eta");
  check(t, 0.0, period(), "t");
  if (!(rho > 0.0) || !(mu > 0.0)) throw DomainError("rho and mu must be positive");
}

nlohmann::json FlowParams::to_json() const {
  return {{"t", t}, {"HR", HR}, {"s", s}, {"T_sys", T_sys}, {"u0", u0}, {"eta", eta}, {"rho", rho}, {"mu", mu}};
}

FlowParams FlowParams::from_json(const nlohmann::json& j) {
  FlowParams y;
  y.t = j.value("t", y.t);
  y.HR = j.value("HR", y.HR);
  y.s = j.value("s", y.s);
  y.T_sys = j.value("T_sys", y.T_sys);
  y.u0 = j.value("u0", y.u0);
  y.eta = j.value("eta", y.eta);
  y.rho = j.value("rho", y.rho);
  y.mu = j.value("mu", y.mu);
  return y;
}

nlohmann::json ParameterRanges::to_json() const {
  return {{"HR", HR}, {"s", s}, {"T_sys", T_sys}, {"u0", u0}, {"eta", eta}};
}

ParameterRanges ParameterRanges::from_json(const nlohmann::json& j) {
  ParameterRanges r;
  auto get = [&](const char* key, std::array<double, 2>& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::array<double, 2>>();
    if (!(dst[0] <= dst[1])) throw ConfigError(std::string("range '") + key + "' has lo > hi");
  };
  get("HR", r.HR);
  get("s", r.s);
  get("T_sys", r.T_sys);
  get("u0", r.u0);
  get("eta", r.eta);
  return r;
}

nlohmann::json SolverConfig::to_json() const {
  return {{"dt", dt},
          {"snapshots_per_cycle", snapshots_per_cycle},
          {"C_d", outlet.C_d},
          {"R_p", outlet.R_p},
          {"R_d", outlet.R_d},
          {"p_d0", p_d0},
          {"g_base", g_base},
          {"blowup", blowup},
          {"cfl_limit", cfl_limit}};
}

SolverConfig SolverConfig::from_json(const nlohmann::json& j) {
  SolverConfig c;
  c.dt = j.value("dt", c.dt);
  c.snapshots_per_cycle = j.value("snapshots_per_cycle", c.snapshots_per_cycle);
  c.outlet.C_d = j.value("C_d", c.outlet.C_d);
  c.outlet.R_p = j.value("R_p", c.outlet.R_p);
  c.outlet.R_d = j.value("R_d", c.outlet.R_d);
  c.p_d0 = j.value("p_d0", c.p_d0);
  c.g_base = j.value("g_base", c.g_base);
  c.blowup = j.value("blowup", c.blowup);
  c.cfl_limit = j.value("cfl_limit", c.cfl_limit);
  if (!(c.dt > 0.0) || c.snapshots_per_cycle < 1) throw ConfigError("solver dt must be > 0 and snapshots_per_cycle >= 1");
  return c;
}

WindkesselUpdate windkessel_step(const WindkesselState& state, const std::array<double, 2>& flux, double dt) {
  if (!(dt > 0.0)) throw StabilityError("Windkessel time step must be positive");
  WindkesselUpdate out;
  out.state = state;
  for (std::size_t k = 0; k < 2; ++k) {
    const WindkesselParams& w = state.params[k];
    if (!(w.C_d > 0.0 && w.R_p >= 0.0 && w.R_d > 0.0)) throw ConfigError("Windkessel parameters must be positive");
    const double tau = w.R_d * w.C_d;
    if (dt >= tau) throw StabilityError("explicit Windkessel update requires dt < R_d C_d");
    out.state.p_d[k] = state.p_d[k] * (1.0 - dt / tau) + dt / w.C_d * flux[k];
    out.outlet_pressure[k] = out.state.p_d[k] + w.R_p * flux[k];
  }
  return out;
}

double inlet_profile_g(double t, double HR, double T_sys, double g_base) {
  const double period = 60.0 / HR;
  double tc = std::fmod(t, period);
  if (tc < 0.0) tc += period;
  if (tc < T_sys) {
    const double s = std::sin(std::numbers::pi * tc / T_sys);
    return g_base + (1.0 - g_base) * s * s;
  }
  return g_base;
}

namespace {

double logit_normal_raw(double xi, double s) {
  const double l = std::log(xi / (1.0 - xi)) - s;
  return std::exp(-0.5 * l * l) / (xi * (1.0 - xi));
}

// The log-derivative vanishes where logit(xi) - s + 1 - 2 xi = 0, which is
// strictly increasing in xi.
double logit_normal_mode(double s) {
  double lo = 1e-12, hi = 1.0 - 1e-12;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double h = std::log(mid / (1.0 - mid)) - s + 1.0 - 2.0 * mid;
    (h < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double inlet_profile_f(double xi, double s) {
  if (!(xi > 0.0 && xi < 1.0)) throw DomainError("inlet coordinate must lie in (0,1)");
  return logit_normal_raw(xi, s) / logit_normal_raw(logit_normal_mode(s), s);
}

double effective_dt(const SolverConfig& cfg, double period) {
  const int S = cfg.snapshots_per_cycle;
  const int per_snap = std::max(1, static_cast<int>(std::ceil(period / (cfg.dt * S) - 1e-9)));
  return period / (static_cast<double>(per_snap) * S);
}

double inlet_flux(const Domain& d, const Eigen::VectorXd& u) {
  double q = 0.0;
  for (const auto& f : d.boundary()) {
    if (f.label == BoundaryLabel::Inlet) q += u[f.velocity_dof] * f.normal.x * f.length;
  }
  return q;
}

std::array<double, 2> outlet_fluxes(const Domain& d, const Eigen::VectorXd& u) {
  std::array<double, 2> q{0.0, 0.0};
  for (const auto& f : d.boundary()) {
    if (f.label == BoundaryLabel::Outlet1) q[0] += u[f.velocity_dof] * f.normal.x * f.length;
    if (f.label == BoundaryLabel::Outlet2) q[1] += u[f.velocity_dof] * f.normal.x * f.length;
  }
  return q;
}

Eigen::VectorXd cell_divergence(const Domain& d, const Eigen::VectorXd& u) {
  Eigen::VectorXd div = Eigen::VectorXd::Zero(d.cell_count());
  for (int k = 0; k < d.velocity_count(); ++k) {
    const VelocityDof& v = d.dof(k);
    const double len = v.horizontal_face ? d.hx() : d.hy();
    if (v.cell_minus >= 0) div[v.cell_minus] += len * u[k];
    if (v.cell_plus >= 0) div[v.cell_plus] -= len * u[k];
  }
  return div / d.cell_area();
}

double divergence_norm(const Domain& d, const Eigen::VectorXd& u) {
  return std::sqrt(cell_divergence(d, u).squaredNorm() * d.cell_area());
}

namespace {

std::vector<char> navier_stokes_fixed_mask(const Domain& d) {
  std::vector<char> fixed(static_cast<std::size_t>(d.velocity_count()), 0);
  for (int k = 0; k < d.velocity_count(); ++k) {
    const FaceKind kind = d.dof(k).kind;
    fixed[static_cast<std::size_t>(k)] = (kind == FaceKind::Inlet || kind == FaceKind::Wall) ? 1 : 0;
  }
  return fixed;
}

// Normalized inlet coordinate of every inlet unknown; -1 elsewhere.
std::vector<double> inlet_coordinates(const Domain& d) {
  double lo = 1e300, hi = -1e300;
  for (const auto& f : d.boundary()) {
    if (f.label != BoundaryLabel::Inlet) continue;
    lo = std::min(lo, f.midpoint.y - 0.5 * f.length);
    hi = std::max(hi, f.midpoint.y + 0.5 * f.length);
  }
  std::vector<double> xi(static_cast<std::size_t>(d.velocity_count()), -1.0);
  for (const auto& f : d.boundary()) {
    if (f.label == BoundaryLabel::Inlet) xi[static_cast<std::size_t>(f.velocity_dof)] = (f.midpoint.y - lo) / (hi - lo);
  }
  return xi;
}

Eigen::VectorXd inlet_shape(const Domain& d, double s) {
  const auto xi = inlet_coordinates(d);
  Eigen::VectorXd shape = Eigen::VectorXd::Zero(d.velocity_count());
  for (int k = 0; k < d.velocity_count(); ++k) {
    if (xi[static_cast<std::size_t>(k)] >= 0.0) shape[k] = inlet_profile_f(xi[static_cast<std::size_t>(k)], s);
  }
  return shape;
}

void check_params(const FlowParams& y, const Domain& d, const SolverConfig& cfg) {
  if (!(y.rho > 0.0) || !(y.mu > 0.0)) throw DomainError("rho and mu must be positive");
  if (!(y.HR > 0.0) || !(y.T_sys > 0.0) || !(y.T_sys < y.period())) throw DomainError("need 0 < T_sys < 60/HR");
  if (y.u0 < 0.0) throw DomainError("u0 must be non-negative");
  const double cfl = y.u0 * cfg.dt / d.hx();
  if (cfl > cfg.cfl_limit) {
    std::ostringstream os;
    os << "CFL number u0*dt/h = " << cfl << " exceeds " << cfg.cfl_limit;
    throw StabilityError(os.str());
  }
}

std::vector<Snapshot> run(const FlowParams& y, const Domain& d, const SolverConfig& cfg, int n_cycles, bool all_steps) {
  if (n_cycles < 1) throw ConfigError("n_cycles must be >= 1");
  check_params(y, d, cfg);
  const double period = y.period();
  const double dt = effective_dt(cfg, period);
  const int steps_per_cycle = static_cast<int>(std::lround(period / dt));
  const int S = cfg.snapshots_per_cycle;
  const int stride = steps_per_cycle / S;
  const int total = n_cycles * steps_per_cycle;
  const int first_saved = (n_cycles - 1) * steps_per_cycle;

  MomentumOperator op(d);
  SaddleSystem system(op, navier_stokes_fixed_mask(d));
  const Eigen::VectorXd shape = inlet_shape(d, y.s);

  WindkesselState wk;
  wk.p_d = {cfg.p_d0, cfg.p_d0};
  wk.params[0] = cfg.outlet;
  wk.params[1] = cfg.outlet;
  wk.params[1].R_d = cfg.outlet.R_d / y.eta;

  Eigen::VectorXd u = Eigen::VectorXd::Zero(d.velocity_count());
  Eigen::VectorXd p = Eigen::VectorXd::Constant(d.cell_count(), cfg.p_d0);
  std::array<double, 2> p_out{cfg.p_d0, cfg.p_d0};

  std::vector<Snapshot> saved;
  auto save = [&](int step) {
    Snapshot s;
    s.u = u;
    s.p = p;
    s.y = y;
    s.y.t = (step - first_saved) * dt;
    s.cycle_index = n_cycles - 1;
    s.divergence_norm = divergence_norm(d, u);
    s.inlet_flux = inlet_flux(d, u);
    s.outlet_flux = outlet_fluxes(d, u);
    s.outlet_pressure = p_out;
    saved.push_back(std::move(s));
  };

  const double mass = y.rho / dt;
  for (int n = 0; n <= total; ++n) {
    if (n >= first_saved && n < total && (all_steps || (n - first_saved) % stride == 0)) save(n);
    if (n == total) break;
    const double t_next = (n + 1) * dt;
    const auto flux = outlet_fluxes(d, u);
    const auto wk_next = windkessel_step(wk, flux, dt);
    wk = wk_next.state;

    // distal pressure explicit, proximal resistance implicit in the new outflux
    const Eigen::VectorXd fixed_values = shape * (y.u0 * inlet_profile_g(t_next, y.HR, y.T_sys, cfg.g_base));
    const MomentumTerms terms{mass, y.rho, y.mu, &u};
    auto sol = system.solve(terms, fixed_values, u, mass, wk.p_d, {wk.params[0].R_p, wk.params[1].R_p});
    if (!sol.u.allFinite() || sol.u.cwiseAbs().maxCoeff() > cfg.blowup) {
      std::ostringstream os;
      os << "velocity blow-up at step " << n + 1 << " (t = " << t_next << " s)";
      throw StabilityError(os.str());
    }
    u = std::move(sol.u);
    p = std::move(sol.p);
    const auto q_new = outlet_fluxes(d, u);
    for (std::size_t k = 0; k < 2; ++k) p_out[k] = wk.p_d[k] + wk.params[k].R_p * q_new[k];
  }
  return saved;
}

}  // namespace

std::vector<Snapshot> solve_unsteady(const FlowParams& y, const Domain& domain, const SolverConfig& cfg, int n_cycles) {
  return run(y, domain, cfg, n_cycles, false);
}

std::vector<Snapshot> solve_unsteady_all_steps(const FlowParams& y, const Domain& domain, const SolverConfig& cfg,
                                               int n_cycles) {
  return run(y, domain, cfg, n_cycles, true);
}

Snapshot solve_steady(const FlowParams& y, const Domain& d, const std::array<double, 2>& outlet_pressure, double tol,
                      int max_iter) {
  MomentumOperator op(d);
  SaddleSystem system(op, navier_stokes_fixed_mask(d));
  const Eigen::VectorXd fixed_values = inlet_shape(d, y.s) * y.u0;

  Eigen::VectorXd u = fixed_values;
  Eigen::VectorXd p;
  double change = 1.0;
  int it = 0;
  for (; it < max_iter && change > tol; ++it) {
    const MomentumTerms terms{0.0, y.rho, y.mu, &u};
    auto sol = system.solve(terms, fixed_values, u, 0.0, outlet_pressure);
    change = (sol.u - u).norm() / std::max(sol.u.norm(), 1e-300);
    // under-relaxed Picard
    u = it == 0 ? sol.u : Eigen::VectorXd(0.5 * u + 0.5 * sol.u);
    p = std::move(sol.p);
    if (!u.allFinite()) throw StabilityError("steady Picard iteration diverged");
  }
  if (change > tol) throw LinSolveError("steady Picard iteration did not converge");
  // one unrelaxed sweep so (u, p) satisfy the discrete equations with lagged advection u
  const MomentumTerms terms{0.0, y.rho, y.mu, &u};
  auto sol = system.solve(terms, fixed_values, u, 0.0, outlet_pressure);
  Snapshot s;
  s.u = sol.u;
  s.p = sol.p;
  s.y = y;
  s.divergence_norm = divergence_norm(d, s.u);
  s.inlet_flux = inlet_flux(d, s.u);
  s.outlet_flux = outlet_fluxes(d, s.u);
  s.outlet_pressure = outlet_pressure;
  return s;
}

Manifold sample_manifold(const ParameterRanges& ranges, int count, std::uint64_t seed, const Domain& domain,
                         const SolverConfig& cfg, int workers) {
  if (count < 1) throw ConfigError("manifold count must be >= 1");
  std::mt19937_64 rng(seed);
  auto draw = [&](const std::array<double, 2>& r) {
    return r[0] + (r[1] - r[0]) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  };
  Manifold m;
  for (int r = 0; r < count; ++r) {
    FlowParams y;
    y.HR = draw(ranges.HR);
    y.s = draw(ranges.s);
    y.T_sys = draw(ranges.T_sys);
    y.u0 = draw(ranges.u0);
    y.eta = draw(ranges.eta);
    m.trajectories.push_back(y);
  }

  std::vector<std::vector<Snapshot>> results(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr error;
  auto worker = [&]() {
    for (int r = next++; r < count; r = next++) {
      try {
        auto snaps = solve_unsteady(m.trajectories[static_cast<std::size_t>(r)], domain, cfg, 2);
        for (auto& s : snaps) s.trajectory = r;
        results[static_cast<std::size_t>(r)] = std::move(snaps);
      } catch (const Error& e) {
        std::lock_guard lock(err_mutex);
        if (!error) {
          const FlowParams& y = m.trajectories[static_cast<std::size_t>(r)];
          const std::string what = std::string(e.what()) + " [trajectory " + std::to_string(r) + ", y = " + y.to_json().dump() + "]";
          try {
            if (e.numerical()) throw StabilityError(what);
            throw ConfigError(what);
          } catch (...) {
            error = std::current_exception();
          }
        }
      }
    }
  };
  const int n_workers = std::clamp(workers, 1, count);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  for (auto& traj : results) {
    for (auto& s : traj) m.snapshots.push_back(std::move(s));
  }
  nlohmann::json prov = {{"domain", domain.config_hash()}, {"solver", cfg.to_json()}, {"ranges", ranges.to_json()},
                         {"seed", seed}, {"count", count}};
  const std::string dumped = prov.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dumped) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  m.provenance = os.str();
  return m;
}

}  // namespace flowrecon
