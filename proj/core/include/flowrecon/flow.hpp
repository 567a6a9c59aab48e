#pragma once

// Forward model: semi-implicit incompressible Navier-Stokes on the staggered
// grid with a Dirichlet pulsatile inlet and explicit three-element Windkessel
// outlets. Produces the snapshots of the solution manifold.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "flowrecon/geometry.hpp"

namespace flowrecon {

/// Parameter vector y = (t, HR, s, T_sys, u0, eta) plus fluid constants.
struct FlowParams {
  double t = 0.0;       // s, time within the cardiac cycle
  double HR = 60.0;     // beats/min
  double s = 0.0;       // inlet asymmetry
  double T_sys = 0.3;   // s
  double u0 = 18.0;     // cm/s
  double eta = 1.0;     // R_d^1 / R_d^2
  double rho = 1.0;     // g/cm^3
  double mu = 0.03;     // Poise

  double period() const { return 60.0 / HR; }
  std::array<double, 6> y() const { return {t, HR, s, T_sys, u0, eta}; }
  /// Throws DomainError if any entry leaves its admissible range.
  void validate() const;

  nlohmann::json to_json() const;
  static FlowParams from_json(const nlohmann::json& j);
};

/// Sampling box for the unobserved parameters and the heart rate.
struct ParameterRanges {
  std::array<double, 2> HR{48.0, 120.0};
  std::array<double, 2> s{0.0, 0.2};
  std::array<double, 2> T_sys{0.2863, 0.3182};
  std::array<double, 2> u0{17.0, 20.0};
  std::array<double, 2> eta{0.5, 1.5};

  nlohmann::json to_json() const;
  static ParameterRanges from_json(const nlohmann::json& j);
};

struct WindkesselParams {
  double C_d = 1.6e-5;
  double R_p = 7501.5;
  double R_d = 60012.0;
};

struct WindkesselState {
  std::array<double, 2> p_d{1.06e5, 1.06e5};
  std::array<WindkesselParams, 2> params{};
};

struct WindkesselUpdate {
  WindkesselState state;
  std::array<double, 2> outlet_pressure{};
};

/// Explicit distal-pressure update p_d' = p_d (1 - dt/(R_d C_d)) + dt/C_d * Q and
/// outlet pressure p_o = p_d' + R_p Q. Throws StabilityError if dt >= R_d C_d.
WindkesselUpdate windkessel_step(const WindkesselState& state, const std::array<double, 2>& flux, double dt);

/// Diastolic baseline of the inflow waveform.
inline constexpr double kInletBaseline = 0.2;

/// Normalized inflow waveform, periodic with period 60/HR, g in [g_base, 1].
double inlet_profile_g(double t, double HR, double T_sys, double g_base = kInletBaseline);

/// Logit-normal cross-section profile normalized to unit peak. Throws
/// DomainError for xi outside (0,1).
double inlet_profile_f(double xi, double s);

struct SolverConfig {
  double dt = 2e-3;               // upper bound; adjusted so a cycle holds a whole number of steps
  int snapshots_per_cycle = 20;
  WindkesselParams outlet{};       // R_d here is R_d^1; R_d^2 = R_d^1 / eta
  double p_d0 = 1.06e5;
  double g_base = kInletBaseline;
  double blowup = 1e6;
  double cfl_limit = 1.0;

  nlohmann::json to_json() const;
  static SolverConfig from_json(const nlohmann::json& j);
};

struct Snapshot {
  Eigen::VectorXd u;   // staggered velocity, cm/s
  Eigen::VectorXd p;   // cell pressures, dyn/cm^2
  FlowParams y;
  int cycle_index = 0;
  int trajectory = 0;
  double divergence_norm = 0.0;
  double inlet_flux = 0.0;
  std::array<double, 2> outlet_flux{};
  std::array<double, 2> outlet_pressure{};
};

/// Time step actually used for a given period (a whole number of steps per
/// cycle, a multiple of snapshots_per_cycle).
double effective_dt(const SolverConfig& cfg, double period);

/// Runs n_cycles cardiac cycles from rest and returns the snapshots of the
/// last cycle (snapshots_per_cycle of them, uniformly spaced in t).
std::vector<Snapshot> solve_unsteady(const FlowParams& y, const Domain& domain, const SolverConfig& cfg, int n_cycles);

/// Same as solve_unsteady but returns every time step of the last cycle.
std::vector<Snapshot> solve_unsteady_all_steps(const FlowParams& y, const Domain& domain, const SolverConfig& cfg,
                                               int n_cycles);

/// Steady Navier-Stokes with a constant inlet u0 * f(xi; s) and fixed outlet
/// pressures, by Picard iteration.
Snapshot solve_steady(const FlowParams& y, const Domain& domain, const std::array<double, 2>& outlet_pressure,
                      double tol = 1e-11, int max_iter = 500);

// Diagnostics on a velocity vector.
double inlet_flux(const Domain& domain, const Eigen::VectorXd& u);
std::array<double, 2> outlet_fluxes(const Domain& domain, const Eigen::VectorXd& u);
/// Cell divergences (D u)_c / |cell|.
Eigen::VectorXd cell_divergence(const Domain& domain, const Eigen::VectorXd& u);
/// L^2 norm of the cell divergence.
double divergence_norm(const Domain& domain, const Eigen::VectorXd& u);

struct Manifold {
  std::vector<Snapshot> snapshots;
  std::vector<FlowParams> trajectories;  // one draw per trajectory, t = 0
  std::string provenance;                // hash of domain + solver configuration
};

/// Draws `count` parameter vectors uniformly, runs two cycles for each and
/// keeps the second cycle. Deterministic in `seed` regardless of `workers`.
Manifold sample_manifold(const ParameterRanges& ranges, int count, std::uint64_t seed, const Domain& domain,
                         const SolverConfig& cfg, int workers = 1);

}  // namespace flowrecon
