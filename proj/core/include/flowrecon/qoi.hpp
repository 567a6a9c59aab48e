#pragma once

// Derived quantities of interest and their certificates: pressure drops (mean
// boundary pressures and virtual works), the kappa stability constant,
// vorticity, wall shear stress with its Neumann-solve error estimator, and the
// divergence-free (Helmholtz) correction.

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <nlohmann/json.hpp>

#include "flowrecon/geometry.hpp"
#include "flowrecon/hilbert.hpp"
#include "flowrecon/mac_system.hpp"
#include "flowrecon/observation.hpp"
#include "flowrecon/reduced_models.hpp"

namespace flowrecon {

inline constexpr double kDynPerMmHg = 1333.22;

/// Rows i = 0, 1: weights d_i over cell pressures such that d_i . p is the
/// inlet-mean minus outlet-i-mean pressure. Face pressures are extrapolated
/// linearly from the boundary cell and its inward neighbour.
Eigen::MatrixXd pressure_drop_functional(const Domain& domain);

/// delta p_i = mean_{Gamma_in} p - mean_{Gamma_out^i} p (pressure or product field).
std::array<double, 2> pressure_drop(const Field& p, const Domain& domain);
std::array<double, 2> pressure_drop(const Eigen::VectorXd& cell_pressure, const Domain& domain);

struct KappaResult {
  double kappa = 0.0;
  int probes = 0;          // independent probe directions actually used
  bool regularized = false;
};

/// sup over span{Psi_i} of |dp(Psi)| / dist(Psi, V_n), Psi_i = phi_i - P_W phi_i,
/// via the generalized eigenproblem Q eta = lambda M eta. `probes` are the
/// phi_i (columns), `dp` the functional as a vector over the coefficients.
KappaResult kappa_estimate(const OrthonormalBasis& vn, const ObservationSpace& w, const GramOperator& g,
                           const Eigen::MatrixXd& probes, const Eigen::VectorXd& dp);

/// Same estimate in snapshot-coefficient space: the probes are training
/// snapshots `probe_ids`, V_n is given by its coefficients in the span of
/// the training set through `modes` (explicit vectors).
KappaResult kappa_estimate(const Eigen::MatrixXd& modes, const ObservationSpace& w, const TrainingSet& ts,
                           const std::vector<int>& probe_ids, const Eigen::VectorXd& dp);

/// 2 kappa eps_n.
double dp_error_bound(double kappa, double eps_n);

struct StokesTestFields {
  std::array<Eigen::VectorXd, 2> v;  // velocity coefficient vectors
  Eigen::Matrix2d F;                 // F(i, j) = int_{Gamma_out^j} v_i . n
  std::array<double, 2> inlet_flux{};  // int_{Gamma_in} v_i . n
};

/// Stokes problems with v = (1, 0) on the inlet, zero on walls and on the other
/// outlet, natural (do-nothing, zero pressure) on outlet i.
StokesTestFields stokes_test_fields(const Domain& domain);

/// Virtual-works pressure drops. For each pair of consecutive fields the
/// momentum residual (inertia by time difference, convection and viscosity
/// averaged Crank-Nicolson style) is tested with v_i; returns delta p_i at
/// the midpoints (length N-1). A single field is treated as steady.
std::vector<std::array<double, 2>> vw_pressure_drop(const Domain& domain, const std::vector<Eigen::VectorXd>& u_traj,
                                                    const StokesTestFields& tf, double rho, double mu, double dt);

/// Vertex-centred scalar curl on vertices whose four surrounding face unknowns exist.
struct VorticityField {
  Eigen::VectorXd values;
  std::vector<Vec2> points;
  double weight = 0.0;  // quadrature weight per vertex (hx hy)
  double l2_norm() const { return std::sqrt(weight * values.squaredNorm()); }
};

class VorticityOperator {
 public:
  explicit VorticityOperator(const Domain& domain);
  VorticityField apply(const Eigen::VectorXd& u) const;
  const Eigen::SparseMatrix<double>& matrix() const { return curl_; }
  /// sup ||curl u||_{L2} / ||u||_U by power iteration.
  double operator_norm(const GramOperator& g_velocity, int iterations = 200) const;

 private:
  Eigen::SparseMatrix<double> curl_;
  std::vector<Vec2> points_;
  double weight_ = 0.0;
};

VorticityField vorticity(const Eigen::VectorXd& u, const Domain& domain);

/// Time-normalized relative errors: e_k = ||a_k - b_k|| / sqrt(mean_k ||a_k||^2).
std::vector<double> time_relative_errors(const std::vector<double>& err_sq, const std::vector<double>& ref_sq);

struct WallTrace {
  std::vector<Vec2> s;         // traction vector per wall face
  std::vector<double> length;  // face lengths
  Vec2 mean() const;
};

/// Wall shear stress 2 mu (I - n n) eps(u) n on every wall face, with the
/// wall-normal derivative of the tangential velocity from a one-sided
/// quadratic fit through the no-slip value.
WallTrace wss(const Eigen::VectorXd& u, const Domain& domain, double mu);

class WssEstimator {
 public:
  explicit WssEstimator(const Domain& domain);
  /// Zero-mean Neumann problem int grad phi : grad v = int_{Gamma_w} lambda . v;
  /// returns the cell values of both components. NullspaceError when the data
  /// does not have zero mean.
  std::array<Eigen::VectorXd, 2> neumann_solve(const std::vector<Vec2>& lambda) const;
  /// L2 norm of the wall trace of a cell field pair.
  double trace_norm(const std::array<Eigen::VectorXd, 2>& phi) const;
  /// (||Tr phi_l1|| + |S(u) - S(u*)|_mean) / (||Tr phi_l2|| + |S(u)|_mean)
  double error(const Eigen::VectorXd& u, const Eigen::VectorXd& u_star, double mu) const;

 private:
  const Domain* domain_;
  std::vector<int> wall_cells_;
  std::vector<double> wall_length_;
  int pinned_ = 0;
  Eigen::SparseMatrix<double> lap_;
  std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> solver_;
};

double wss_error(const Eigen::VectorXd& u, const Eigen::VectorXd& u_star, const Domain& domain, double mu);

/// u + grad phi with -lap phi = div u, phi = 0 on the inlet, zero Neumann elsewhere.
class HelmholtzProjector {
 public:
  explicit HelmholtzProjector(const Domain& domain);
  Eigen::VectorXd apply(const Eigen::VectorXd& u) const;

 private:
  const Domain* domain_;
  Eigen::SparseMatrix<double> grad_;  // velocity dofs x cells
  Eigen::SparseMatrix<double> div_;   // cells x velocity dofs
  std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> solver_;
};

Field helmholtz_project(const Field& u_star, const Domain& domain);

struct QoIReport {
  std::array<double, 2> dp_mmHg{};
  std::array<double, 2> kappa{};
  double vort_err = 0.0;
  double wss_err = 0.0;
  double div_before = 0.0;
  double div_after = 0.0;

  nlohmann::json to_json() const;
};

}  // namespace flowrecon
