#pragma once

// Online reconstruction: linear PBDW, its piecewise version over a trained
// partition, and the least-squares estimators used with noisy data.

#include <array>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "flowrecon/hilbert.hpp"
#include "flowrecon/observation.hpp"
#include "flowrecon/reduced_models.hpp"

namespace flowrecon {

inline constexpr double kBetaFloor = 1e-12;

struct ReconstructionResult {
  Field u_star;
  Eigen::VectorXd v_star_coeffs;
  std::array<int, 2> cell_used{0, 0};
  int n_used = 0;
  double beta_used = 0.0;
  double residual = 0.0;  // ||omega - P_W v*||
  double bound = std::numeric_limits<double>::quiet_NaN();  // eps_n / beta when eps_n is known
};

/// Offline factorization for one pair (V_n, W_m): C = l(V_n), A = R^{-T} C
/// (coordinates of P_W V_n in an orthonormal basis of W) and its QR.
class PbdwOperator {
 public:
  PbdwOperator(const OrthonormalBasis& vn, const ObservationSpace& w, double beta_floor = kBetaFloor);

  int n() const { return static_cast<int>(modes_.cols()); }
  double beta() const { return beta_; }
  const Eigen::MatrixXd& observation_matrix() const { return c_; }

  /// argmin_{c} ||P_W(u - V c)|| from the measurement vector l = l(u).
  Eigen::VectorXd v_star(const Eigen::VectorXd& l) const;
  /// u* = V c* + P_W u - P_W V c*.
  ReconstructionResult reconstruct(const Eigen::VectorXd& l) const;

 private:
  const ObservationSpace* w_;
  Eigen::MatrixXd modes_;
  SpaceTag tag_;
  Eigen::MatrixXd c_;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr_;
  double beta_ = 0.0;
};

/// Throws IllConditioned when beta(V_n, W) <= 1e-12.
Eigen::VectorXd pbdw_v_star(const Eigen::VectorXd& l, const OrthonormalBasis& vn, const ObservationSpace& w);
/// omega must lie in W (it is only used through its measurements).
Eigen::VectorXd pbdw_v_star(const Field& omega, const OrthonormalBasis& vn, const ObservationSpace& w);
ReconstructionResult pbdw_reconstruct(const Field& omega, const OrthonormalBasis& vn, const ObservationSpace& w);

/// Dispatches to the cell containing y_obs and reconstructs with its basis
/// truncated at n* (or at n_override when positive). OutOfRange outside the grid.
ReconstructionResult piecewise_reconstruct(const Eigen::VectorXd& l, const ObservedParams& y_obs,
                                           const PartitionGrid& grid, const ObservationSpace& w, int n_override = 0);

/// Ordinary least squares min_c ||z - C c|| with C = l(V_n). RankDeficient if
/// C has rank < n, ConfigError if n > m.
Eigen::VectorXd ls_unconstrained(const Eigen::VectorXd& z, const Eigen::MatrixXd& c);

struct ConstrainedLsInfo {
  int iterations = 0;
  double projected_gradient = 0.0;
  int active = 0;
  bool unconstrained_feasible = false;
};

/// Box-constrained least squares |c_j| <= bounds[j]: returns the unconstrained
/// solution when it is feasible, otherwise projected gradient with
/// Barzilai-Borwein steps plus active-set subspace refinement. Throws
/// SolverFail after max_iter iterations.
Eigen::VectorXd ls_constrained(const Eigen::VectorXd& z, const Eigen::MatrixXd& c, const Eigen::VectorXd& bounds,
                               ConstrainedLsInfo* info = nullptr, int max_iter = 5000, double tol = 1e-10);

/// eps_n / beta; ZeroBeta when beta <= 0.
double error_bound(double beta, double eps_n);

}  // namespace flowrecon
