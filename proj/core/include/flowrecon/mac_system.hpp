#pragma once

// Staggered-grid momentum operator and the monolithic velocity/pressure
// saddle-point system built from it.

#include <array>
#include <memory>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

#include "flowrecon/geometry.hpp"

namespace flowrecon {

/// Coefficients of the linearized momentum equation
///   mass_coeff * |CV| u + rho * conv(advecting; u) + mu * visc(u) + grad p = rhs.
struct MomentumTerms {
  double mass_coeff = 0.0;
  double rho = 0.0;
  double mu = 1.0;
  const Eigen::VectorXd* advecting = nullptr;  // nullptr: no convection
};

/// Momentum stencil for every velocity unknown (rows exist for boundary
/// unknowns too; the solver only uses rows of free unknowns).
class MomentumOperator {
 public:
  explicit MomentumOperator(const Domain& domain);

  const Domain& domain() const { return *domain_; }

  /// Calls emit(col, coeff) for every coefficient of row k (velocity columns only).
  template <class Emit>
  void row(int k, const MomentumTerms& terms, Emit&& emit) const;

  /// Row-wise operator applied to a full velocity vector (no pressure, no mass term
  /// unless terms.mass_coeff != 0).
  Eigen::VectorXd apply(const MomentumTerms& terms, const Eigen::VectorXd& u) const;

  /// Full discrete divergence D (cells x velocity unknowns), entries +-face length.
  const Eigen::SparseMatrix<double>& divergence() const { return div_; }

 private:
  struct ConvFace {
    int nbr = -1;
    std::array<int, 2> adv{-1, -1};
    std::array<double, 2> adv_w{0.0, 0.0};
    double sign = 1.0;
  };
  struct Adjacent {
    int nbr;
    double weight;
  };

  const Domain* domain_;
  std::vector<std::vector<Adjacent>> visc_;
  std::vector<double> ghost_;
  std::vector<std::array<ConvFace, 4>> conv_;
  Eigen::SparseMatrix<double> div_;
};

template <class Emit>
void MomentumOperator::row(int k, const MomentumTerms& terms, Emit&& emit) const {
  const auto ku = static_cast<std::size_t>(k);
  double diag = terms.mass_coeff * domain_->dof(k).volume;
  for (const Adjacent& a : visc_[ku]) {
    diag += terms.mu * a.weight;
    emit(a.nbr, -terms.mu * a.weight);
  }
  diag += terms.mu * ghost_[ku];
  if (terms.advecting != nullptr && terms.rho != 0.0) {
    const Eigen::VectorXd& adv = *terms.advecting;
    for (const ConvFace& f : conv_[ku]) {
      double flux = 0.0;
      for (int q = 0; q < 2; ++q) {
        if (f.adv[q] >= 0) flux += f.adv_w[q] * adv[f.adv[q]];
      }
      flux *= f.sign * terms.rho;
      if (flux > 0.0) {
        diag += flux;
      } else if (f.nbr >= 0) {
        emit(f.nbr, flux);
      }
      if (f.nbr >= 0 && flux > 0.0) emit(f.nbr, 0.0);  // keep the sparsity pattern fixed
    }
  }
  emit(k, diag);
}

/// Which velocity unknowns carry Dirichlet data, and the outlet pressures
/// applied on free (natural) outlet unknowns.
struct BoundarySetup {
  std::vector<char> fixed;
  std::array<double, 2> outlet_pressure{0.0, 0.0};
};

/// Monolithic system [A  -D^T; -D  0] over free velocities and all pressures.
/// The sparsity pattern is analysed once. Successive solves precondition
/// BiCGSTAB with the last LU factorization and refactorize only when the
/// iteration count exceeds max_reuse_iterations (0 disables reuse).
class SaddleSystem {
 public:
  SaddleSystem(const MomentumOperator& op, std::vector<char> fixed, int max_reuse_iterations = 6);

  struct Solution {
    Eigen::VectorXd u;  // full velocity vector (fixed entries copied from data)
    Eigen::VectorXd p;
  };

  /// rhs_mass multiplies |CV| * u_old in the right-hand side (usually mass_coeff).
  /// Natural outlet unknowns of outlet k see the pressure
  /// outlet_pressure[k] + outlet_resistance[k] * (outflux of outlet k).
  Solution solve(const MomentumTerms& terms, const Eigen::VectorXd& fixed_values, const Eigen::VectorXd& u_old,
                 double rhs_mass, const std::array<double, 2>& outlet_pressure,
                 const std::array<double, 2>& outlet_resistance = {0.0, 0.0});

  int free_count() const { return n_free_; }
  int factorization_count() const { return factorizations_; }

 private:
  using LU = Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>;
  struct StaleLU {
    const LU* lu = nullptr;
    template <class M>
    StaleLU& analyzePattern(const M&) { return *this; }
    template <class M>
    StaleLU& factorize(const M&) { return *this; }
    template <class M>
    StaleLU& compute(const M&) { return *this; }
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return lu->solve(b); }
    Eigen::ComputationInfo info() const { return Eigen::Success; }
  };
  void refactorize(const Eigen::SparseMatrix<double>& a);

  const MomentumOperator* op_;
  std::vector<char> fixed_;
  std::vector<int> free_id_;
  std::vector<int> free_dofs_;
  std::array<std::vector<int>, 2> outlet_faces_;
  int n_free_ = 0;
  int max_reuse_iterations_;
  int factorizations_ = 0;
  bool analysed_ = false;
  bool factored_ = false;
  LU lu_;
};

}  // namespace flowrecon
