#pragma once

// Discrete inner-product spaces: U = [H^1]^2 on the staggered velocity
// unknowns, P = L^2 on cell pressures, and the product V = U x P.

#include <memory>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "flowrecon/geometry.hpp"

namespace flowrecon {

enum class SpaceTag { VelocityH1, PressureL2, ProductUxP };

std::string to_string(SpaceTag tag);
SpaceTag space_tag_from_string(const std::string& s);

using SparseMatrix = Eigen::SparseMatrix<double>;

struct Field {
  Eigen::VectorXd coeffs;
  SpaceTag tag = SpaceTag::VelocityH1;
};

/// Unknown count of each space on a domain.
int space_dimension(const Domain& domain, SpaceTag tag);

/// Builds a product-space field (u, p).
Field make_product(const Eigen::VectorXd& u, const Eigen::VectorXd& p);
/// Velocity block of a velocity or product field.
Eigen::VectorXd velocity_block(const Domain& domain, const Field& f);
/// Pressure block of a pressure or product field.
Eigen::VectorXd pressure_block(const Domain& domain, const Field& f);

/// Sparse SPD matrix realizing one of the inner products. Immutable; holds its
/// own Cholesky factorization.
class GramOperator {
 public:
  GramOperator(SparseMatrix matrix, SpaceTag tag);

  const SparseMatrix& matrix() const { return matrix_; }
  SpaceTag tag() const { return tag_; }
  int dimension() const { return static_cast<int>(matrix_.rows()); }

  /// G x
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return matrix_ * x; }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const { return matrix_ * x; }
  /// G^{-1} b
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;

  /// L^T P x for the factorization G = P^T L L^T P, so that ||L^T P x|| = ||x||_G.
  Eigen::MatrixXd factor_apply(const Eigen::MatrixXd& x) const;

  double inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const { return a.dot(matrix_ * b); }
  double norm(const Eigen::VectorXd& a) const;

  /// ||G - G^T|| / ||G|| (Frobenius).
  double symmetry_residual() const;

 private:
  SparseMatrix matrix_;
  SpaceTag tag_;
  std::shared_ptr<Eigen::SimplicialLLT<SparseMatrix>> chol_;
};

/// VelocityH1: int u.v + grad u : grad v; PressureL2: int p q; ProductUxP: both blocks.
GramOperator assemble_gram(const Domain& domain, SpaceTag tag);

/// a^T G b. Throws TagMismatch when the tags disagree with the Gram.
double inner(const GramOperator& g, const Field& a, const Field& b);
double norm(const GramOperator& g, const Field& a);

/// Columns are G-orthonormal vectors of one space.
struct OrthonormalBasis {
  Eigen::MatrixXd vectors;
  SpaceTag tag = SpaceTag::VelocityH1;
  int size() const { return static_cast<int>(vectors.cols()); }
};

/// max |B^T G B - I|
double orthonormality_defect(const OrthonormalBasis& basis, const GramOperator& g);

/// P_B x. Throws BasisNotOrthonormal if the defect exceeds 1e-10.
Field project_subspace(const OrthonormalBasis& basis, const GramOperator& g, const Field& x);

/// Modified Gram-Schmidt (two passes) in the G inner product. Columns whose
/// residual norm falls below `drop_tol` times their original norm are dropped.
Eigen::MatrixXd g_orthonormalize(const Eigen::MatrixXd& vectors, const GramOperator& g, double drop_tol = 1e-10);

}  // namespace flowrecon
