#include "flowrecon/hilbert.hpp"

#include <cmath>

#include "flowrecon/errors.hpp"
#include "flowrecon/stencils.hpp"

namespace flowrecon {

std::string to_string(SpaceTag tag) {
  switch (tag) {
    case SpaceTag::VelocityH1: return "velocity_h1";
    case SpaceTag::PressureL2: return "pressure_l2";
    case SpaceTag::ProductUxP: return "product_uxp";
  }
  return "?";
}

SpaceTag space_tag_from_string(const std::string& s) {
  if (s == "velocity_h1") return SpaceTag::VelocityH1;
  if (s == "pressure_l2") return SpaceTag::PressureL2;
  if (s == "product_uxp") return SpaceTag::ProductUxP;
  throw ConfigError("unknown space tag '" + s + "'");
}

int space_dimension(const Domain& domain, SpaceTag tag) {
  switch (tag) {
    case SpaceTag::VelocityH1: return domain.velocity_count();
    case SpaceTag::PressureL2: return domain.cell_count();
    case SpaceTag::ProductUxP: return domain.velocity_count() + domain.cell_count();
  }
  return 0;
}

Field make_product(const Eigen::VectorXd& u, const Eigen::VectorXd& p) {
  Field f;
  f.tag = SpaceTag::ProductUxP;
  f.coeffs.resize(u.size() + p.size());
  f.coeffs << u, p;
  return f;
}

Eigen::VectorXd velocity_block(const Domain& domain, const Field& f) {
  if (f.tag == SpaceTag::PressureL2) throw TagMismatch("pressure field has no velocity block");
  return f.coeffs.head(domain.velocity_count());
}

Eigen::VectorXd pressure_block(const Domain& domain, const Field& f) {
  if (f.tag == SpaceTag::VelocityH1) throw TagMismatch("velocity field has no pressure block");
  if (f.tag == SpaceTag::PressureL2) return f.coeffs;
  return f.coeffs.tail(domain.cell_count());
}

GramOperator::GramOperator(SparseMatrix matrix, SpaceTag tag)
    : matrix_(std::move(matrix)), tag_(tag), chol_(std::make_shared<Eigen::SimplicialLLT<SparseMatrix>>()) {
  matrix_.makeCompressed();
  chol_->compute(matrix_);
  if (chol_->info() != Eigen::Success) throw LinSolveError("Gram matrix is not positive definite");
}

Eigen::VectorXd GramOperator::solve(const Eigen::VectorXd& b) const {
  Eigen::VectorXd x = chol_->solve(b);
  if (chol_->info() != Eigen::Success) throw LinSolveError("Gram solve failed");
  return x;
}

Eigen::MatrixXd GramOperator::solve(const Eigen::MatrixXd& b) const {
  Eigen::MatrixXd x = chol_->solve(b);
  if (chol_->info() != Eigen::Success) throw LinSolveError("Gram solve failed");
  return x;
}

Eigen::MatrixXd GramOperator::factor_apply(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd px = chol_->permutationP() * x;
  return chol_->matrixU() * px;
}

double GramOperator::norm(const Eigen::VectorXd& a) const { return std::sqrt(std::max(0.0, inner(a, a))); }

double GramOperator::symmetry_residual() const {
  const SparseMatrix t = matrix_.transpose();
  const SparseMatrix diff = matrix_ - t;
  return diff.norm() / matrix_.norm();
}

namespace {

SparseMatrix velocity_gram(const Domain& d) {
  const int n = d.velocity_count();
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < n; ++k) trip.emplace_back(k, k, d.dof(k).volume);
  for (const auto& e : viscous_stencil(d).edges) {
    trip.emplace_back(e.a, e.a, e.weight);
    trip.emplace_back(e.b, e.b, e.weight);
    trip.emplace_back(e.a, e.b, -e.weight);
    trip.emplace_back(e.b, e.a, -e.weight);
  }
  SparseMatrix g(n, n);
  g.setFromTriplets(trip.begin(), trip.end());
  return g;
}

SparseMatrix pressure_gram(const Domain& d) {
  const int n = d.cell_count();
  SparseMatrix g(n, n);
  g.reserve(Eigen::VectorXi::Constant(n, 1));
  for (int c = 0; c < n; ++c) g.insert(c, c) = d.cell_area();
  return g;
}

}  // namespace

GramOperator assemble_gram(const Domain& domain, SpaceTag tag) {
  switch (tag) {
    case SpaceTag::VelocityH1: return GramOperator(velocity_gram(domain), tag);
    case SpaceTag::PressureL2: return GramOperator(pressure_gram(domain), tag);
    case SpaceTag::ProductUxP: {
      const SparseMatrix gu = velocity_gram(domain);
      const SparseMatrix gp = pressure_gram(domain);
      const int nu = static_cast<int>(gu.rows()), np = static_cast<int>(gp.rows());
      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(static_cast<std::size_t>(gu.nonZeros() + gp.nonZeros()));
      for (int k = 0; k < gu.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(gu, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
      for (int k = 0; k < gp.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(gp, k); it; ++it) trip.emplace_back(nu + it.row(), nu + it.col(), it.value());
      SparseMatrix g(nu + np, nu + np);
      g.setFromTriplets(trip.begin(), trip.end());
      return GramOperator(std::move(g), tag);
    }
  }
  throw ConfigError("unknown space tag");
}

double inner(const GramOperator& g, const Field& a, const Field& b) {
  if (a.tag != g.tag() || b.tag != g.tag()) throw TagMismatch("field tags do not match the Gram operator");
  if (a.coeffs.size() != g.dimension() || b.coeffs.size() != g.dimension())
    throw TagMismatch("field length does not match the Gram dimension");
  return g.inner(a.coeffs, b.coeffs);
}

double norm(const GramOperator& g, const Field& a) { return std::sqrt(std::max(0.0, inner(g, a, a))); }

double orthonormality_defect(const OrthonormalBasis& basis, const GramOperator& g) {
  if (basis.size() == 0) return 0.0;
  const Eigen::MatrixXd gram = basis.vectors.transpose() * g.apply(basis.vectors);
  return (gram - Eigen::MatrixXd::Identity(basis.size(), basis.size())).cwiseAbs().maxCoeff();
}

Field project_subspace(const OrthonormalBasis& basis, const GramOperator& g, const Field& x) {
  if (basis.tag != g.tag() || x.tag != g.tag()) throw TagMismatch("basis/field tag does not match the Gram operator");
  if (orthonormality_defect(basis, g) > 1e-10) throw BasisNotOrthonormal("basis is not G-orthonormal to 1e-10");
  Field out;
  out.tag = x.tag;
  const Eigen::VectorXd c = basis.vectors.transpose() * g.apply(x.coeffs);
  out.coeffs = basis.vectors * c;
  return out;
}

Eigen::MatrixXd g_orthonormalize(const Eigen::MatrixXd& vectors, const GramOperator& g, double drop_tol) {
  Eigen::MatrixXd q(vectors.rows(), vectors.cols());
  Eigen::MatrixXd gq(vectors.rows(), vectors.cols());
  int kept = 0;
  for (int c = 0; c < vectors.cols(); ++c) {
    Eigen::VectorXd v = vectors.col(c);
    const double n0 = g.norm(v);
    if (n0 == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      for (int k = 0; k < kept; ++k) v -= gq.col(k).dot(v) * q.col(k);
    }
    Eigen::VectorXd gv = g.apply(v);
    const double n1 = std::sqrt(std::max(0.0, v.dot(gv)));
    if (n1 <= drop_tol * n0) continue;
    q.col(kept) = v / n1;
    gq.col(kept) = gv / n1;
    ++kept;
  }
  return q.leftCols(kept);
}

}  // namespace flowrecon
