#include <doctest.h>

#include <cmath>

#include "flowrecon/errors.hpp"
#include "flowrecon/hilbert.hpp"
#include "support.hpp"

using namespace flowrecon;

namespace {

const Domain& domain() {
  static const Domain d = build_domain(testsupport::coarse_config());
  return d;
}

const GramOperator& gu() {
  static const GramOperator g = assemble_gram(domain(), SpaceTag::VelocityH1);
  return g;
}

}  // namespace

TEST_CASE("constant velocity field") {
  const Domain& d = domain();
  const double cx = 1.5, cy = -0.5;
  const Eigen::VectorXd u = testsupport::sample_velocity(d, [&](double, double) { return std::array{cx, cy}; });
  CHECK(gu().inner(u, u) == doctest::Approx((cx * cx + cy * cy) * d.area()).epsilon(1e-12));
}

TEST_CASE("linear velocity field against exact cell integrals") {
  for (int refine : {1, 2}) {
    DomainConfig c = testsupport::straight_config(60 * refine, 10 * refine);
    const Domain d = build_domain(c);
    const GramOperator g = assemble_gram(d, SpaceTag::VelocityH1);
    const Eigen::VectorXd u = testsupport::sample_velocity(d, [](double x, double) { return std::array{x, 0.0}; });
    double exact = 0.0;
    for (int cell = 0; cell < d.cell_count(); ++cell) {
      const auto [i, j] = d.cell_ij(cell);
      const double x0 = i * d.hx(), x1 = (i + 1) * d.hx();
      exact += d.hy() * (x1 * x1 * x1 - x0 * x0 * x0) / 3.0;
    }
    exact += d.area();
    const double rel = std::abs(g.inner(u, u) - exact) / exact;
    CHECK(rel < 2.0 * d.hx() * d.hx());
  }
}

TEST_CASE("product space blocks") {
  const Domain& d = domain();
  const GramOperator gp = assemble_gram(d, SpaceTag::ProductUxP);
  const GramOperator gq = assemble_gram(d, SpaceTag::PressureL2);
  CHECK(gp.dimension() == d.velocity_count() + d.cell_count());
  CHECK(gq.dimension() == d.cell_count());
  const Eigen::VectorXd u = testsupport::random_vector(d.velocity_count(), 1);
  const Eigen::VectorXd p = testsupport::random_vector(d.cell_count(), 2);
  const Field up = make_product(u, Eigen::VectorXd::Zero(d.cell_count()));
  CHECK(norm(gp, up) == doctest::Approx(gu().norm(u)).epsilon(1e-12));
  const Field both = make_product(u, p);
  CHECK(norm(gp, both) * norm(gp, both) ==
        doctest::Approx(gu().inner(u, u) + gq.inner(p, p)).epsilon(1e-12));
  CHECK(gq.inner(p, p) == doctest::Approx(d.cell_area() * p.squaredNorm()).epsilon(1e-12));
  CHECK(velocity_block(d, both) == u);
  CHECK(pressure_block(d, both) == p);
}

TEST_CASE("inner products are symmetric and positive") {
  const Domain& d = domain();
  for (SpaceTag tag : {SpaceTag::VelocityH1, SpaceTag::PressureL2, SpaceTag::ProductUxP}) {
    const GramOperator g = assemble_gram(d, tag);
    CHECK(g.tag() == tag);
    CHECK(g.symmetry_residual() <= 1e-14);
    for (int r = 0; r < 100; ++r) {
      const Field a{testsupport::random_vector(g.dimension(), 2 * r + 1), tag};
      const Field b{testsupport::random_vector(g.dimension(), 2 * r + 2), tag};
      const double ab = inner(g, a, b);
      CHECK(ab == doctest::Approx(inner(g, b, a)).epsilon(1e-12));
      CHECK(std::abs(ab) <= norm(g, a) * norm(g, b) * (1.0 + 1e-12));
      CHECK(inner(g, a, a) > 0.0);
    }
    const Field zero{Eigen::VectorXd::Zero(g.dimension()), tag};
    CHECK(inner(g, zero, zero) == 0.0);
  }
}

TEST_CASE("tag mismatch") {
  const Domain& d = domain();
  const Field a{Eigen::VectorXd::Ones(d.velocity_count()), SpaceTag::VelocityH1};
  const Field p{Eigen::VectorXd::Ones(d.cell_count()), SpaceTag::PressureL2};
  CHECK_THROWS_AS(inner(gu(), a, p), TagMismatch);
  CHECK_THROWS_AS(norm(gu(), p), TagMismatch);
  CHECK(space_tag_from_string(to_string(SpaceTag::ProductUxP)) == SpaceTag::ProductUxP);
}

TEST_CASE("factorization helpers") {
  const Eigen::MatrixXd x = testsupport::random_matrix(gu().dimension(), 3, 5);
  const Eigen::MatrixXd lx = gu().factor_apply(x);
  const Eigen::MatrixXd gram = x.transpose() * gu().apply(x);
  CHECK((lx.transpose() * lx - gram).norm() <= 1e-10 * gram.norm());
  const Eigen::VectorXd b = testsupport::random_vector(gu().dimension(), 6);
  CHECK((gu().apply(gu().solve(b)) - b).norm() <= 1e-10 * b.norm());
}

TEST_CASE("orthogonal projection") {
  const Domain& d = domain();
  const Eigen::MatrixXd raw = testsupport::random_matrix(d.velocity_count(), 5, 11);
  const OrthonormalBasis basis{g_orthonormalize(raw, gu()), SpaceTag::VelocityH1};
  REQUIRE(basis.size() == 5);
  CHECK(orthonormality_defect(basis, gu()) <= 1e-12);

  const Eigen::VectorXd coeff = testsupport::random_vector(5, 12);
  const Field in{basis.vectors * coeff, SpaceTag::VelocityH1};
  const Field pin = project_subspace(basis, gu(), in);
  CHECK((pin.coeffs - in.coeffs).norm() <= 1e-10 * in.coeffs.norm());

  Eigen::VectorXd x = testsupport::random_vector(d.velocity_count(), 13);
  for (int k = 0; k < 5; ++k) x -= gu().inner(basis.vectors.col(k), x) * basis.vectors.col(k);
  const Field perp{x, SpaceTag::VelocityH1};
  CHECK(gu().norm(project_subspace(basis, gu(), perp).coeffs) <= 1e-10 * gu().norm(x));

  const Field r{testsupport::random_vector(d.velocity_count(), 14), SpaceTag::VelocityH1};
  const Field pr = project_subspace(basis, gu(), r);
  const Field ppr = project_subspace(basis, gu(), pr);
  CHECK((ppr.coeffs - pr.coeffs).norm() <= 1e-10 * pr.coeffs.norm());
  const double lhs = gu().inner(r.coeffs - pr.coeffs, r.coeffs - pr.coeffs);
  const double rhs = gu().inner(r.coeffs, r.coeffs) - gu().inner(pr.coeffs, pr.coeffs);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));

  OrthonormalBasis bad = basis;
  bad.vectors.col(0) *= 2.0;
  CHECK_THROWS_AS(project_subspace(bad, gu(), r), BasisNotOrthonormal);
}

TEST_CASE("Gram-Schmidt drops dependent columns") {
  const Domain& d = domain();
  Eigen::MatrixXd raw = testsupport::random_matrix(d.velocity_count(), 3, 21);
  Eigen::MatrixXd with_dup(raw.rows(), 4);
  with_dup << raw, raw.col(0) + 2.0 * raw.col(2);
  const Eigen::MatrixXd q = g_orthonormalize(with_dup, gu());
  CHECK(q.cols() == 3);
}
