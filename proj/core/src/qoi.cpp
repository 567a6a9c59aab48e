#include "flowrecon/qoi.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

#include "flowrecon/errors.hpp"
#include "flowrecon/flow.hpp"

namespace flowrecon {

Eigen::MatrixXd pressure_drop_functional(const Domain& d) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, d.cell_count());
  const double in = d.measure(BoundaryLabel::Inlet);
  const std::array<double, 2> out{d.measure(BoundaryLabel::Outlet1), d.measure(BoundaryLabel::Outlet2)};
  for (const auto& f : d.boundary()) {
    if (f.label == BoundaryLabel::Wall) continue;
    const int inner = d.cell_index(f.ci - static_cast<int>(f.normal.x), f.cj - static_cast<int>(f.normal.y));
    Eigen::VectorXd face = Eigen::VectorXd::Zero(d.cell_count());
    if (inner >= 0) {
      face[f.cell] = 1.5;
      face[inner] = -0.5;
    } else {
      face[f.cell] = 1.0;
    }
    if (f.label == BoundaryLabel::Inlet) {
      w.row(0) += f.length / in * face.transpose();
      w.row(1) += f.length / in * face.transpose();
    } else {
      const int i = f.label == BoundaryLabel::Outlet1 ? 0 : 1;
      w.row(i) -= f.length / out[static_cast<std::size_t>(i)] * face.transpose();
    }
  }
  return w;
}

std::array<double, 2> pressure_drop(const Eigen::VectorXd& p, const Domain& d) {
  if (p.size() != d.cell_count()) throw TagMismatch("pressure vector length does not match the cell count");
  const Eigen::Vector2d dp = pressure_drop_functional(d) * p;
  return {dp[0], dp[1]};
}

std::array<double, 2> pressure_drop(const Field& p, const Domain& d) {
  if (p.tag == SpaceTag::VelocityH1) throw TagMismatch("pressure drop needs a pressure field");
  return pressure_drop(pressure_block(d, p), d);
}

namespace {

// kappa from the probe Gram S_psi, the cross products B = V^T G Psi and the
// functional values d = dp(Psi), all in probe coordinates.
KappaResult kappa_core(const Eigen::MatrixXd& s_psi, const Eigen::MatrixXd& b, const Eigen::VectorXd& d) {
  KappaResult out;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s_psi + s_psi.transpose()));
  const Eigen::Index n = s_psi.rows();
  const double top = n > 0 ? es.eigenvalues()[n - 1] : 0.0;
  int r = 0;
  while (r < n && top > 0.0 && es.eigenvalues()[n - 1 - r] > 1e-12 * top) ++r;
  out.probes = r;
  if (r == 0) return out;
  Eigen::MatrixXd t(n, r);
  for (int i = 0; i < r; ++i) t.col(i) = es.eigenvectors().col(n - 1 - i) / std::sqrt(es.eigenvalues()[n - 1 - i]);

  const Eigen::MatrixXd bt = b * t;
  Eigen::MatrixXd m = t.transpose() * s_psi * t - bt.transpose() * bt;
  m = 0.5 * (m + m.transpose()).eval();
  const Eigen::VectorXd dt = t.transpose() * d;
  if (dt.cwiseAbs().maxCoeff() == 0.0) return out;

  const double trace = m.trace();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  if (!(em.eigenvalues()[0] > 1e-12 * trace)) {
    m.diagonal().array() += 1e-12 * std::abs(trace);
    out.regularized = true;
  }
  const Eigen::MatrixXd q = dt * dt.transpose();
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(q, m, Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
  if (ges.info() != Eigen::Success) throw SingularM("generalized eigenproblem failed: M is numerically singular");
  out.kappa = std::sqrt(std::max(0.0, ges.eigenvalues().maxCoeff()));
  return out;
}

}  // namespace

KappaResult kappa_estimate(const OrthonormalBasis& vn, const ObservationSpace& w, const GramOperator& g,
                           const Eigen::MatrixXd& probes, const Eigen::VectorXd& dp) {
  if (vn.tag != g.tag() || w.tag() != g.tag()) throw TagMismatch("kappa inputs live in different spaces");
  if (probes.cols() <= vn.size()) throw ConfigError("kappa needs more probes than reduced dimensions");
  Eigen::MatrixXd psi = probes;
  const Eigen::MatrixXd l = w.measure(probes);
  for (Eigen::Index c = 0; c < psi.cols(); ++c) psi.col(c) -= w.from_measurements(l.col(c));
  const Eigen::MatrixXd gpsi = g.apply(psi);
  return kappa_core(psi.transpose() * gpsi, vn.vectors.transpose() * gpsi, psi.transpose() * dp);
}

KappaResult kappa_estimate(const Eigen::MatrixXd& modes, const ObservationSpace& w, const TrainingSet& ts,
                           const std::vector<int>& probe_ids, const Eigen::VectorXd& dp) {
  if (static_cast<Eigen::Index>(probe_ids.size()) <= modes.cols())
    throw ConfigError("kappa needs more probes than reduced dimensions");
  const auto np = static_cast<Eigen::Index>(probe_ids.size());
  Eigen::MatrixXd s(np, np), cw(ts.Cw.rows(), np), gx(ts.GX.rows(), np);
  Eigen::VectorXd d(np);
  for (Eigen::Index a = 0; a < np; ++a) {
    const int ia = probe_ids[static_cast<std::size_t>(a)];
    for (Eigen::Index b = 0; b < np; ++b) s(a, b) = ts.S(ia, probe_ids[static_cast<std::size_t>(b)]);
    cw.col(a) = ts.Cw.col(ia);
    gx.col(a) = ts.GX.col(ia);
    // dp(P_W phi) = 0: representers carry no pressure
    d[a] = dp.dot(ts.X.col(ia));
  }
  const Eigen::MatrixXd av = w.whiten(w.measure(modes));
  const Eigen::MatrixXd s_psi = s - cw.transpose() * cw;
  const Eigen::MatrixXd b = modes.transpose() * gx - av.transpose() * cw;
  return kappa_core(s_psi, b, d);
}

double dp_error_bound(double kappa, double eps_n) { return 2.0 * kappa * eps_n; }

StokesTestFields stokes_test_fields(const Domain& d) {
  const MomentumOperator op(d);
  StokesTestFields tf;
  for (int i = 0; i < 2; ++i) {
    const FaceKind free_outlet = i == 0 ? FaceKind::Outlet1 : FaceKind::Outlet2;
    std::vector<char> fixed(static_cast<std::size_t>(d.velocity_count()), 0);
    Eigen::VectorXd values = Eigen::VectorXd::Zero(d.velocity_count());
    for (int k = 0; k < d.velocity_count(); ++k) {
      const FaceKind kind = d.dof(k).kind;
      if (kind == FaceKind::Interior || kind == free_outlet) continue;
      fixed[static_cast<std::size_t>(k)] = 1;
      if (kind == FaceKind::Inlet) values[k] = 1.0;
    }
    SaddleSystem sys(op, fixed, 0);
    const MomentumTerms terms{0.0, 0.0, 1.0, nullptr};
    tf.v[static_cast<std::size_t>(i)] = sys.solve(terms, values, values, 0.0, {0.0, 0.0}).u;
  }
  for (int i = 0; i < 2; ++i) {
    const auto q = outlet_fluxes(d, tf.v[static_cast<std::size_t>(i)]);
    tf.F(i, 0) = q[0];
    tf.F(i, 1) = q[1];
    tf.inlet_flux[static_cast<std::size_t>(i)] = inlet_flux(d, tf.v[static_cast<std::size_t>(i)]);
  }
  return tf;
}

std::vector<std::array<double, 2>> vw_pressure_drop(const Domain& d, const std::vector<Eigen::VectorXd>& u_traj,
                                                    const StokesTestFields& tf, double rho, double mu, double dt) {
  if (u_traj.empty()) return {};
  for (int i = 0; i < 2; ++i) {
    if (!(std::abs(tf.F(i, i)) > 0.0)) throw SingularF("virtual-works flux matrix has a zero diagonal entry");
  }
  const MomentumOperator op(d);
  auto spatial = [&](const Eigen::VectorXd& u) { return op.apply(MomentumTerms{0.0, rho, mu, &u}, u); };
  // Inlet unknowns carry Dirichlet data and no momentum equation; summing the
  // equations of the remaining unknowns against v_i leaves the inlet cell
  // pressures as the inlet boundary term.
  Eigen::VectorXd equation = Eigen::VectorXd::Ones(d.velocity_count());
  for (int k = 0; k < d.velocity_count(); ++k) {
    if (d.dof(k).kind == FaceKind::Inlet) equation[k] = 0.0;
  }
  auto drop = [&](const Eigen::VectorXd& residual) {
    std::array<double, 2> out{};
    for (std::size_t i = 0; i < 2; ++i) {
      const double h = -tf.v[i].cwiseProduct(equation).dot(residual);
      out[i] = -h / tf.F(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    }
    return out;
  };
  std::vector<std::array<double, 2>> result;
  if (u_traj.size() == 1) {
    result.push_back(drop(spatial(u_traj[0])));
    return result;
  }
  if (!(dt > 0.0)) throw ConfigError("virtual works needs dt > 0");
  Eigen::VectorXd vol(d.velocity_count());
  for (int k = 0; k < d.velocity_count(); ++k) vol[k] = d.dof(k).volume;
  Eigen::VectorXd prev = spatial(u_traj[0]);
  for (std::size_t n = 1; n < u_traj.size(); ++n) {
    const Eigen::VectorXd next = spatial(u_traj[n]);
    const Eigen::VectorXd inertia = (rho / dt) * vol.cwiseProduct(u_traj[n] - u_traj[n - 1]);
    result.push_back(drop(inertia + 0.5 * (prev + next)));
    prev = next;
  }
  return result;
}

VorticityOperator::VorticityOperator(const Domain& d) : weight_(d.cell_area()) {
  std::vector<Eigen::Triplet<double>> trip;
  int row = 0;
  for (int j = 0; j <= d.ny(); ++j) {
    for (int i = 0; i <= d.nx(); ++i) {
      const int vr = d.uy_index(i, j), vl = d.uy_index(i - 1, j);
      const int ut = d.ux_index(i, j), ub = d.ux_index(i, j - 1);
      if (vr < 0 || vl < 0 || ut < 0 || ub < 0) continue;
      trip.emplace_back(row, vr, 1.0 / d.hx());
      trip.emplace_back(row, vl, -1.0 / d.hx());
      trip.emplace_back(row, ut, -1.0 / d.hy());
      trip.emplace_back(row, ub, 1.0 / d.hy());
      points_.push_back({i * d.hx(), j * d.hy()});
      ++row;
    }
  }
  curl_.resize(row, d.velocity_count());
  curl_.setFromTriplets(trip.begin(), trip.end());
}

VorticityField VorticityOperator::apply(const Eigen::VectorXd& u) const {
  VorticityField f;
  f.values = curl_ * u;
  f.points = points_;
  f.weight = weight_;
  return f;
}

double VorticityOperator::operator_norm(const GramOperator& g, int iterations) const {
  if (g.tag() != SpaceTag::VelocityH1) throw TagMismatch("operator norm is taken against the velocity H1 norm");
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  Eigen::VectorXd x(curl_.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::VectorXd cx = curl_ * x;
    lambda = weight_ * cx.squaredNorm() / g.inner(x, x);
    x = g.solve(Eigen::VectorXd(weight_ * (curl_.transpose() * cx)));
    x /= g.norm(x);
  }
  const Eigen::VectorXd cx = curl_ * x;
  lambda = std::max(lambda, weight_ * cx.squaredNorm() / g.inner(x, x));
  return std::sqrt(lambda);
}

VorticityField vorticity(const Eigen::VectorXd& u, const Domain& domain) { return VorticityOperator(domain).apply(u); }

std::vector<double> time_relative_errors(const std::vector<double>& err_sq, const std::vector<double>& ref_sq) {
  if (err_sq.size() != ref_sq.size()) throw ConfigError("error and reference series differ in length");
  std::vector<double> out(err_sq.size(), 0.0);
  if (ref_sq.empty()) return out;
  const double mean = std::accumulate(ref_sq.begin(), ref_sq.end(), 0.0) / static_cast<double>(ref_sq.size());
  for (std::size_t k = 0; k < err_sq.size(); ++k) {
    out[k] = mean > 0.0 ? std::sqrt(err_sq[k] / mean) : (err_sq[k] > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  }
  return out;
}

Vec2 WallTrace::mean() const {
  Vec2 m;
  double total = 0.0;
  for (std::size_t f = 0; f < s.size(); ++f) {
    m.x += s[f].x * length[f];
    m.y += s[f].y * length[f];
    total += length[f];
  }
  if (total > 0.0) {
    m.x /= total;
    m.y /= total;
  }
  return m;
}

WallTrace wss(const Eigen::VectorXd& u, const Domain& d, double mu) {
  if (u.size() != d.velocity_count()) throw TagMismatch("velocity vector length does not match the domain");
  WallTrace out;
  auto tangential = [&](int ci, int cj, bool horizontal_face, const Vec2& t) {
    if (horizontal_face) return t.x * 0.5 * (u[d.ux_index(ci, cj)] + u[d.ux_index(ci + 1, cj)]);
    return t.y * 0.5 * (u[d.uy_index(ci, cj)] + u[d.uy_index(ci, cj + 1)]);
  };
  for (const auto& f : d.boundary()) {
    if (f.label != BoundaryLabel::Wall) continue;
    const bool horizontal = f.normal.x == 0.0;
    const Vec2 t{-f.normal.y, f.normal.x};
    const double h = horizontal ? d.hy() : d.hx();
    const int ni = f.ci - static_cast<int>(f.normal.x), nj = f.cj - static_cast<int>(f.normal.y);
    const double u1 = tangential(f.ci, f.cj, horizontal, t);
    double slope = 0.0;
    if (d.active(ni, nj)) {
      // quadratic through 0 at the wall, u1 at h/2 and u2 at 3h/2
      const double u2 = tangential(ni, nj, horizontal, t);
      slope = (9.0 * u1 - u2) / (3.0 * h);
    } else {
      slope = 2.0 * u1 / h;
    }
    out.s.push_back({-mu * slope * t.x, -mu * slope * t.y});
    out.length.push_back(f.length);
  }
  return out;
}

WssEstimator::WssEstimator(const Domain& d) : domain_(&d) {
  for (const auto& f : d.boundary()) {
    if (f.label != BoundaryLabel::Wall) continue;
    wall_cells_.push_back(f.cell);
    wall_length_.push_back(f.length);
  }
  const int n = d.cell_count();
  std::vector<Eigen::Triplet<double>> trip;
  for (int c = 0; c < n; ++c) {
    const auto [i, j] = d.cell_ij(c);
    const int nb[2] = {d.cell_index(i + 1, j), d.cell_index(i, j + 1)};
    const double w[2] = {d.hy() / d.hx(), d.hx() / d.hy()};
    for (int q = 0; q < 2; ++q) {
      if (nb[q] < 0) continue;
      trip.emplace_back(c, c, w[q]);
      trip.emplace_back(nb[q], nb[q], w[q]);
      trip.emplace_back(c, nb[q], -w[q]);
      trip.emplace_back(nb[q], c, -w[q]);
    }
  }
  // pin the first cell to remove the constant null space
  pinned_ = 0;
  trip.emplace_back(pinned_, pinned_, 1.0);
  std::vector<Eigen::Triplet<double>> kept;
  for (const auto& t : trip) {
    if ((t.row() == pinned_) != (t.col() == pinned_)) continue;
    if (t.row() == pinned_ && t.col() == pinned_ && t.value() != 1.0) continue;
    kept.push_back(t);
  }
  lap_.resize(n, n);
  lap_.setFromTriplets(kept.begin(), kept.end());
  solver_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(lap_);
  if (solver_->info() != Eigen::Success) throw LinSolveError("Neumann Laplacian factorization failed");
}

std::array<Eigen::VectorXd, 2> WssEstimator::neumann_solve(const std::vector<Vec2>& lambda) const {
  if (lambda.size() != wall_cells_.size()) throw ConfigError("one data value per wall face is required");
  const int n = domain_->cell_count();
  std::array<Eigen::VectorXd, 2> out;
  for (int comp = 0; comp < 2; ++comp) {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    double total = 0.0, scale = 0.0;
    for (std::size_t f = 0; f < lambda.size(); ++f) {
      const double v = (comp == 0 ? lambda[f].x : lambda[f].y) * wall_length_[f];
      b[wall_cells_[f]] += v;
      total += v;
      scale += std::abs(v);
    }
    if (std::abs(total) > 1e-8 * std::max(scale, 1e-300) && std::abs(total) > 1e-300) {
      throw NullspaceError("Neumann data does not have zero mean");
    }
    b[pinned_] = 0.0;
    Eigen::VectorXd phi = solver_->solve(b);
    if (solver_->info() != Eigen::Success || !phi.allFinite()) throw LinSolveError("Neumann solve failed");
    phi.array() -= phi.mean();
    out[static_cast<std::size_t>(comp)] = phi;
  }
  return out;
}

double WssEstimator::trace_norm(const std::array<Eigen::VectorXd, 2>& phi) const {
  double s = 0.0;
  for (std::size_t f = 0; f < wall_cells_.size(); ++f) {
    const int c = wall_cells_[f];
    s += wall_length_[f] * (phi[0][c] * phi[0][c] + phi[1][c] * phi[1][c]);
  }
  return std::sqrt(s);
}

double WssEstimator::error(const Eigen::VectorXd& u, const Eigen::VectorXd& u_star, double mu) const {
  const WallTrace su = wss(u, *domain_, mu), ss = wss(u_star, *domain_, mu);
  const Vec2 mu_bar = su.mean(), ms_bar = ss.mean();
  std::vector<Vec2> l1(su.s.size()), l2(su.s.size());
  for (std::size_t f = 0; f < su.s.size(); ++f) {
    l1[f] = {su.s[f].x - ss.s[f].x - (mu_bar.x - ms_bar.x), su.s[f].y - ss.s[f].y - (mu_bar.y - ms_bar.y)};
    l2[f] = {su.s[f].x - mu_bar.x, su.s[f].y - mu_bar.y};
  }
  const double num = trace_norm(neumann_solve(l1)) + std::hypot(mu_bar.x - ms_bar.x, mu_bar.y - ms_bar.y);
  const double den = trace_norm(neumann_solve(l2)) + std::hypot(mu_bar.x, mu_bar.y);
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

double wss_error(const Eigen::VectorXd& u, const Eigen::VectorXd& u_star, const Domain& domain, double mu) {
  return WssEstimator(domain).error(u, u_star, mu);
}

HelmholtzProjector::HelmholtzProjector(const Domain& d) : domain_(&d) {
  std::vector<Eigen::Triplet<double>> g, dv;
  for (int k = 0; k < d.velocity_count(); ++k) {
    const VelocityDof& v = d.dof(k);
    const double len = v.horizontal_face ? d.hx() : d.hy();
    const double h = v.horizontal_face ? d.hy() : d.hx();
    if (v.cell_minus >= 0) dv.emplace_back(v.cell_minus, k, len);
    if (v.cell_plus >= 0) dv.emplace_back(v.cell_plus, k, -len);
    if (v.kind == FaceKind::Interior) {
      g.emplace_back(k, v.cell_plus, 1.0 / h);
      g.emplace_back(k, v.cell_minus, -1.0 / h);
    } else if (v.kind == FaceKind::Inlet) {
      // phi = 0 on the inlet face, half a cell away from the centre
      g.emplace_back(k, v.cell_plus, 2.0 / h);
    }
  }
  grad_.resize(d.velocity_count(), d.cell_count());
  grad_.setFromTriplets(g.begin(), g.end());
  div_.resize(d.cell_count(), d.velocity_count());
  div_.setFromTriplets(dv.begin(), dv.end());
  const Eigen::SparseMatrix<double> neg_lap = -(div_ * grad_);
  solver_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(neg_lap);
  if (solver_->info() != Eigen::Success) throw LinSolveError("Helmholtz Laplacian factorization failed");
}

Eigen::VectorXd HelmholtzProjector::apply(const Eigen::VectorXd& u) const {
  if (u.size() != domain_->velocity_count()) throw TagMismatch("velocity vector length does not match the domain");
  const Eigen::VectorXd phi = solver_->solve(Eigen::VectorXd(div_ * u));
  if (solver_->info() != Eigen::Success || !phi.allFinite()) throw LinSolveError("Helmholtz solve failed");
  return u + grad_ * phi;
}

Field helmholtz_project(const Field& u_star, const Domain& domain) {
  if (u_star.tag == SpaceTag::PressureL2) throw TagMismatch("Helmholtz projection acts on velocity fields");
  Field out = u_star;
  const HelmholtzProjector proj(domain);
  out.coeffs.head(domain.velocity_count()) = proj.apply(velocity_block(domain, u_star));
  return out;
}

nlohmann::json QoIReport::to_json() const {
  return {{"dp_mmHg", {dp_mmHg[0], dp_mmHg[1]}},
          {"kappa", {kappa[0], kappa[1]}},
          {"vort_err", vort_err},
          {"wss_err", wss_err},
          {"div_before", div_before},
          {"div_after", div_after}};
}

}  // namespace flowrecon
