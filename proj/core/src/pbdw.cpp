#include "flowrecon/pbdw.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "flowrecon/errors.hpp"

namespace flowrecon {

PbdwOperator::PbdwOperator(const OrthonormalBasis& vn, const ObservationSpace& w, double beta_floor)
    : w_(&w), modes_(vn.vectors), tag_(vn.tag) {
  if (vn.tag != w.tag()) throw TagMismatch("basis and observation space live in different spaces");
  if (vn.size() < 1) throw ConfigError("empty reduced basis");
  beta_ = infsup_beta(vn, w);
  if (!(beta_ > beta_floor)) {
    std::ostringstream os;
    os << "beta(V_n, W_m) = " << beta_ << " (n = " << vn.size() << ", m = " << w.size() << ") is below " << beta_floor;
    throw IllConditioned(os.str());
  }
  c_ = w.measure(modes_);
  qr_.compute(w.whiten(c_));
}

Eigen::VectorXd PbdwOperator::v_star(const Eigen::VectorXd& l) const {
  if (l.size() != w_->size()) throw ConfigError("measurement vector has the wrong length");
  return qr_.solve(w_->whiten(l));
}

ReconstructionResult PbdwOperator::reconstruct(const Eigen::VectorXd& l) const {
  ReconstructionResult r;
  r.v_star_coeffs = v_star(l);
  const Eigen::VectorXd misfit = l - c_ * r.v_star_coeffs;
  r.u_star = {modes_ * r.v_star_coeffs + w_->from_measurements(misfit), tag_};
  r.n_used = n();
  r.beta_used = beta_;
  r.residual = w_->whiten(misfit).norm();
  return r;
}

Eigen::VectorXd pbdw_v_star(const Eigen::VectorXd& l, const OrthonormalBasis& vn, const ObservationSpace& w) {
  return PbdwOperator(vn, w).v_star(l);
}

Eigen::VectorXd pbdw_v_star(const Field& omega, const OrthonormalBasis& vn, const ObservationSpace& w) {
  if (omega.tag != w.tag()) throw TagMismatch("data field does not live in the observation space");
  return pbdw_v_star(w.measure(omega.coeffs), vn, w);
}

ReconstructionResult pbdw_reconstruct(const Field& omega, const OrthonormalBasis& vn, const ObservationSpace& w) {
  if (omega.tag != w.tag()) throw TagMismatch("data field does not live in the observation space");
  return PbdwOperator(vn, w).reconstruct(w.measure(omega.coeffs));
}

ReconstructionResult piecewise_reconstruct(const Eigen::VectorXd& l, const ObservedParams& y_obs,
                                           const PartitionGrid& grid, const ObservationSpace& w, int n_override) {
  const int id = grid.cell_id(y_obs);
  const PartitionCell& cell = grid.cells[static_cast<std::size_t>(id)];
  const int n = n_override > 0 ? std::min(n_override, cell.basis.size()) : cell.curves.n_star;
  ReconstructionResult r = PbdwOperator(cell.basis.truncated(n), w).reconstruct(l);
  r.cell_used = {cell.k, cell.k_prime};
  if (n - 1 < cell.curves.eps.size()) r.bound = error_bound(r.beta_used, cell.curves.eps[n - 1]);
  return r;
}

Eigen::VectorXd ls_unconstrained(const Eigen::VectorXd& z, const Eigen::MatrixXd& c) {
  if (c.cols() > c.rows()) throw ConfigError("least squares needs n <= m");
  if (z.size() != c.rows()) throw ConfigError("data vector has the wrong length");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(c);
  qr.setThreshold(1e-12);
  if (qr.rank() < c.cols()) throw RankDeficient("observation matrix of the reduced basis is rank deficient");
  return qr.solve(z);
}

namespace {

Eigen::VectorXd clamp_box(const Eigen::VectorXd& x, const Eigen::VectorXd& b) { return x.cwiseMax(-b).cwiseMin(b); }

}  // namespace

Eigen::VectorXd ls_constrained(const Eigen::VectorXd& z, const Eigen::MatrixXd& c, const Eigen::VectorXd& bounds,
                               ConstrainedLsInfo* info, int max_iter, double tol) {
  const Eigen::Index n = c.cols();
  if (bounds.size() != n) throw ConfigError("one bound per coefficient is required");
  if ((bounds.array() < 0.0).any()) throw ConfigError("bounds must be non-negative");
  ConstrainedLsInfo local;
  ConstrainedLsInfo& inf = info ? *info : local;
  inf = {};

  const Eigen::VectorXd x0 = ls_unconstrained(z, c);
  if ((x0.cwiseAbs().array() <= bounds.array()).all()) {
    inf.unconstrained_feasible = true;
    return x0;
  }

  const Eigen::MatrixXd h = c.transpose() * c;
  const Eigen::VectorXd g0 = c.transpose() * z;
  const double scale = std::max(1.0, g0.norm());
  auto grad = [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(h * x - g0); };
  auto pg_norm = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& gr) { return (clamp_box(x - gr, bounds) - x).norm(); };

  // Exact solve on the free variables with the active ones pinned at their bounds.
  auto refine = [&](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < n; ++j)
      if (std::abs(x[j]) < bounds[j]) free.push_back(j);
    out = x;
    if (!free.empty()) {
      const auto nf = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd hff(nf, nf);
      Eigen::VectorXd rhs(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        rhs[a] = g0[free[a]];
        for (Eigen::Index j = 0; j < n; ++j) {
          if (std::abs(x[j]) >= bounds[j]) rhs[a] -= h(free[a], j) * x[j];
        }
        for (Eigen::Index b = 0; b < nf; ++b) hff(a, b) = h(free[a], free[b]);
      }
      const Eigen::VectorXd xf = hff.ldlt().solve(rhs);
      for (Eigen::Index a = 0; a < nf; ++a) {
        if (std::abs(xf[a]) > bounds[free[a]]) return false;
        out[free[a]] = xf[a];
      }
    }
    return pg_norm(out, grad(out)) <= tol * scale;
  };

  Eigen::VectorXd x = clamp_box(x0, bounds);
  Eigen::VectorXd g = grad(x);
  double step = 1.0 / std::max(h.diagonal().maxCoeff(), 1e-300);
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::VectorXd xn = clamp_box(x - step * g, bounds);
    const Eigen::VectorXd gn = grad(xn);
    const Eigen::VectorXd s = xn - x, y = gn - g;
    const double sy = s.dot(y);
    step = sy > 0.0 ? s.squaredNorm() / sy : 1.0 / std::max(h.diagonal().maxCoeff(), 1e-300);
    x = xn;
    g = gn;
    inf.iterations = it;
    inf.projected_gradient = pg_norm(x, g);
    if (inf.projected_gradient <= tol * scale || it % 25 == 0) {
      Eigen::VectorXd exact;
      if (refine(x, exact)) {
        x = exact;
        inf.projected_gradient = pg_norm(x, grad(x));
        inf.active = static_cast<int>((x.cwiseAbs().array() >= bounds.array()).count());
        return x;
      }
      if (inf.projected_gradient <= tol * scale) {
        inf.active = static_cast<int>((x.cwiseAbs().array() >= bounds.array()).count());
        return x;
      }
    }
  }
  std::ostringstream os;
  os << "box-constrained least squares did not converge: " << inf.iterations << " iterations, projected gradient "
     << inf.projected_gradient << " (tolerance " << tol * scale << ")";
  throw SolverFail(os.str());
}

double error_bound(double beta, double eps_n) {
  if (!(beta > 0.0)) throw ZeroBeta("error bound needs beta > 0");
  return eps_n / beta;
}

}  // namespace flowrecon
