#include "flowrecon/mac_system.hpp"

#include "flowrecon/errors.hpp"
#include "flowrecon/stencils.hpp"

namespace flowrecon {

MomentumOperator::MomentumOperator(const Domain& d) : domain_(&d) {
  const int n = d.velocity_count();
  const auto nu = static_cast<std::size_t>(n);
  visc_.assign(nu, {});
  ghost_.assign(nu, 0.0);
  conv_.assign(nu, {});

  const ViscousStencil st = viscous_stencil(d);
  for (const auto& e : st.edges) {
    visc_[static_cast<std::size_t>(e.a)].push_back({e.b, e.weight});
    visc_[static_cast<std::size_t>(e.b)].push_back({e.a, e.weight});
  }
  for (const auto& g : st.ghosts) ghost_[static_cast<std::size_t>(g.a)] += g.weight;

  const double hx = d.hx(), hy = d.hy();
  for (int k = 0; k < n; ++k) {
    const VelocityDof& v = d.dof(k);
    const int i = v.i, j = v.j;
    auto& faces = conv_[static_cast<std::size_t>(k)];
    if (!v.horizontal_face) {
      // east / west: cell centres
      if (d.active(i, j)) {
        faces[0] = {d.ux_index(i + 1, j), {k, d.ux_index(i + 1, j)}, {0.5 * hy, 0.5 * hy}, 1.0};
      } else if (i == d.nx()) {
        faces[0] = {-1, {k, -1}, {hy, 0.0}, 1.0};
      }
      if (d.active(i - 1, j)) {
        faces[1] = {d.ux_index(i - 1, j), {d.ux_index(i - 1, j), k}, {0.5 * hy, 0.5 * hy}, -1.0};
      } else if (i == 0) {
        faces[1] = {-1, {k, -1}, {hy, 0.0}, -1.0};
      }
      // north / south: vertex rows, advected by the u_y faces of the adjacent cells
      faces[2] = {d.ux_index(i, j + 1),
                  {d.active(i - 1, j) ? d.uy_index(i - 1, j + 1) : -1, d.active(i, j) ? d.uy_index(i, j + 1) : -1},
                  {0.5 * hx, 0.5 * hx},
                  1.0};
      faces[3] = {d.ux_index(i, j - 1),
                  {d.active(i - 1, j) ? d.uy_index(i - 1, j) : -1, d.active(i, j) ? d.uy_index(i, j) : -1},
                  {0.5 * hx, 0.5 * hx},
                  -1.0};
    } else {
      if (d.active(i, j)) faces[0] = {d.uy_index(i, j + 1), {k, d.uy_index(i, j + 1)}, {0.5 * hx, 0.5 * hx}, 1.0};
      if (d.active(i, j - 1)) faces[1] = {d.uy_index(i, j - 1), {d.uy_index(i, j - 1), k}, {0.5 * hx, 0.5 * hx}, -1.0};
      faces[2] = {d.uy_index(i + 1, j),
                  {d.active(i, j - 1) ? d.ux_index(i + 1, j - 1) : -1, d.active(i, j) ? d.ux_index(i + 1, j) : -1},
                  {0.5 * hy, 0.5 * hy},
                  1.0};
      faces[3] = {d.uy_index(i - 1, j),
                  {d.active(i, j - 1) ? d.ux_index(i, j - 1) : -1, d.active(i, j) ? d.ux_index(i, j) : -1},
                  {0.5 * hy, 0.5 * hy},
                  -1.0};
    }
  }

  // Divergence: + length on the high side of cell_minus, - length on the low side of cell_plus.
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < n; ++k) {
    const VelocityDof& v = d.dof(k);
    const double len = v.horizontal_face ? hx : hy;
    if (v.cell_minus >= 0) trip.emplace_back(v.cell_minus, k, len);
    if (v.cell_plus >= 0) trip.emplace_back(v.cell_plus, k, -len);
  }
  div_.resize(d.cell_count(), n);
  div_.setFromTriplets(trip.begin(), trip.end());
}

Eigen::VectorXd MomentumOperator::apply(const MomentumTerms& terms, const Eigen::VectorXd& u) const {
  const int n = domain_->velocity_count();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < n; ++k) {
    double acc = 0.0;
    row(k, terms, [&](int col, double c) { acc += c * u[col]; });
    out[k] = acc;
  }
  return out;
}

SaddleSystem::SaddleSystem(const MomentumOperator& op, std::vector<char> fixed, int max_reuse_iterations)
    : op_(&op), fixed_(std::move(fixed)), max_reuse_iterations_(max_reuse_iterations) {
  const int n = op.domain().velocity_count();
  if (static_cast<int>(fixed_.size()) != n) throw ConfigError("fixed mask has wrong length");
  free_id_.assign(static_cast<std::size_t>(n), -1);
  for (int k = 0; k < n; ++k) {
    if (!fixed_[static_cast<std::size_t>(k)]) {
      free_id_[static_cast<std::size_t>(k)] = n_free_++;
      free_dofs_.push_back(k);
      const FaceKind kind = op.domain().dof(k).kind;
      if (kind == FaceKind::Outlet1) outlet_faces_[0].push_back(free_id_[static_cast<std::size_t>(k)]);
      if (kind == FaceKind::Outlet2) outlet_faces_[1].push_back(free_id_[static_cast<std::size_t>(k)]);
    }
  }
}

SaddleSystem::Solution SaddleSystem::solve(const MomentumTerms& terms, const Eigen::VectorXd& fixed_values,
                                           const Eigen::VectorXd& u_old, double rhs_mass,
                                           const std::array<double, 2>& outlet_pressure,
                                           const std::array<double, 2>& outlet_resistance) {
  const Domain& d = op_->domain();
  const int np = d.cell_count();
  const int size = n_free_ + np;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n_free_) * 14 + static_cast<std::size_t>(np) * 4);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(size);

  for (int r = 0; r < n_free_; ++r) {
    const int k = free_dofs_[static_cast<std::size_t>(r)];
    const VelocityDof& v = d.dof(k);
    op_->row(k, terms, [&](int col, double c) {
      const int fc = free_id_[static_cast<std::size_t>(col)];
      if (fc >= 0) {
        trip.emplace_back(r, fc, c);
      } else {
        rhs[r] -= c * fixed_values[col];
      }
    });
    rhs[r] += rhs_mass * v.volume * u_old[k];
    const double len = v.horizontal_face ? d.hx() : d.hy();
    // -D^T p
    if (v.cell_minus >= 0) trip.emplace_back(r, n_free_ + v.cell_minus, -len);
    if (v.cell_plus >= 0) trip.emplace_back(r, n_free_ + v.cell_plus, len);
    const int outlet = v.kind == FaceKind::Outlet1 ? 0 : v.kind == FaceKind::Outlet2 ? 1 : -1;
    if (outlet >= 0) {
      rhs[r] -= outlet_pressure[static_cast<std::size_t>(outlet)] * len;
      // resistive outlet: couples every free face of the same outlet
      for (int c : outlet_faces_[static_cast<std::size_t>(outlet)]) {
        trip.emplace_back(r, c, outlet_resistance[static_cast<std::size_t>(outlet)] * len * d.hy());
      }
    }
  }
  // -D u = 0
  const auto& div = op_->divergence();
  for (int k = 0; k < div.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(div, k); it; ++it) {
      const int fc = free_id_[static_cast<std::size_t>(k)];
      if (fc >= 0) {
        trip.emplace_back(n_free_ + static_cast<int>(it.row()), fc, -it.value());
      } else {
        rhs[n_free_ + it.row()] += it.value() * fixed_values[k];
      }
    }
  }

  Eigen::SparseMatrix<double> a(size, size);
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  Eigen::VectorXd x;
  bool done = false;
  if (factored_ && max_reuse_iterations_ > 0) {
    Eigen::BiCGSTAB<Eigen::SparseMatrix<double>, StaleLU> it;
    it.preconditioner().lu = &lu_;
    it.setTolerance(1e-13);
    it.setMaxIterations(max_reuse_iterations_);
    it.compute(a);
    x = it.solve(rhs);
    done = it.info() == Eigen::Success && x.allFinite();
  }
  if (!done) {
    refactorize(a);
    x = lu_.solve(rhs);
    if (lu_.info() != Eigen::Success || !x.allFinite()) throw LinSolveError("saddle-point solve failed");
  }

  Solution s;
  s.u = fixed_values;
  for (int r = 0; r < n_free_; ++r) s.u[free_dofs_[static_cast<std::size_t>(r)]] = x[r];
  for (int k = 0; k < static_cast<int>(fixed_.size()); ++k) {
    if (fixed_[static_cast<std::size_t>(k)]) s.u[k] = fixed_values[k];
  }
  s.p = x.tail(np);
  return s;
}

void SaddleSystem::refactorize(const Eigen::SparseMatrix<double>& a) {
  if (!analysed_) {
    lu_.analyzePattern(a);
    analysed_ = true;
  }
  lu_.factorize(a);
  if (lu_.info() != Eigen::Success) throw LinSolveError("saddle-point factorization failed: " + lu_.lastErrorMessage());
  factored_ = true;
  ++factorizations_;
}

}  // namespace flowrecon
