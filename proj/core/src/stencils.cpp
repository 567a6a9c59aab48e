#include "flowrecon/stencils.hpp"

namespace flowrecon {

ViscousStencil viscous_stencil(const Domain& d) {
  ViscousStencil s;
  const double hx = d.hx(), hy = d.hy();
  auto act = [&](int i, int j) { return d.active(i, j) ? 1 : 0; };

  for (int k = 0; k < d.velocity_count(); ++k) {
    const VelocityDof& v = d.dof(k);
    const int i = v.i, j = v.j;
    if (!v.horizontal_face) {
      // along x, across cell (i,j)
      if (d.active(i, j)) {
        const int b = d.ux_index(i + 1, j);
        if (b >= 0) s.edges.push_back({k, b, hy / hx});
      }
      // along y, around vertex (i, j+1)
      const int up = d.ux_index(i, j + 1);
      if (up >= 0) {
        const int n = act(i - 1, j) + act(i, j) + act(i - 1, j + 1) + act(i, j + 1);
        s.edges.push_back({k, up, 0.25 * n * hx / hy});
      } else {
        const int n = act(i - 1, j) + act(i, j);
        s.ghosts.push_back({k, n * hx / hy});
      }
      if (d.ux_index(i, j - 1) < 0) {
        const int n = act(i - 1, j) + act(i, j);
        s.ghosts.push_back({k, n * hx / hy});
      }
    } else {
      // along y, across cell (i,j)
      if (d.active(i, j)) {
        const int b = d.uy_index(i, j + 1);
        if (b >= 0) s.edges.push_back({k, b, hx / hy});
      }
      // along x, around vertex (i+1, j)
      const int right = d.uy_index(i + 1, j);
      const int n_adj = act(i, j - 1) + act(i, j);
      if (right >= 0) {
        const int n = act(i, j - 1) + act(i + 1, j - 1) + act(i, j) + act(i + 1, j);
        s.edges.push_back({k, right, 0.25 * n * hy / hx});
      } else if (i + 1 < d.nx()) {
        s.ghosts.push_back({k, n_adj * hy / hx});
      }
      // left neighbour missing: wall, or the inlet where u_y = 0 as well
      if (d.uy_index(i - 1, j) < 0) s.ghosts.push_back({k, n_adj * hy / hx});
    }
  }
  return s;
}

}  // namespace flowrecon
