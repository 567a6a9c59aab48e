#pragma once

// Staggered-grid difference stencils shared by the Gram assembly, the flow
// solver and the QoI operators.

#include <vector>

#include "flowrecon/geometry.hpp"

namespace flowrecon {

/// Pair of same-component velocity unknowns coupled by a gradient term
/// weight * (u_a - u_b)^2.
struct VelocityEdge {
  int a = -1;
  int b = -1;
  double weight = 0.0;
};

/// Velocity unknown touching a no-slip wall through its tangential
/// component: contributes weight * u_a^2 (wall value zero half a cell away).
struct WallGhost {
  int a = -1;
  double weight = 0.0;
};

struct ViscousStencil {
  std::vector<VelocityEdge> edges;
  std::vector<WallGhost> ghosts;
};

/// Edges realize the Neumann H^1 seminorm sum over faces; ghosts are the
/// extra no-slip terms the momentum equation adds along walls and the inlet.
ViscousStencil viscous_stencil(const Domain& domain);

}  // namespace flowrecon
