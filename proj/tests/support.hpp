#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "flowrecon/geometry.hpp"
#include "flowrecon/observation.hpp"

namespace testsupport {

// 60 x 10 cells of 0.1 cm: same shape as the default channel, four times coarser.
inline flowrecon::DomainConfig coarse_config() {
  flowrecon::DomainConfig c;
  c.nx = 60;
  c.ny = 10;
  return c;
}

inline flowrecon::DomainConfig straight_config(int nx = 60, int ny = 10) {
  flowrecon::DomainConfig c;
  c.nx = nx;
  c.ny = ny;
  c.stenosis.reset();
  return c;
}

inline flowrecon::VoxelConfig coarse_voxels() {
  flowrecon::VoxelConfig v;
  v.voxel_size = 0.3;
  return v;
}

inline Eigen::VectorXd random_vector(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j) m.col(j) = random_vector(rows, seed * 7919 + static_cast<std::uint64_t>(j));
  return m;
}

// Samples a velocity field given pointwise (ux, uy) at dof positions.
template <class F>
Eigen::VectorXd sample_velocity(const flowrecon::Domain& d, F&& f) {
  Eigen::VectorXd u(d.velocity_count());
  for (int k = 0; k < d.velocity_count(); ++k) {
    const auto& dof = d.dof(k);
    const auto v = f(dof.position.x, dof.position.y);
    u[k] = dof.horizontal_face ? v[1] : v[0];
  }
  return u;
}

}  // namespace testsupport

#include <algorithm>
#include <cmath>
#include <functional>

namespace testsupport {

// Adaptive Dormand-Prince 5(4) for a scalar ODE y' = f(t, y); returns y(t1).
inline double dopri45(const std::function<double(double, double)>& f, double t0, double y0, double t1,
                      double rtol = 1e-12, double atol = 1e-9) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
  double t = t0, y = y0, h = (t1 - t0) * 1e-3;
  while (t < t1) {
    h = std::min(h, t1 - t);
    const double k1 = f(t, y);
    const double k2 = f(t + c2 * h, y + h * a21 * k1);
    const double k3 = f(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
    const double k4 = f(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const double k5 = f(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const double k6 = f(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const double yn = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const double k7 = f(t + h, yn);
    const double err = std::abs(h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7));
    const double scale = atol + rtol * std::max(std::abs(y), std::abs(yn));
    const double ratio = err / scale;
    if (ratio <= 1.0) {
      t += h;
      y = yn;
    }
    h *= std::clamp(0.9 * std::pow(std::max(ratio, 1e-10), -0.2), 0.2, 5.0);
  }
  return y;
}

}  // namespace testsupport
