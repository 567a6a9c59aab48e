#pragma once

// Voxel-averaged, beam-projected velocity measurements, their Riesz
// representers and the observation projector P_W.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include "flowrecon/geometry.hpp"
#include "flowrecon/hilbert.hpp"

namespace flowrecon {

/// Axis-aligned rectangle in physical coordinates (cm).
struct Rect {
  double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;
};

struct VoxelConfig {
  double voxel_size = 0.15;             // cm
  double beam_angle = 0.78539816339744830962;  // rad, pi/4
  // Region as fractions of the channel; the default is the left half.
  FractionRect region{0.0, 0.5, 0.0, 1.0};
  int min_cells = 4;

  nlohmann::json to_json() const;
  static VoxelConfig from_json(const nlohmann::json& j);
};

struct VoxelSet {
  std::vector<std::vector<int>> voxels;  // active-cell indices per voxel
  Vec2 beam;
  Rect region;
  /// Sparse load matrix: row i holds the coefficients of l_i on the velocity unknowns.
  Eigen::SparseMatrix<double, Eigen::RowMajor> loads;

  int size() const { return static_cast<int>(voxels.size()); }
};

/// Tiles region (intersected with the active cells) into square voxels. A cell
/// belongs to the voxel containing its centre; voxels with fewer than
/// min_cells cells are dropped. Throws ConfigError when voxel_size < 2h or no
/// voxel survives.
VoxelSet build_voxels(const Domain& domain, double voxel_size, const Rect& region, double beam_angle,
                      int min_cells = 4);
VoxelSet build_voxels(const Domain& domain, const VoxelConfig& cfg);

/// l_i(v) = sum over cells of |cell| * (v_c . b), v_c the face-averaged cell velocity.
Eigen::VectorXd apply_functionals(const Domain& domain, const Field& v, const VoxelSet& vox);
/// Same, for the columns of a matrix of velocity (or product) coefficient vectors.
Eigen::MatrixXd apply_functionals(const Domain& domain, const Eigen::MatrixXd& v, const VoxelSet& vox);

/// Riesz representers of the voxel functionals in the space of g and their Gram matrix.
class ObservationSpace {
 public:
  ObservationSpace(const Domain& domain, const VoxelSet& vox, const GramOperator& g);

  int size() const { return static_cast<int>(representers_.cols()); }
  SpaceTag tag() const { return tag_; }
  /// Columns are the representers omega_i (pressure block zero in the product space).
  const Eigen::MatrixXd& representers() const { return representers_; }
  /// gram_w(i,j) = <omega_i, omega_j>.
  const Eigen::MatrixXd& gram_w() const { return gram_w_; }
  /// Upper Cholesky factor R with gram_w = R^T R.
  const Eigen::MatrixXd& chol_r() const { return chol_r_; }
  double condition_number() const { return condition_; }
  const VoxelSet& voxels() const { return vox_; }

  /// Measurement vector l(v) for a field in this space.
  Eigen::VectorXd measure(const Eigen::VectorXd& coeffs) const;
  Eigen::MatrixXd measure(const Eigen::MatrixXd& coeffs) const;
  /// P_W v from its measurement vector.
  Eigen::VectorXd from_measurements(const Eigen::VectorXd& l) const;
  /// R^{-T} l: coordinates of P_W v in a G-orthonormal basis of W.
  Eigen::VectorXd whiten(const Eigen::VectorXd& l) const;
  Eigen::MatrixXd whiten(const Eigen::MatrixXd& l) const;

 private:
  VoxelSet vox_;
  SpaceTag tag_;
  int velocity_count_ = 0;
  Eigen::MatrixXd representers_;
  Eigen::MatrixXd gram_w_;
  Eigen::MatrixXd chol_r_;
  double condition_ = 0.0;
};

/// Throws TagMismatch unless g is VelocityH1 or ProductUxP.
ObservationSpace riesz_representers(const Domain& domain, const VoxelSet& vox, const GramOperator& g);

/// P_W v. Throws TagMismatch if the field does not live in W's space.
Field observe(const Field& v, const ObservationSpace& w);

inline constexpr double kNoiseFree = std::numeric_limits<double>::infinity();

/// z = l + N(0, sigma^2), sigma = sigma_ref / alpha; alpha = infinity returns l unchanged.
Eigen::VectorXd add_noise(const Eigen::VectorXd& l_values, double alpha, std::uint64_t seed, double sigma_ref);

/// Writes "voxel,value" rows.
void write_measurements_csv(const std::string& path, const Eigen::VectorXd& values);
Eigen::VectorXd read_measurements_csv(const std::string& path);

}  // namespace flowrecon
