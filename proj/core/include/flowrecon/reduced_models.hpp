#pragma once

// Offline training: POD bases, approximation-error curves, the (K, K')
// partition of the observed parameters (t, HR) and per-cell n* selection.

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowrecon/hilbert.hpp"
#include "flowrecon/observation.hpp"

namespace flowrecon {

struct ReducedBasis {
  Eigen::MatrixXd modes;            // G-orthonormal columns
  Eigen::VectorXd singular_values;  // nonincreasing
  SpaceTag tag = SpaceTag::VelocityH1;
  bool rank_deficient = false;      // fewer than the requested modes were available

  int size() const { return static_cast<int>(modes.cols()); }
  OrthonormalBasis truncated(int n) const { return {modes.leftCols(n), tag}; }
};

/// POD by the method of snapshots in the G inner product: SVD of L^T P X with
/// G = P^T L L^T P. Columns of `snaps` are coefficient vectors. Returns at most
/// n_max modes; when fewer nonzero singular values exist the achievable rank
/// is returned with rank_deficient set, or RankDeficient is thrown if strict.
ReducedBasis pod_basis(const Eigen::MatrixXd& snaps, const GramOperator& g, int n_max, bool strict = false);
ReducedBasis pod_basis(const std::vector<Field>& snaps, const GramOperator& g, int n_max, bool strict = false);

struct ErrorCurves {
  Eigen::VectorXd eps;    // eps[n], n = 0..size: max over the test set of dist(x, V_n)
  Eigen::VectorXd delta;  // RMS of dist(x, V_n)
};

/// Projection-error curves of a basis on a test set (columns).
ErrorCurves eps_curve(const ReducedBasis& basis, const Eigen::MatrixXd& test, const GramOperator& g);

/// beta(V_n, W) for n = 1..basis size (index n-1); zero for n > m.
Eigen::VectorXd beta_curve(const Eigen::MatrixXd& modes, const ObservationSpace& w);
/// beta of the whole span of the given G-orthonormal columns.
double infsup_beta(const OrthonormalBasis& vn, const ObservationSpace& w);

/// Observed-parameter coordinates of a snapshot: phase t/T in [0,1] and HR.
struct ObservedParams {
  double phase = 0.0;
  double HR = 0.0;
};

inline constexpr double kHeartRateMin = 48.0;
inline constexpr double kHeartRateMax = 120.0;

/// Cell of a K x K' partition (half-open intervals, last one closed). Throws
/// OutOfRange outside [0,1] x [HR_min, HR_max].
std::array<int, 2> locate_cell(const ObservedParams& y, int K, int K_prime);

/// Training snapshots with the precomputed quantities every partition
/// candidate needs.
struct TrainingSet {
  Eigen::MatrixXd X;                  // dim x N
  std::vector<ObservedParams> params;
  std::vector<int> trajectory;
  SpaceTag tag = SpaceTag::VelocityH1;

  Eigen::MatrixXd GX;                 // G X
  Eigen::MatrixXd S;                  // X^T G X
  Eigen::MatrixXd R;                  // S = R^T R; columns are isometric images of the snapshots
  Eigen::MatrixXd Cw;                 // R^{-T} l(X): whitened observations

  int size() const { return static_cast<int>(X.cols()); }
};

TrainingSet make_training_set(Eigen::MatrixXd X, std::vector<ObservedParams> params, std::vector<int> trajectory,
                              const GramOperator& g, const ObservationSpace& w);

struct CellCurves {
  Eigen::VectorXd eps;    // n = 1..n_max (index n-1), cross-validated
  Eigen::VectorXd delta;
  Eigen::VectorXd beta;   // beta of the full-cell POD space
  int n_star = 1;
  double score = 0.0;     // min_n eps_n / beta_n
};

/// Cap on the reduced dimension explored per cell.
inline constexpr int kMaxModes = 60;

/// Cross-validated curves of one cell. The cell's training snapshots are split
/// into folds by trajectory (by snapshot if only one trajectory is present);
/// eps_n is the largest held-out distance to the POD space of the remaining
/// folds, beta_n uses the POD space of the whole cell.
CellCurves cell_curves(const TrainingSet& ts, const std::vector<int>& members, int m, int folds = 5);

/// argmin_n eps_n / beta_n, ties toward the smaller n (1-based).
int select_n_star(const Eigen::VectorXd& eps, const Eigen::VectorXd& beta);

struct PartitionCell {
  int k = 0, k_prime = 0;
  std::vector<int> members;  // training snapshot indices
  ReducedBasis basis;        // POD of the members, up to n_max modes
  CellCurves curves;
};

struct PartitionGrid {
  int K = 1, K_prime = 1;
  double score = 0.0;
  SpaceTag tag = SpaceTag::VelocityH1;
  std::vector<PartitionCell> cells;  // row-major in (k, k')
  /// Coefficient bounds max_{u in training} |<u, v_j>| per cell, used by the
  /// constrained least-squares solver.
  std::vector<Eigen::VectorXd> coeff_bounds;

  const PartitionCell& cell(int k, int k_prime) const {
    return cells[static_cast<std::size_t>(k * K_prime + k_prime)];
  }
  int cell_id(const ObservedParams& y) const;
};

/// Members of every cell of a K x K' partition.
std::vector<std::vector<int>> partition_members(const TrainingSet& ts, int K, int K_prime);

/// max over cells of min_n eps_n / beta_n. Throws EmptyCell when a cell holds
/// fewer than 2 snapshots.
double partition_score(const TrainingSet& ts, const ObservationSpace& w, int K, int K_prime);

struct PartitionSearchLog {
  int K = 0, K_prime = 0;
  double score = 0.0;
  bool valid = false;
  std::string note;
};

/// Exhaustive search over K in K_range, K' in K_prime_range; ties toward the
/// smaller K + K', then the smaller K. Skips candidates with empty cells and
/// fills the winning grid (bases, curves, n*, coefficient bounds).
PartitionGrid select_partition(const TrainingSet& ts, const GramOperator& g, const ObservationSpace& w,
                               std::array<int, 2> K_range, std::array<int, 2> K_prime_range,
                               std::vector<PartitionSearchLog>* log = nullptr);

/// Builds the grid data for a fixed (K, K').
PartitionGrid build_partition(const TrainingSet& ts, const GramOperator& g, const ObservationSpace& w, int K,
                              int K_prime);

}  // namespace flowrecon
