#include "flowrecon/reduced_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/SVD>

#include "flowrecon/errors.hpp"

namespace flowrecon {

namespace {

constexpr double kRankTol = 1e-12;  // relative, on singular values

Eigen::MatrixXd columns(const Eigen::MatrixXd& x, const std::vector<int>& idx) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = x.col(idx[c]);
  return out;
}

int numerical_rank(const Eigen::VectorXd& sv) {
  int rank = 0;
  while (rank < sv.size() && sv[rank] > kRankTol * sv[0] && sv[rank] > 0.0) ++rank;
  return rank;
}

// sigma_min of the leading n columns of a, n = 1..cols, via one QR.
Eigen::VectorXd leading_smin(const Eigen::MatrixXd& a, int m) {
  const int cols = static_cast<int>(a.cols());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(cols);
  if (cols == 0) return out;
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(std::min<Eigen::Index>(a.rows(), cols)).triangularView<Eigen::Upper>();
  for (int n = 1; n <= cols; ++n) {
    if (n > m || n > a.rows()) break;
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(r.topLeftCorner(n, n));
    out[n - 1] = std::clamp(svd.singularValues()[n - 1], 0.0, 1.0);
  }
  return out;
}

}  // namespace

ReducedBasis pod_basis(const Eigen::MatrixXd& snaps, const GramOperator& g, int n_max, bool strict) {
  if (snaps.rows() != g.dimension()) throw TagMismatch("snapshot length does not match the Gram dimension");
  if (n_max < 1 || n_max > std::min<Eigen::Index>(snaps.cols(), snaps.rows()))
    throw ConfigError("n_max must lie in [1, min(count, unknowns)]");
  const Eigen::MatrixXd y = g.factor_apply(snaps);
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(y, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  int n = std::min(n_max, numerical_rank(sv));

  ReducedBasis b;
  b.tag = g.tag();
  Eigen::MatrixXd modes = snaps * svd.matrixV().leftCols(n);
  for (int i = 0; i < n; ++i) modes.col(i) /= sv[i];
  // a second G-orthonormalization pass removes the rounding left by X v / sigma
  b.modes = g_orthonormalize(modes, g, 1e-8);
  n = b.size();
  b.singular_values = sv.head(n);
  b.rank_deficient = n < n_max;
  if (b.rank_deficient && strict) {
    std::ostringstream os;
    os << "only " << n << " of " << n_max << " requested POD modes are nonzero";
    throw RankDeficient(os.str());
  }
  return b;
}

ReducedBasis pod_basis(const std::vector<Field>& snaps, const GramOperator& g, int n_max, bool strict) {
  if (snaps.empty()) throw ConfigError("no snapshots");
  Eigen::MatrixXd x(g.dimension(), static_cast<Eigen::Index>(snaps.size()));
  for (std::size_t c = 0; c < snaps.size(); ++c) {
    if (snaps[c].tag != g.tag()) throw TagMismatch("snapshot tag does not match the Gram operator");
    x.col(static_cast<Eigen::Index>(c)) = snaps[c].coeffs;
  }
  return pod_basis(x, g, n_max, strict);
}

ErrorCurves eps_curve(const ReducedBasis& basis, const Eigen::MatrixXd& test, const GramOperator& g) {
  if (test.cols() == 0) throw ConfigError("empty test set");
  const int n = basis.size();
  const Eigen::MatrixXd gv = g.apply(basis.modes);
  const Eigen::MatrixXd a = gv.transpose() * test;  // n x T
  Eigen::MatrixXd r = test;
  Eigen::MatrixXd gr = g.apply(test);
  ErrorCurves out;
  out.eps.resize(n + 1);
  out.delta.resize(n + 1);
  for (int k = 0; k <= n; ++k) {
    if (k > 0) {
      r -= basis.modes.col(k - 1) * a.row(k - 1);
      gr -= gv.col(k - 1) * a.row(k - 1);
    }
    const Eigen::VectorXd d2 = (r.cwiseProduct(gr)).colwise().sum().transpose().cwiseMax(0.0);
    out.eps[k] = std::sqrt(d2.maxCoeff());
    out.delta[k] = std::sqrt(d2.mean());
  }
  // nested spaces: enforce the monotonicity that rounding may blur at the 1e-16 level
  for (int k = 1; k <= n; ++k) {
    out.eps[k] = std::min(out.eps[k], out.eps[k - 1]);
    out.delta[k] = std::min(out.delta[k], out.delta[k - 1]);
  }
  return out;
}

Eigen::VectorXd beta_curve(const Eigen::MatrixXd& modes, const ObservationSpace& w) {
  const Eigen::MatrixXd a = w.whiten(w.measure(modes));
  return leading_smin(a, w.size());
}

double infsup_beta(const OrthonormalBasis& vn, const ObservationSpace& w) {
  if (vn.tag != w.tag()) throw TagMismatch("basis and observation space live in different spaces");
  const int n = vn.size();
  if (n == 0) return 1.0;
  if (n > w.size()) return 0.0;
  const Eigen::MatrixXd a = w.whiten(w.measure(vn.vectors));
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return std::clamp(svd.singularValues()[n - 1], 0.0, 1.0);
}

std::array<int, 2> locate_cell(const ObservedParams& y, int K, int K_prime) {
  if (K < 1 || K_prime < 1) throw ConfigError("partition sizes must be positive");
  if (!(y.phase >= 0.0 && y.phase <= 1.0) || !(y.HR >= kHeartRateMin && y.HR <= kHeartRateMax)) {
    std::ostringstream os;
    os << "observed parameters (t/T = " << y.phase << ", HR = " << y.HR << ") outside [0,1] x [48,120]";
    throw OutOfRange(os.str());
  }
  auto index = [](double x, int count) {
    // half-open [k/count, (k+1)/count), last interval closed
    int k = std::min(count - 1, static_cast<int>(std::floor(x * count)));
    while (k + 1 < count && x >= static_cast<double>(k + 1) / count) ++k;
    while (k > 0 && x < static_cast<double>(k) / count) --k;
    return k;
  };
  const double hr = (y.HR - kHeartRateMin) / (kHeartRateMax - kHeartRateMin);
  return {index(y.phase, K), index(hr, K_prime)};
}

int PartitionGrid::cell_id(const ObservedParams& y) const {
  const auto [k, kp] = locate_cell(y, K, K_prime);
  return k * K_prime + kp;
}

TrainingSet make_training_set(Eigen::MatrixXd X, std::vector<ObservedParams> params, std::vector<int> trajectory,
                              const GramOperator& g, const ObservationSpace& w) {
  if (static_cast<Eigen::Index>(params.size()) != X.cols() || static_cast<Eigen::Index>(trajectory.size()) != X.cols())
    throw ConfigError("training parameter table does not match the snapshot count");
  if (X.rows() != g.dimension()) throw TagMismatch("snapshot length does not match the Gram dimension");
  if (g.tag() != w.tag()) throw TagMismatch("Gram and observation space differ");
  TrainingSet ts;
  ts.X = std::move(X);
  ts.params = std::move(params);
  ts.trajectory = std::move(trajectory);
  ts.tag = g.tag();
  ts.GX = g.apply(ts.X);
  ts.S = ts.X.transpose() * ts.GX;
  ts.S = 0.5 * (ts.S + ts.S.transpose()).eval();
  ts.Cw = w.whiten(w.measure(ts.X));
  // distances taken from S directly lose half the digits to cancellation; R keeps them
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g.factor_apply(ts.X));
  ts.R = qr.matrixQR().topRows(std::min(ts.X.rows(), ts.X.cols())).triangularView<Eigen::Upper>();
  return ts;
}

int select_n_star(const Eigen::VectorXd& eps, const Eigen::VectorXd& beta) {
  const Eigen::Index n = std::min(eps.size(), beta.size());
  int best = 1;
  double best_ratio = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = beta[i] > 0.0 ? eps[i] / beta[i] : std::numeric_limits<double>::infinity();
    if (r < best_ratio) {
      best_ratio = r;
      best = static_cast<int>(i) + 1;
    }
  }
  return best;
}

CellCurves cell_curves(const TrainingSet& ts, const std::vector<int>& members, int m, int folds) {
  if (members.size() < 2) throw EmptyCell("cell holds fewer than 2 snapshots");
  const Eigen::BDCSVD<Eigen::MatrixXd> full(columns(ts.R, members), Eigen::ComputeThinV);
  const int full_rank = numerical_rank(full.singularValues());
  int n_max = std::min({m, static_cast<int>(members.size()), kMaxModes, full_rank});
  CellCurves c;
  if (n_max < 1) {
    // identically zero cell: every space reproduces it
    c.eps = c.delta = Eigen::VectorXd::Zero(1);
    c.beta = Eigen::VectorXd::Zero(1);
    c.n_star = 1;
    c.score = 0.0;
    return c;
  }

  Eigen::MatrixXd a = columns(ts.Cw, members) * full.matrixV().leftCols(n_max);
  for (int i = 0; i < n_max; ++i) a.col(i) /= full.singularValues()[i];
  c.beta = leading_smin(a, m);

  // fold assignment: by trajectory when possible
  std::map<int, int> group_rank;
  for (int s : members) group_rank.emplace(ts.trajectory[static_cast<std::size_t>(s)], 0);
  int g = 0;
  for (auto& [id, rank] : group_rank) rank = g++;
  const bool by_group = group_rank.size() >= 2;
  const int nf = std::max(2, std::min(folds, by_group ? static_cast<int>(group_rank.size()) : static_cast<int>(members.size())));
  std::vector<int> fold(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    fold[i] = by_group ? group_rank[ts.trajectory[static_cast<std::size_t>(members[i])]] % nf : static_cast<int>(i) % nf;
  }

  c.eps = Eigen::VectorXd::Zero(n_max);
  Eigen::VectorXd sum2 = Eigen::VectorXd::Zero(n_max);
  int count = 0;
  for (int f = 0; f < nf; ++f) {
    std::vector<int> train, held;
    for (std::size_t i = 0; i < members.size(); ++i) (fold[i] == f ? held : train).push_back(members[i]);
    if (held.empty() || train.empty()) continue;
    const Eigen::BDCSVD<Eigen::MatrixXd> e(columns(ts.R, train), Eigen::ComputeThinU);
    const int r = std::min(numerical_rank(e.singularValues()), n_max);
    const Eigen::MatrixXd u = e.matrixU().leftCols(r);
    for (int h : held) {
      // explicit residual, one mode at a time
      Eigen::VectorXd res = ts.R.col(h);
      for (int n = 1; n <= n_max; ++n) {
        if (n <= r) res -= u.col(n - 1) * u.col(n - 1).dot(res);
        const double d2 = res.squaredNorm();
        c.eps[n - 1] = std::max(c.eps[n - 1], std::sqrt(d2));
        sum2[n - 1] += d2;
      }
      ++count;
    }
  }
  c.delta = (sum2 / std::max(count, 1)).cwiseSqrt();
  for (int n = 1; n < n_max; ++n) {
    c.eps[n] = std::min(c.eps[n], c.eps[n - 1]);
    c.delta[n] = std::min(c.delta[n], c.delta[n - 1]);
  }
  c.n_star = select_n_star(c.eps, c.beta);
  c.score = c.beta[c.n_star - 1] > 0.0 ? c.eps[c.n_star - 1] / c.beta[c.n_star - 1]
                                       : std::numeric_limits<double>::infinity();
  return c;
}

std::vector<std::vector<int>> partition_members(const TrainingSet& ts, int K, int K_prime) {
  std::vector<std::vector<int>> cells(static_cast<std::size_t>(K * K_prime));
  for (int s = 0; s < ts.size(); ++s) {
    const auto [k, kp] = locate_cell(ts.params[static_cast<std::size_t>(s)], K, K_prime);
    cells[static_cast<std::size_t>(k * K_prime + kp)].push_back(s);
  }
  return cells;
}

namespace {

void require_filled(const std::vector<std::vector<int>>& cells, int K_prime) {
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (cells[c].size() < 2) {
      std::ostringstream os;
      os << "cell (" << static_cast<int>(c) / K_prime << "," << static_cast<int>(c) % K_prime << ") holds "
         << cells[c].size() << " snapshot(s)";
      throw EmptyCell(os.str());
    }
  }
}

}  // namespace

double partition_score(const TrainingSet& ts, const ObservationSpace& w, int K, int K_prime) {
  const auto cells = partition_members(ts, K, K_prime);
  require_filled(cells, K_prime);
  double score = 0.0;
  for (const auto& members : cells) score = std::max(score, cell_curves(ts, members, w.size()).score);
  return score;
}

PartitionGrid build_partition(const TrainingSet& ts, const GramOperator& g, const ObservationSpace& w, int K,
                              int K_prime) {
  const auto cells = partition_members(ts, K, K_prime);
  require_filled(cells, K_prime);
  PartitionGrid grid;
  grid.K = K;
  grid.K_prime = K_prime;
  grid.tag = ts.tag;
  for (int c = 0; c < K * K_prime; ++c) {
    PartitionCell cell;
    cell.k = c / K_prime;
    cell.k_prime = c % K_prime;
    cell.members = cells[static_cast<std::size_t>(c)];
    cell.curves = cell_curves(ts, cell.members, w.size());
    const int n_max = static_cast<int>(cell.curves.eps.size());
    cell.basis = pod_basis(columns(ts.X, cell.members), g, n_max);
    const int n = cell.basis.size();
    if (n < n_max) {
      cell.curves.eps.conservativeResize(n);
      cell.curves.delta.conservativeResize(n);
    }
    // beta from the stored modes, i.e. exactly what the online phase uses
    if (n > 0) {
      cell.curves.beta = beta_curve(cell.basis.modes, w);
      cell.curves.n_star = select_n_star(cell.curves.eps, cell.curves.beta);
      const double b = cell.curves.beta[cell.curves.n_star - 1];
      cell.curves.score = b > 0.0 ? cell.curves.eps[cell.curves.n_star - 1] / b : std::numeric_limits<double>::infinity();
    }
    grid.score = std::max(grid.score, cell.curves.score);
    // bounds over the whole training manifold
    const Eigen::MatrixXd coeffs = cell.basis.modes.transpose() * ts.GX;
    grid.coeff_bounds.push_back(n > 0 ? Eigen::VectorXd(coeffs.cwiseAbs().rowwise().maxCoeff()) : Eigen::VectorXd());
    grid.cells.push_back(std::move(cell));
  }
  return grid;
}

namespace {

// Scores within this relative distance count as ties (resolved toward the
// coarser partition).
constexpr double kScoreTieTol = 1e-9;

}  // namespace

PartitionGrid select_partition(const TrainingSet& ts, const GramOperator& g, const ObservationSpace& w,
                               std::array<int, 2> K_range, std::array<int, 2> K_prime_range,
                               std::vector<PartitionSearchLog>* log) {
  if (K_range[0] < 1 || K_range[1] < K_range[0] || K_prime_range[0] < 1 || K_prime_range[1] < K_prime_range[0])
    throw ConfigError("empty partition search range");
  std::vector<std::array<int, 2>> candidates;
  for (int K = K_range[0]; K <= K_range[1]; ++K)
    for (int Kp = K_prime_range[0]; Kp <= K_prime_range[1]; ++Kp) candidates.push_back({K, Kp});
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    return a[0] + a[1] != b[0] + b[1] ? a[0] + a[1] < b[0] + b[1] : a[0] < b[0];
  });

  double best = std::numeric_limits<double>::infinity();
  std::array<int, 2> arg{-1, -1};
  for (const auto& [K, Kp] : candidates) {
    PartitionSearchLog entry{K, Kp, 0.0, false, ""};
    try {
      entry.score = partition_score(ts, w, K, Kp);
      entry.valid = true;
      if (arg[0] < 0 || entry.score < best * (1.0 - kScoreTieTol)) {
        best = entry.score;
        arg = {K, Kp};
      }
    } catch (const EmptyCell& e) {
      entry.note = e.what();
    }
    if (log) log->push_back(entry);
  }
  if (arg[0] < 0) throw EmptyCell("every partition candidate has a cell with fewer than 2 snapshots");
  return build_partition(ts, g, w, arg[0], arg[1]);
}

}  // namespace flowrecon
