#include "flowrecon/observation.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "flowrecon/errors.hpp"

namespace flowrecon {

nlohmann::json VoxelConfig::to_json() const {
  return {{"voxel_size", voxel_size},
          {"beam_angle", beam_angle},
          {"region", {{"x0", region.x0}, {"x1", region.x1}, {"y0", region.y0}, {"y1", region.y1}}},
          {"min_cells", min_cells}};
}

VoxelConfig VoxelConfig::from_json(const nlohmann::json& j) {
  VoxelConfig c;
  c.voxel_size = j.value("voxel_size", c.voxel_size);
  c.beam_angle = j.value("beam_angle", c.beam_angle);
  c.min_cells = j.value("min_cells", c.min_cells);
  if (j.contains("region")) {
    const auto& r = j.at("region");
    c.region = {r.value("x0", 0.0), r.value("x1", 0.5), r.value("y0", 0.0), r.value("y1", 1.0)};
  }
  return c;
}

VoxelSet build_voxels(const Domain& d, double voxel_size, const Rect& region, double beam_angle, int min_cells) {
  if (!(voxel_size >= 2.0 * std::max(d.hx(), d.hy()) - 1e-12))
    throw ConfigError("voxel size must be at least twice the cell size");
  if (!(region.x1 > region.x0 && region.y1 > region.y0)) throw ConfigError("empty voxel region");

  // tile (a, b) -> cells whose centre falls inside
  std::map<std::pair<int, int>, std::vector<int>> tiles;
  for (int c = 0; c < d.cell_count(); ++c) {
    const Vec2 x = d.cell_center(c);
    if (x.x < region.x0 || x.x >= region.x1 || x.y < region.y0 || x.y >= region.y1) continue;
    const int a = static_cast<int>(std::floor((x.x - region.x0) / voxel_size));
    const int b = static_cast<int>(std::floor((x.y - region.y0) / voxel_size));
    tiles[{b, a}].push_back(c);
  }

  VoxelSet vox;
  vox.beam = {std::cos(beam_angle), std::sin(beam_angle)};
  vox.region = region;
  for (auto& [key, cells] : tiles) {
    if (static_cast<int>(cells.size()) >= min_cells) vox.voxels.push_back(std::move(cells));
  }
  if (vox.voxels.empty()) throw ConfigError("voxel tiling produced no voxel with enough active cells");

  // midpoint rule on cells, cell velocity = mean of the two opposite faces
  std::vector<Eigen::Triplet<double>> trip;
  const double w = 0.5 * d.cell_area();
  for (int i = 0; i < vox.size(); ++i) {
    for (int c : vox.voxels[static_cast<std::size_t>(i)]) {
      const auto [ci, cj] = d.cell_ij(c);
      trip.emplace_back(i, d.ux_index(ci, cj), w * vox.beam.x);
      trip.emplace_back(i, d.ux_index(ci + 1, cj), w * vox.beam.x);
      trip.emplace_back(i, d.uy_index(ci, cj), w * vox.beam.y);
      trip.emplace_back(i, d.uy_index(ci, cj + 1), w * vox.beam.y);
    }
  }
  vox.loads.resize(vox.size(), d.velocity_count());
  vox.loads.setFromTriplets(trip.begin(), trip.end());
  return vox;
}

VoxelSet build_voxels(const Domain& d, const VoxelConfig& cfg) {
  const Rect r{cfg.region.x0 * d.length(), cfg.region.x1 * d.length(), cfg.region.y0 * d.height(),
               cfg.region.y1 * d.height()};
  return build_voxels(d, cfg.voxel_size, r, cfg.beam_angle, cfg.min_cells);
}

Eigen::VectorXd apply_functionals(const Domain& d, const Field& v, const VoxelSet& vox) {
  if (v.tag == SpaceTag::PressureL2) throw TagMismatch("voxel functionals act on velocity fields");
  if (v.coeffs.size() != space_dimension(d, v.tag)) throw TagMismatch("field length does not match its tag");
  return vox.loads * v.coeffs.head(d.velocity_count());
}

Eigen::MatrixXd apply_functionals(const Domain& d, const Eigen::MatrixXd& v, const VoxelSet& vox) {
  if (v.rows() < d.velocity_count()) throw TagMismatch("coefficient matrix too short for a velocity block");
  return vox.loads * v.topRows(d.velocity_count());
}

ObservationSpace::ObservationSpace(const Domain& d, const VoxelSet& vox, const GramOperator& g)
    : vox_(vox), tag_(g.tag()), velocity_count_(d.velocity_count()) {
  if (tag_ == SpaceTag::PressureL2) throw TagMismatch("observations need a velocity or product space");
  const int n = g.dimension();
  const int m = vox.size();
  Eigen::MatrixXd load = Eigen::MatrixXd::Zero(n, m);
  load.topRows(velocity_count_) = Eigen::MatrixXd(vox.loads.transpose());
  representers_ = g.solve(load);
  // the product Gram is block diagonal, so the pressure block is zero; make it exact
  if (tag_ == SpaceTag::ProductUxP) representers_.bottomRows(n - velocity_count_).setZero();

  gram_w_ = vox.loads * representers_.topRows(velocity_count_);
  gram_w_ = 0.5 * (gram_w_ + gram_w_.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram_w_, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (!(lo > 1e-12 * hi)) throw RankDeficient("voxel functionals are numerically dependent");
  condition_ = hi / lo;
  Eigen::LLT<Eigen::MatrixXd> llt(gram_w_);
  if (llt.info() != Eigen::Success) throw LinSolveError("observation Gram matrix is not positive definite");
  chol_r_ = llt.matrixU();
}

Eigen::VectorXd ObservationSpace::measure(const Eigen::VectorXd& coeffs) const {
  return vox_.loads * coeffs.head(velocity_count_);
}

Eigen::MatrixXd ObservationSpace::measure(const Eigen::MatrixXd& coeffs) const {
  return vox_.loads * coeffs.topRows(velocity_count_);
}

Eigen::VectorXd ObservationSpace::whiten(const Eigen::VectorXd& l) const {
  return chol_r_.transpose().triangularView<Eigen::Lower>().solve(l);
}

Eigen::MatrixXd ObservationSpace::whiten(const Eigen::MatrixXd& l) const {
  return chol_r_.transpose().triangularView<Eigen::Lower>().solve(l);
}

Eigen::VectorXd ObservationSpace::from_measurements(const Eigen::VectorXd& l) const {
  const Eigen::VectorXd y = chol_r_.triangularView<Eigen::Upper>().solve(whiten(l));
  return representers_ * y;
}

ObservationSpace riesz_representers(const Domain& domain, const VoxelSet& vox, const GramOperator& g) {
  return ObservationSpace(domain, vox, g);
}

Field observe(const Field& v, const ObservationSpace& w) {
  if (v.tag != w.tag()) throw TagMismatch("field tag does not match the observation space");
  if (v.coeffs.size() != w.representers().rows()) throw TagMismatch("field length does not match the observation space");
  return {w.from_measurements(w.measure(v.coeffs)), v.tag};
}

Eigen::VectorXd add_noise(const Eigen::VectorXd& l_values, double alpha, std::uint64_t seed, double sigma_ref) {
  if (std::isinf(alpha)) return l_values;
  if (!(alpha > 0.0)) throw ConfigError("noise level alpha must be positive");
  const double sigma = sigma_ref / alpha;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z = l_values;
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] += sigma * normal(rng);
  return z;
}

void write_measurements_csv(const std::string& path, const Eigen::VectorXd& values) {
  std::ofstream out(path);
  if (!out) throw IOError("cannot write " + path);
  out << "voxel,value\n";
  out.precision(17);
  for (Eigen::Index i = 0; i < values.size(); ++i) out << i << ',' << values[i] << '\n';
  if (!out) throw IOError("write failed: " + path);
}

Eigen::VectorXd read_measurements_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot read " + path);
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<long, double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    long idx = 0;
    char comma = 0;
    double value = 0.0;
    if (!(ls >> idx >> comma >> value) || comma != ',') throw IOError("malformed measurement row in " + path);
    rows.emplace_back(idx, value);
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].first != static_cast<long>(r)) throw IOError("measurement rows out of order in " + path);
    v[static_cast<Eigen::Index>(r)] = rows[r].second;
  }
  return v;
}

}  // namespace flowrecon
