#include "flowrecon/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "flowrecon/errors.hpp"
#include "flowrecon/hilbert.hpp"
#include "flowrecon/pbdw.hpp"
#include "flowrecon/qoi.hpp"

namespace flowrecon {

namespace fs = std::filesystem;

namespace {

nlohmann::json alpha_to_json(double a) { return std::isinf(a) ? nlohmann::json("inf") : nlohmann::json(a); }

double alpha_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return kNoiseFree;
    throw ConfigError("noise level must be a number or \"inf\"");
  }
  return j.get<double>();
}

double phase_of(const FlowParams& y) { return y.t / y.period(); }

ObservedParams observed(const FlowParams& y) { return {phase_of(y), y.HR}; }

class Csv {
 public:
  Csv(const fs::path& path, const std::string& header) : out_(path, std::ios::trunc) {
    if (!out_) throw IOError("cannot write " + path.string());
    out_ << header << "\n" << std::setprecision(12);
  }
  template <class... T>
  void row(const T&... values) {
    bool first = true;
    ((out_ << (first ? "" : ",") << values, first = false), ...);
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

nlohmann::json log_to_json(const std::vector<PartitionSearchLog>& log) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& e : log) {
    a.push_back({{"K", e.K}, {"K_prime", e.K_prime}, {"score", e.score}, {"valid", e.valid}, {"note", e.note}});
  }
  return a;
}

std::vector<PartitionSearchLog> log_from_json(const nlohmann::json& a) {
  std::vector<PartitionSearchLog> log;
  for (const auto& e : a) {
    log.push_back({e.at("K").get<int>(), e.at("K_prime").get<int>(), e.at("score").get<double>(),
                   e.at("valid").get<bool>(), e.at("note").get<std::string>()});
  }
  return log;
}

/// Extends dp over cell pressures to the product-space coefficients.
Eigen::MatrixXd product_dp_functional(const Domain& d) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(2, d.velocity_count() + d.cell_count());
  f.rightCols(d.cell_count()) = pressure_drop_functional(d);
  return f;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(c)};
  std::mt19937_64 rng(seq);
  return rng();
}

}  // namespace

nlohmann::json ReconstructRequest::to_json() const {
  nlohmann::json j = {{"mode", mode}, {"n", n}, {"alpha", alpha_to_json(alpha)}, {"noise_seed", noise_seed}};
  if (y_obs) j["y_obs"] = {{"phase", y_obs->phase}, {"HR", y_obs->HR}};
  if (!measurements_csv.empty()) j["measurements_csv"] = measurements_csv;
  if (snapshot_id >= 0) j["snapshot_id"] = snapshot_id;
  return j;
}

ReconstructRequest ReconstructRequest::from_json(const nlohmann::json& j) {
  ReconstructRequest r;
  r.mode = j.value("mode", r.mode);
  if (j.contains("y_obs")) r.y_obs = ObservedParams{j.at("y_obs").at("phase").get<double>(), j.at("y_obs").at("HR").get<double>()};
  r.measurements_csv = j.value("measurements_csv", std::string{});
  r.snapshot_id = j.value("snapshot_id", -1);
  r.n = j.value("n", 0);
  if (j.contains("alpha")) r.alpha = alpha_from_json(j.at("alpha"));
  r.noise_seed = j.value("noise_seed", std::uint64_t{0});
  return r;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json alphas = nlohmann::json::array();
  for (double a : noise_alphas) alphas.push_back(alpha_to_json(a));
  return {{"domain", domain.to_json()},
          {"solver", solver.to_json()},
          {"ranges", ranges.to_json()},
          {"voxels", voxels.to_json()},
          {"manifold", {{"trajectories", trajectories}, {"seed", seed}, {"workers", workers}}},
          {"train", {{"K_range", K_range}, {"K_prime_range", K_prime_range}, {"test_fraction", test_fraction}}},
          {"evaluate",
           {{"noise_alphas", alphas}, {"noise_realizations", noise_realizations}, {"noise_n_max", noise_n_max}}},
          {"reconstruct", reconstruct.to_json()},
          {"output_dir", output_dir}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("domain")) c.domain = DomainConfig::from_json(j.at("domain"));
    if (j.contains("solver")) c.solver = SolverConfig::from_json(j.at("solver"));
    if (j.contains("ranges")) c.ranges = ParameterRanges::from_json(j.at("ranges"));
    if (j.contains("voxels")) c.voxels = VoxelConfig::from_json(j.at("voxels"));
    if (j.contains("manifold")) {
      const auto& m = j.at("manifold");
      c.trajectories = m.value("trajectories", c.trajectories);
      c.seed = m.value("seed", c.seed);
      c.workers = m.value("workers", c.workers);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.K_range = t.value("K_range", c.K_range);
      c.K_prime_range = t.value("K_prime_range", c.K_prime_range);
      c.test_fraction = t.value("test_fraction", c.test_fraction);
    }
    if (j.contains("evaluate")) {
      const auto& e = j.at("evaluate");
      if (e.contains("noise_alphas")) {
        c.noise_alphas.clear();
        for (const auto& a : e.at("noise_alphas")) c.noise_alphas.push_back(alpha_from_json(a));
      }
      c.noise_realizations = e.value("noise_realizations", c.noise_realizations);
      c.noise_n_max = e.value("noise_n_max", c.noise_n_max);
    }
    if (j.contains("reconstruct")) c.reconstruct = ReconstructRequest::from_json(j.at("reconstruct"));
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (c.trajectories < 1) throw ConfigError("manifold.trajectories must be >= 1");
  if (c.workers < 1) throw ConfigError("manifold.workers must be >= 1");
  if (c.K_range[0] < 1 || c.K_range[1] < c.K_range[0] || c.K_prime_range[0] < 1 || c.K_prime_range[1] < c.K_prime_range[0])
    throw ConfigError("partition ranges must be nonempty and start at 1 or more");
  if (!(c.test_fraction >= 0.0 && c.test_fraction < 1.0)) throw ConfigError("train.test_fraction must lie in [0, 1)");
  if (c.noise_realizations < 1 || c.noise_n_max < 1) throw ConfigError("noise_realizations and noise_n_max must be >= 1");
  for (double a : c.noise_alphas) {
    if (!(a > 0.0)) throw ConfigError("noise levels must be positive");
  }
  return c;
}

std::string RunConfig::hash() const { return fnv1a_hex(to_json().dump()); }

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

std::array<std::vector<int>, 2> split_trajectories(int count, double test_fraction, std::uint64_t seed) {
  std::vector<int> ids(static_cast<std::size_t>(count));
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(ids[i - 1], ids[pick(rng)]);
  }
  const int n_test = std::min(count - 1, static_cast<int>(std::lround(test_fraction * count)));
  std::vector<int> test(ids.begin(), ids.begin() + n_test), train(ids.begin() + n_test, ids.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

void write_trained(const fs::path& dir, const TrainedModel& m) {
  ensure_directory(dir);
  write_partition(dir / "velocity", m.velocity, {{"search", log_to_json(m.velocity_log)}});
  write_partition(dir / "joint", m.joint, {{"search", log_to_json(m.joint_log)}, {"kappa", m.kappa}});
  const nlohmann::json manifest = {{"format", "flowrecon-trained/1"},
                                   {"domain", m.domain.to_json()},
                                   {"voxels", m.voxels.to_json()},
                                   {"rho", m.rho},
                                   {"mu", m.mu},
                                   {"manifold_hash", m.manifold_hash},
                                   {"config_hash", m.config_hash},
                                   {"train_trajectories", m.train_trajectories},
                                   {"test_trajectories", m.test_trajectories},
                                   {"sigma_ref", m.sigma_ref},
                                   {"velocity", {{"dir", "velocity"}, {"K", m.velocity.K}, {"K_prime", m.velocity.K_prime}}},
                                   {"joint", {{"dir", "joint"}, {"K", m.joint.K}, {"K_prime", m.joint.K_prime}}},
                                   {"kappa", m.kappa}};
  write_json(dir / "manifest.json", manifest);
}

TrainedModel read_trained(const fs::path& dir) {
  const nlohmann::json j = read_json(dir / "manifest.json");
  if (j.value("format", "") != "flowrecon-trained/1") throw IOError((dir / "manifest.json").string() + " is not a trained store");
  TrainedModel m;
  try {
    m.domain = DomainConfig::from_json(j.at("domain"));
    m.voxels = VoxelConfig::from_json(j.at("voxels"));
    m.rho = j.at("rho").get<double>();
    m.mu = j.at("mu").get<double>();
    m.manifold_hash = j.at("manifold_hash").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.train_trajectories = j.at("train_trajectories").get<std::vector<int>>();
    m.test_trajectories = j.at("test_trajectories").get<std::vector<int>>();
    m.sigma_ref = j.at("sigma_ref").get<double>();
    m.kappa = j.at("kappa").get<std::vector<std::array<double, 2>>>();
    nlohmann::json extra;
    m.velocity = read_partition(dir / "velocity", &extra);
    m.velocity_log = log_from_json(extra.at("search"));
    m.joint = read_partition(dir / "joint", &extra);
    m.joint_log = log_from_json(extra.at("search"));
  } catch (const nlohmann::json::exception& e) {
    throw IOError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (m.kappa.size() != m.joint.cells.size()) throw IOError("kappa table does not match the joint partition");
  return m;
}

GenerateSummary cmd_generate(const RunConfig& cfg, const fs::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_directory(out_dir);
  const Domain d = build_domain(cfg.domain);
  const Manifold m = sample_manifold(cfg.ranges, cfg.trajectories, cfg.seed, d, cfg.solver, cfg.workers);
  GenerateSummary s;
  s.manifest_hash = write_manifold(out_dir, m, d, cfg.solver, cfg.ranges, cfg.seed);
  s.snapshots = static_cast<int>(m.snapshots.size());
  s.trajectories = static_cast<int>(m.trajectories.size());
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

TrainedModel train_model(const RunConfig& cfg, const ManifoldStore& store) {
  const Domain d = build_domain(store.domain);
  const int n_traj = static_cast<int>(store.manifold.trajectories.size());
  auto [train, test] = split_trajectories(n_traj, cfg.test_fraction, cfg.seed);
  const std::set<int> train_set(train.begin(), train.end());

  std::vector<int> ids;
  for (std::size_t i = 0; i < store.manifold.snapshots.size(); ++i) {
    if (train_set.count(store.manifold.snapshots[i].trajectory)) ids.push_back(static_cast<int>(i));
  }
  if (ids.size() < 2) throw EmptyCell("training needs at least two snapshots");
  const int nu = d.velocity_count(), nc = d.cell_count();
  Eigen::MatrixXd xu(nu, static_cast<Eigen::Index>(ids.size())), xp(nu + nc, static_cast<Eigen::Index>(ids.size()));
  std::vector<ObservedParams> params;
  std::vector<int> traj;
  for (std::size_t c = 0; c < ids.size(); ++c) {
    const Snapshot& s = store.manifold.snapshots[static_cast<std::size_t>(ids[c])];
    xu.col(static_cast<Eigen::Index>(c)) = s.u;
    xp.col(static_cast<Eigen::Index>(c)) << s.u, s.p;
    params.push_back(observed(s.y));
    traj.push_back(s.trajectory);
  }

  const GramOperator gu = assemble_gram(d, SpaceTag::VelocityH1);
  const GramOperator gp = assemble_gram(d, SpaceTag::ProductUxP);
  const VoxelSet vox = build_voxels(d, cfg.voxels);
  const ObservationSpace wu(d, vox, gu), wp(d, vox, gp);

  TrainedModel m;
  m.domain = store.domain;
  m.voxels = cfg.voxels;
  m.rho = store.manifold.trajectories.front().rho;
  m.mu = store.manifold.trajectories.front().mu;
  m.manifold_hash = store.manifest_hash;
  m.config_hash = cfg.hash();
  m.train_trajectories = train;
  m.test_trajectories = test;
  m.sigma_ref = wu.measure(xu).cwiseAbs().maxCoeff();

  std::array<int, 2> kr = cfg.K_range, kpr = cfg.K_prime_range;
  if (train.size() == 1) kr = kpr = {1, 1};

  const TrainingSet tsu = make_training_set(xu, params, traj, gu, wu);
  m.velocity = select_partition(tsu, gu, wu, kr, kpr, &m.velocity_log);
  const TrainingSet tsp = make_training_set(std::move(xp), params, traj, gp, wp);
  m.joint = select_partition(tsp, gp, wp, kr, kpr, &m.joint_log);
  if (train.size() == 1) {
    m.velocity_log.back().note = m.joint_log.back().note = "single parameter draw: partition search skipped";
  }

  const Eigen::MatrixXd dp = product_dp_functional(d);
  std::vector<int> probes(static_cast<std::size_t>(tsp.size()));
  std::iota(probes.begin(), probes.end(), 0);
  for (const PartitionCell& cell : m.joint.cells) {
    const Eigen::MatrixXd vn = cell.basis.modes.leftCols(cell.curves.n_star);
    std::array<double, 2> k{};
    for (int i = 0; i < 2; ++i) {
      k[static_cast<std::size_t>(i)] = kappa_estimate(vn, wp, tsp, probes, dp.row(i).transpose()).kappa;
    }
    m.kappa.push_back(k);
  }
  return m;
}

TrainedModel cmd_train(const RunConfig& cfg, const fs::path& manifold_dir, const fs::path& out_dir) {
  const ManifoldStore store = read_manifold(manifold_dir);
  TrainedModel m = train_model(cfg, store);
  write_trained(out_dir, m);
  return m;
}

ReconstructOutcome cmd_reconstruct(const ReconstructRequest& req, const fs::path& trained_dir,
                                   const fs::path& manifold_dir, const fs::path& out_dir) {
  if (!req.y_obs) throw UsageError("reconstruct needs y_obs {phase, HR}");
  if (req.mode != "pbdw" && req.mode != "ls" && req.mode != "cls" && req.mode != "joint")
    throw UsageError("mode must be one of pbdw, ls, cls, joint");
  if (req.measurements_csv.empty() && req.snapshot_id < 0)
    throw UsageError("reconstruct needs measurements_csv or snapshot_id");

  const TrainedModel model = read_trained(trained_dir);
  const Domain d = build_domain(model.domain);
  const bool joint = req.mode == "joint";
  const PartitionGrid& grid = joint ? model.joint : model.velocity;
  const GramOperator g = assemble_gram(d, grid.tag);
  const ObservationSpace w(d, build_voxels(d, model.voxels), g);

  Eigen::VectorXd l;
  std::optional<Eigen::VectorXd> truth;
  if (!req.measurements_csv.empty()) {
    l = read_measurements_csv(req.measurements_csv);
    if (l.size() != w.size()) {
      throw ConfigError("measurement file has " + std::to_string(l.size()) + " values, the voxel set " +
                        std::to_string(w.size()));
    }
  } else {
    const nlohmann::json mj = read_manifold_manifest(manifold_dir);
    const auto& snaps = mj.at("snapshots");
    if (req.snapshot_id >= static_cast<int>(snaps.size())) throw OutOfRange("snapshot_id beyond the manifold");
    const auto& s = snaps.at(static_cast<std::size_t>(req.snapshot_id));
    const auto nu = static_cast<std::size_t>(d.velocity_count()), nc = static_cast<std::size_t>(d.cell_count());
    const auto data = read_f64(manifold_dir / s.at("file").get<std::string>(), nu + nc);
    truth = Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(joint ? nu + nc : nu));
    l = add_noise(w.measure(*truth), req.alpha, req.noise_seed, model.sigma_ref);
  }

  const int id = grid.cell_id(*req.y_obs);
  const PartitionCell& cell = grid.cells[static_cast<std::size_t>(id)];
  const int n = req.n > 0 ? std::min(req.n, cell.basis.size()) : cell.curves.n_star;
  const OrthonormalBasis vn = cell.basis.truncated(n);

  ReconstructOutcome out;
  double beta = 0.0, residual = 0.0;
  if (req.mode == "pbdw" || joint) {
    const ReconstructionResult r = piecewise_reconstruct(l, *req.y_obs, grid, w, n);
    out.field = r.u_star.coeffs;
    out.coefficients = r.v_star_coeffs;
    beta = r.beta_used;
    residual = r.residual;
  } else {
    const Eigen::MatrixXd c = w.measure(vn.vectors);
    out.coefficients = req.mode == "ls"
                           ? ls_unconstrained(l, c)
                           : ls_constrained(l, c, grid.coeff_bounds[static_cast<std::size_t>(id)].head(n));
    out.field = vn.vectors * out.coefficients;
    beta = infsup_beta(vn, w);
    residual = w.whiten(Eigen::VectorXd(l - c * out.coefficients)).norm();
  }
  const double eps = n - 1 < cell.curves.eps.size() ? cell.curves.eps[n - 1] : std::nan("");
  nlohmann::json diag = {{"mode", req.mode},
                         {"cell", {cell.k, cell.k_prime}},
                         {"n", n},
                         {"beta", beta},
                         {"residual", residual},
                         {"eps", eps},
                         {"bound", beta > 0.0 ? eps / beta : std::numeric_limits<double>::infinity()},
                         {"coefficients", std::vector<double>(out.coefficients.data(),
                                                              out.coefficients.data() + out.coefficients.size())}};
  if (truth) {
    const double ref = g.norm(*truth);
    diag["abs_error"] = g.norm(*truth - out.field);
    diag["relative_error"] = ref > 0.0 ? g.norm(*truth - out.field) / ref : 0.0;
  }
  if (joint) {
    const auto dps = pressure_drop(Field{out.field, SpaceTag::ProductUxP}, d);
    const auto& kappa = model.kappa[static_cast<std::size_t>(id)];
    diag["dp"] = dps;
    diag["dp_mmHg"] = {dps[0] / kDynPerMmHg, dps[1] / kDynPerMmHg};
    diag["kappa"] = kappa;
    diag["dp_bound"] = {dp_error_bound(kappa[0], eps), dp_error_bound(kappa[1], eps)};
    if (truth) diag["dp_truth"] = pressure_drop(Field{*truth, SpaceTag::ProductUxP}, d);
  }
  out.diagnostics = diag;
  ensure_directory(out_dir);
  write_f64(out_dir / "field.bin", out.field.data(), static_cast<std::size_t>(out.field.size()));
  write_json(out_dir / "diagnostics.json", diag);
  return out;
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json noise_rows = nlohmann::json::array();
  for (const auto& r : noise) {
    noise_rows.push_back({{"alpha", alpha_to_json(r.alpha)}, {"n", r.n}, {"mode", r.mode}, {"mean_error", r.mean_error},
                          {"samples", r.samples}});
  }
  return {{"test_snapshots", test_snapshots},
          {"bound_checks", bound_checks},
          {"bound_violations", bound_violations},
          {"max_bound_ratio", max_bound_ratio},
          {"dp_checks", dp_checks},
          {"dp_violations", dp_violations},
          {"max_dp_ratio", max_dp_ratio},
          {"noise", noise_rows},
          {"cls_inactive_checks", cls_inactive_checks},
          {"cls_inactive_max_diff", cls_inactive_max_diff},
          {"mean_velocity_error", mean_velocity_error},
          {"mean_pressure_error", mean_pressure_error},
          {"mean_vorticity_error", mean_vorticity_error},
          {"mean_wss_error", mean_wss_error},
          {"max_div_after", max_div_after},
          {"files_read", files_read},
          {"seconds", seconds}};
}

EvaluationReport cmd_evaluate(const RunConfig& cfg, const fs::path& manifold_dir, const fs::path& trained_dir,
                              const fs::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainedModel model = read_trained(trained_dir);
  const nlohmann::json mj = read_manifold_manifest(manifold_dir);
  if (mj.at("manifest_hash").get<std::string>() != model.manifold_hash)
    throw ConfigError("trained store was built from a different manifold");
  const std::set<int> train_set(model.train_trajectories.begin(), model.train_trajectories.end());
  for (int t : model.test_trajectories) {
    if (train_set.count(t)) throw ConfigError("test trajectory " + std::to_string(t) + " is also a training trajectory");
  }
  ensure_directory(out_dir);

  EvaluationReport rep;
  const std::set<int> test_set(model.test_trajectories.begin(), model.test_trajectories.end());
  for (const auto& s : mj.at("snapshots")) {
    if (test_set.count(s.at("trajectory").get<int>())) rep.files_read.push_back(s.at("file").get<std::string>());
  }
  const ManifoldStore store =
      model.test_trajectories.empty() ? ManifoldStore{} : read_manifold(manifold_dir, model.test_trajectories);
  for (const Snapshot& s : store.manifold.snapshots) {
    if (train_set.count(s.trajectory)) throw ConfigError("evaluation touched a training snapshot");
  }

  const Domain d = build_domain(model.domain);
  const GramOperator gu = assemble_gram(d, SpaceTag::VelocityH1);
  const GramOperator gp = assemble_gram(d, SpaceTag::ProductUxP);
  const VoxelSet vox = build_voxels(d, model.voxels);
  const ObservationSpace wu(d, vox, gu), wp(d, vox, gp);
  const int nu = d.velocity_count();

  Csv errors(out_dir / "errors.csv",
             "trajectory,snapshot,time,phase,HR,cell_k,cell_k_prime,n,beta,e_velocity_h1,e_velocity_l2,e_gradient_l2,"
             "e_pressure");
  Csv bounds(out_dir / "bounds.csv", "trajectory,snapshot,model,error,dist,beta,bound,ok");
  Csv dp_joint(out_dir / "dp_joint.csv",
               "trajectory,time,dp1,dp2,truth_dp1,truth_dp2,kappa1,kappa2,eps,bound1,bound2,ok");
  Csv dp_vw(out_dir / "dp_vw.csv", "trajectory,time,dp1,dp2,truth_dp1,truth_dp2,vw_truth_dp1,vw_truth_dp2");
  Csv qoi(out_dir / "qoi.csv", "trajectory,time,vort_err,vort_bound_ok,wss_err,div_before,div_after");
  Csv noise_csv(out_dir / "noise.csv", "alpha,n,mode,mean_rel_error,samples");

  if (store.manifold.snapshots.empty()) {
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(out_dir / "report.json", rep.to_json());
    return rep;
  }

  Eigen::VectorXd vol(nu);
  for (int k = 0; k < nu; ++k) vol[k] = d.dof(k).volume;
  const VorticityOperator curl(d);
  const double c_h = curl.operator_norm(gu);
  const WssEstimator wss_est(d);
  const HelmholtzProjector helmholtz(d);
  const StokesTestFields tf = stokes_test_fields(d);

  std::vector<std::unique_ptr<PbdwOperator>> vel_ops, joint_ops;
  for (const auto& c : model.velocity.cells) vel_ops.push_back(std::make_unique<PbdwOperator>(c.basis.truncated(c.curves.n_star), wu));
  for (const auto& c : model.joint.cells) joint_ops.push_back(std::make_unique<PbdwOperator>(c.basis.truncated(c.curves.n_star), wp));

  std::map<int, std::vector<std::size_t>> by_traj;
  for (std::size_t i = 0; i < store.manifold.snapshots.size(); ++i) by_traj[store.manifold.snapshots[i].trajectory].push_back(i);

  double sum_vel = 0.0, sum_p = 0.0, sum_vort = 0.0, sum_wss = 0.0;
  int count = 0;
  for (const auto& [traj, idx] : by_traj) {
    const std::size_t ns = idx.size();
    std::vector<double> err_h1(ns), err_l2(ns), err_grad(ns), err_p(ns), err_vort(ns);
    std::vector<double> ref_h1(ns), ref_l2(ns), ref_grad(ns), ref_p(ns), ref_vort(ns);
    std::vector<Eigen::VectorXd> u_proj(ns), u_true(ns);
    std::vector<std::array<double, 2>> dp_true(ns);
    std::vector<std::array<int, 3>> cell_info(ns);
    std::vector<double> betas(ns), wss_err(ns), div_before(ns), div_after(ns);
    std::vector<char> vort_ok(ns);
    for (std::size_t q = 0; q < ns; ++q) {
      const Snapshot& s = store.manifold.snapshots[idx[q]];
      const ObservedParams y = observed(s.y);

      const int vid = model.velocity.cell_id(y);
      const PartitionCell& vc = model.velocity.cells[static_cast<std::size_t>(vid)];
      const ReconstructionResult r = vel_ops[static_cast<std::size_t>(vid)]->reconstruct(wu.measure(s.u));
      const Eigen::VectorXd& us = r.u_star.coeffs;
      const Eigen::VectorXd e = s.u - us;
      err_h1[q] = gu.inner(e, e);
      err_l2[q] = vol.dot(e.cwiseAbs2());
      err_grad[q] = std::max(0.0, err_h1[q] - err_l2[q]);
      ref_h1[q] = gu.inner(s.u, s.u);
      ref_l2[q] = vol.dot(s.u.cwiseAbs2());
      ref_grad[q] = std::max(0.0, ref_h1[q] - ref_l2[q]);
      cell_info[q] = {vc.k, vc.k_prime, r.n_used};
      betas[q] = r.beta_used;

      const Eigen::MatrixXd vn = vc.basis.modes.leftCols(r.n_used);
      const double dist = gu.norm(s.u - vn * (vn.transpose() * gu.apply(s.u)));
      const double abs_err = std::sqrt(err_h1[q]);
      const double rhs = dist / r.beta_used + 1e-8 * std::sqrt(ref_h1[q]);
      ++rep.bound_checks;
      if (!(abs_err <= rhs)) ++rep.bound_violations;
      rep.max_bound_ratio = std::max(rep.max_bound_ratio, abs_err / rhs);
      bounds.row(traj, idx[q], "velocity", abs_err, dist, r.beta_used, rhs, abs_err <= rhs ? 1 : 0);

      // joint model: pressure and its drops
      Eigen::VectorXd x(nu + d.cell_count());
      x << s.u, s.p;
      const int jid = model.joint.cell_id(y);
      const PartitionCell& jc = model.joint.cells[static_cast<std::size_t>(jid)];
      const ReconstructionResult rj = joint_ops[static_cast<std::size_t>(jid)]->reconstruct(wp.measure(x));
      const Eigen::VectorXd ps = rj.u_star.coeffs.tail(d.cell_count());
      err_p[q] = d.cell_area() * (s.p - ps).squaredNorm();
      ref_p[q] = d.cell_area() * s.p.squaredNorm();
      const Eigen::MatrixXd vj = jc.basis.modes.leftCols(rj.n_used);
      const double dist_j = gp.norm(x - vj * (vj.transpose() * gp.apply(x)));
      const double eps = std::max(jc.curves.eps[rj.n_used - 1], dist_j);
      dp_true[q] = pressure_drop(s.p, d);
      const auto dps = pressure_drop(ps, d);
      const auto& kappa = model.kappa[static_cast<std::size_t>(jid)];
      bool ok = true;
      std::array<double, 2> bnd{};
      for (std::size_t i = 0; i < 2; ++i) {
        bnd[i] = dp_error_bound(kappa[i], eps) + 1e-6;
        const double de = std::abs(dp_true[q][i] - dps[i]);
        ++rep.dp_checks;
        if (!(de <= bnd[i])) {
          ++rep.dp_violations;
          ok = false;
        }
        rep.max_dp_ratio = std::max(rep.max_dp_ratio, de / bnd[i]);
      }
      dp_joint.row(traj, s.y.t, dps[0], dps[1], dp_true[q][0], dp_true[q][1], kappa[0], kappa[1], eps, bnd[0], bnd[1],
                   ok ? 1 : 0);
      const double abs_err_j = gp.norm(x - rj.u_star.coeffs);
      const double rhs_j = dist_j / rj.beta_used + 1e-8 * gp.norm(x);
      ++rep.bound_checks;
      if (!(abs_err_j <= rhs_j)) ++rep.bound_violations;
      rep.max_bound_ratio = std::max(rep.max_bound_ratio, abs_err_j / rhs_j);
      bounds.row(traj, idx[q], "joint", abs_err_j, dist_j, rj.beta_used, rhs_j, abs_err_j <= rhs_j ? 1 : 0);

      // derived quantities on the velocity reconstruction
      const VorticityField th = curl.apply(s.u), th_err = curl.apply(e);
      err_vort[q] = th_err.l2_norm() * th_err.l2_norm();
      ref_vort[q] = th.l2_norm() * th.l2_norm();
      vort_ok[q] = th_err.l2_norm() <= c_h * abs_err * (1.0 + 1e-12);
      wss_err[q] = wss_est.error(s.u, us, model.mu);
      div_before[q] = divergence_norm(d, us);
      u_proj[q] = helmholtz.apply(us);
      div_after[q] = divergence_norm(d, u_proj[q]);
      u_true[q] = s.u;
    }

    const auto e_h1 = time_relative_errors(err_h1, ref_h1), e_l2 = time_relative_errors(err_l2, ref_l2);
    const auto e_grad = time_relative_errors(err_grad, ref_grad), e_p = time_relative_errors(err_p, ref_p);
    const auto e_vort = time_relative_errors(err_vort, ref_vort);
    for (std::size_t q = 0; q < ns; ++q) {
      const Snapshot& s = store.manifold.snapshots[idx[q]];
      errors.row(traj, idx[q], s.y.t, phase_of(s.y), s.y.HR, cell_info[q][0], cell_info[q][1], cell_info[q][2], betas[q],
                 e_h1[q], e_l2[q], e_grad[q], e_p[q]);
      qoi.row(traj, s.y.t, e_vort[q], vort_ok[q] ? 1 : 0, wss_err[q], div_before[q], div_after[q]);
      sum_vel += e_h1[q];
      sum_p += e_p[q];
      sum_vort += e_vort[q];
      sum_wss += wss_err[q];
      rep.max_div_after = std::max(rep.max_div_after, div_after[q]);
      ++count;
    }

    // virtual works on consecutive snapshots of the cycle
    const Snapshot& first = store.manifold.snapshots[idx.front()];
    const double dt = ns > 1 ? store.manifold.snapshots[idx[1]].y.t - first.y.t : 0.0;
    const auto vw = vw_pressure_drop(d, u_proj, tf, model.rho, model.mu, dt);
    const auto vw_truth = vw_pressure_drop(d, u_true, tf, model.rho, model.mu, dt);
    for (std::size_t q = 0; q < vw.size(); ++q) {
      const std::size_t a = ns > 1 ? q : 0, b = ns > 1 ? q + 1 : 0;
      const double tm = 0.5 * (store.manifold.snapshots[idx[a]].y.t + store.manifold.snapshots[idx[b]].y.t);
      dp_vw.row(traj, tm, vw[q][0], vw[q][1], 0.5 * (dp_true[a][0] + dp_true[b][0]), 0.5 * (dp_true[a][1] + dp_true[b][1]),
                vw_truth[q][0], vw_truth[q][1]);
    }
  }
  rep.test_snapshots = count;
  rep.mean_velocity_error = sum_vel / count;
  rep.mean_pressure_error = sum_p / count;
  rep.mean_vorticity_error = sum_vort / count;
  rep.mean_wss_error = sum_wss / count;

  // Noise sweep on the velocity model: the reduced least-squares estimate for
  // n = 1..noise_n_max, averaged over realizations. Realization r uses the same
  // standard normal draw for every alpha and n, in antithetic pairs.
  struct Acc {
    double sum = 0.0;
    int count = 0;
  };
  std::map<std::tuple<std::size_t, int, int>, Acc> acc;  // (alpha index, n, mode)
  const int reals = cfg.noise_realizations;
  for (std::size_t i = 0; i < store.manifold.snapshots.size(); ++i) {
    const Snapshot& s = store.manifold.snapshots[i];
    const int vid = model.velocity.cell_id(observed(s.y));
    const PartitionCell& vc = model.velocity.cells[static_cast<std::size_t>(vid)];
    const Eigen::VectorXd l = wu.measure(s.u);
    const double unorm2 = gu.inner(s.u, s.u);
    const Eigen::VectorXd proj = vc.basis.modes.transpose() * gu.apply(s.u);
    std::vector<Eigen::VectorXd> xi;
    for (int r = 0; r < (reals + 1) / 2; ++r) {
      xi.push_back(add_noise(Eigen::VectorXd::Zero(l.size()), 1.0, mix_seed(cfg.seed, i, static_cast<std::uint64_t>(r)), 1.0));
    }
    const int n_max = std::min({cfg.noise_n_max, vc.basis.size(), wu.size()});
    for (int n = 1; n <= n_max; ++n) {
      const Eigen::MatrixXd c = wu.measure(Eigen::MatrixXd(vc.basis.modes.leftCols(n)));
      const Eigen::VectorXd bnd = model.velocity.coeff_bounds[static_cast<std::size_t>(vid)].head(n);
      auto rel_err = [&](const Eigen::VectorXd& coef) {
        const double e2 = unorm2 - 2.0 * coef.dot(proj.head(n)) + coef.squaredNorm();
        return std::sqrt(std::max(0.0, e2) / unorm2);
      };
      for (std::size_t ai = 0; ai < cfg.noise_alphas.size(); ++ai) {
        const double alpha = cfg.noise_alphas[ai];
        const double sigma = std::isinf(alpha) ? 0.0 : model.sigma_ref / alpha;
        for (int r = 0; r < reals; ++r) {
          const double sign = r % 2 == 0 ? 1.0 : -1.0;
          const Eigen::VectorXd z = l + sign * sigma * xi[static_cast<std::size_t>(r / 2)];
          const Eigen::VectorXd c_ls = ls_unconstrained(z, c);
          const Eigen::VectorXd c_cls = ls_constrained(z, c, bnd);
          auto& a_ls = acc[{ai, n, 0}];
          a_ls.sum += rel_err(c_ls);
          ++a_ls.count;
          auto& a_cls = acc[{ai, n, 1}];
          a_cls.sum += rel_err(c_cls);
          ++a_cls.count;
          if ((c_ls.cwiseAbs().array() <= bnd.array()).all()) {
            ++rep.cls_inactive_checks;
            rep.cls_inactive_max_diff = std::max(rep.cls_inactive_max_diff, (c_ls - c_cls).cwiseAbs().maxCoeff());
          }
        }
      }
    }
  }
  for (const auto& [key, a] : acc) {
    const auto& [ai, n, mode] = key;
    NoiseRow row{cfg.noise_alphas[ai], n, mode == 0 ? "ls" : "cls", a.sum / a.count, a.count};
    noise_csv.row(std::isinf(row.alpha) ? std::string("inf") : std::to_string(row.alpha), row.n, row.mode,
                  row.mean_error, row.samples);
    rep.noise.push_back(row);
  }

  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(out_dir / "report.json", rep.to_json());
  return rep;
}

}  // namespace flowrecon
