#include <doctest.h>

#include <algorithm>
#include <set>

#include "flowrecon/errors.hpp"
#include "flowrecon/pipeline.hpp"
#include "flowrecon/store.hpp"
#include "support_pipeline.hpp"

using namespace flowrecon;
namespace fs = std::filesystem;

namespace {

// One manifold and trained model shared by the pipeline cases.
struct Shared {
  fs::path root = testsupport::scratch("pipeline");
  RunConfig cfg = testsupport::tiny_run();
  GenerateSummary gen;
  TrainedModel model;
  Shared() {
    gen = cmd_generate(cfg, root / "manifold");
    model = cmd_train(cfg, root / "manifold", root / "trained");
  }
};

Shared& shared() {
  static Shared s;
  return s;
}

}  // namespace

TEST_CASE("flat float64 files") {
  const fs::path dir = testsupport::scratch("f64");
  const std::vector<double> v{1.0, -2.5, 3.25e-300, 1e300};
  write_f64(dir / "a.bin", v.data(), v.size());
  CHECK(read_f64(dir / "a.bin", 4) == v);
  try {
    read_f64(dir / "a.bin", 5);
    FAIL("expected IOError");
  } catch (const IOError& e) {
    CHECK(std::string(e.what()).find("a.bin") != std::string::npos);
  }
  CHECK_THROWS_AS(read_f64(dir / "missing.bin", 1), IOError);
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("generate writes one directory per trajectory") {
  const fs::path dir = testsupport::scratch("gen2");
  RunConfig cfg = testsupport::tiny_run(2);
  const GenerateSummary a = cmd_generate(cfg, dir / "m1");
  CHECK(a.trajectories == 2);
  CHECK(a.snapshots == 40);
  int traj_dirs = 0;
  for (const auto& e : fs::directory_iterator(dir / "m1")) traj_dirs += e.is_directory();
  CHECK(traj_dirs == 2);
  const nlohmann::json mj = read_manifold_manifest(dir / "m1");
  REQUIRE(mj.at("trajectories").size() == 2);
  for (const auto& t : mj.at("trajectories"))
    for (const char* key : {"t", "HR", "s", "T_sys", "u0", "eta"}) CHECK(t.at("y").contains(key));
  CHECK(mj.at("snapshots").size() == 40);

  const GenerateSummary b = cmd_generate(cfg, dir / "m2");
  CHECK(a.manifest_hash == b.manifest_hash);

  const ManifoldStore st = read_manifold(dir / "m1");
  CHECK(st.manifold.snapshots.size() == 40);
  CHECK(st.manifest_hash == a.manifest_hash);
  CHECK(st.seed == cfg.seed);
  const Domain d = build_domain(cfg.domain);
  const Manifold fresh = sample_manifold(cfg.ranges, 2, cfg.seed, d, cfg.solver);
  for (std::size_t k = 0; k < 40; ++k) {
    CHECK(st.manifold.snapshots[k].u == fresh.snapshots[k].u);
    CHECK(st.manifold.snapshots[k].p == fresh.snapshots[k].p);
  }
  const ManifoldStore one = read_manifold(dir / "m1", {1});
  CHECK(one.manifold.snapshots.size() == 20);
  for (const auto& s : one.manifold.snapshots) CHECK(s.trajectory == 1);

  // output path occupied by a regular file
  std::ofstream(dir / "blocked") << "x";
  try {
    cmd_generate(cfg, dir / "blocked");
    FAIL("expected IOError");
  } catch (const IOError& e) {
    CHECK(std::string(e.what()).find("blocked") != std::string::npos);
  }
  // truncated snapshot file
  const std::string first = mj.at("snapshots")[0].at("file");
  fs::resize_file(dir / "m1" / first, 8);
  CHECK_THROWS_AS(read_manifold(dir / "m1"), IOError);
}

TEST_CASE("trajectory split") {
  const auto [train, test] = split_trajectories(25, 0.2, 1);
  CHECK(train.size() == 20);
  CHECK(test.size() == 5);
  std::set<int> all(train.begin(), train.end());
  for (int t : test) CHECK(all.insert(t).second);
  CHECK(all.size() == 25);
  CHECK(split_trajectories(25, 0.2, 1)[1] == test);
  CHECK(split_trajectories(1, 0.5, 1)[0].size() == 1);
  CHECK(split_trajectories(4, 0.0, 1)[1].empty());
}

TEST_CASE("run configuration") {
  RunConfig c = testsupport::tiny_run();
  c.noise_alphas = {10.0, kNoiseFree};
  const RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(std::isinf(back.noise_alphas[1]));
  nlohmann::json bad = c.to_json();
  bad["train"]["test_fraction"] = 1.5;
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
  bad = c.to_json();
  bad["manifold"]["trajectories"] = "many";
  CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
}

TEST_CASE("training artifacts") {
  auto& s = shared();
  const TrainedModel& m = s.model;
  CHECK(m.train_trajectories.size() == 3);
  CHECK(m.test_trajectories.size() == 1);
  CHECK(m.sigma_ref > 0.0);
  CHECK(m.velocity.K >= 1);
  CHECK(m.joint.tag == SpaceTag::ProductUxP);
  CHECK(m.kappa.size() == m.joint.cells.size());
  CHECK(fs::exists(s.root / "trained" / "velocity" / "curves.csv"));
  CHECK(testsupport::slurp(s.root / "trained" / "velocity" / "curves.csv").rfind("k,k_prime,n,eps,delta,beta", 0) == 0);

  const TrainedModel again = read_trained(s.root / "trained");
  CHECK(again.velocity.K == m.velocity.K);
  CHECK(again.velocity.cells[0].basis.modes == m.velocity.cells[0].basis.modes);
  CHECK(again.kappa == m.kappa);

  // a second training run writes byte-identical files
  cmd_train(s.cfg, s.root / "manifold", s.root / "trained2");
  for (const auto& e : fs::recursive_directory_iterator(s.root / "trained")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), s.root / "trained");
    CHECK_MESSAGE(testsupport::slurp(e.path()) == testsupport::slurp(s.root / "trained2" / rel), rel.string());
  }
}

TEST_CASE("single-draw manifold keeps the trivial partition") {
  const fs::path dir = testsupport::scratch("single");
  RunConfig cfg = testsupport::tiny_run(1);
  cfg.K_range = {1, 3};
  cfg.K_prime_range = {1, 2};
  cmd_generate(cfg, dir / "manifold");
  const TrainedModel m = cmd_train(cfg, dir / "manifold", dir / "trained");
  CHECK(m.velocity.K == 1);
  CHECK(m.velocity.K_prime == 1);
  CHECK(m.joint.K == 1);
  CHECK(m.joint.K_prime == 1);
  CHECK(m.test_trajectories.empty());
}

TEST_CASE("reconstruction requests") {
  auto& s = shared();
  const nlohmann::json mj = read_manifold_manifest(s.root / "manifold");
  const int train_traj = s.model.train_trajectories[0];
  int snap = -1;
  for (const auto& e : mj.at("snapshots"))
    if (e.at("trajectory").get<int>() == train_traj) {
      snap = e.at("id").get<int>();
      break;
    }
  REQUIRE(snap >= 0);
  const auto& entry = mj.at("snapshots")[static_cast<std::size_t>(snap)];
  ReconstructRequest req;
  req.snapshot_id = snap;
  const double HR = entry.at("y").at("HR").get<double>();
  req.y_obs = ObservedParams{entry.at("y").at("t").get<double>() / (60.0 / HR), HR};

  const auto pb = cmd_reconstruct(req, s.root / "trained", s.root / "manifold", s.root / "rec_pbdw");
  CHECK(pb.diagnostics.at("abs_error").get<double>() <= pb.diagnostics.at("bound").get<double>() * (1.0 + 1e-8));
  CHECK(fs::exists(s.root / "rec_pbdw" / "field.bin"));
  CHECK(fs::exists(s.root / "rec_pbdw" / "diagnostics.json"));

  req.mode = "ls";
  const auto ls = cmd_reconstruct(req, s.root / "trained", s.root / "manifold", s.root / "rec_ls");
  req.mode = "cls";
  const auto cls = cmd_reconstruct(req, s.root / "trained", s.root / "manifold", s.root / "rec_cls");
  CHECK((ls.coefficients - cls.coefficients).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, ls.coefficients.cwiseAbs().maxCoeff()));

  req.mode = "joint";
  const auto joint = cmd_reconstruct(req, s.root / "trained", s.root / "manifold", s.root / "rec_joint");
  const Domain d = build_domain(s.cfg.domain);
  CHECK(joint.field.size() == d.velocity_count() + d.cell_count());
  CHECK(joint.diagnostics.contains("dp_bound"));

  // measurements from a file
  const GramOperator g = assemble_gram(d, SpaceTag::VelocityH1);
  const ObservationSpace w(d, build_voxels(d, s.cfg.voxels), g);
  write_measurements_csv((s.root / "meas.csv").string(), w.measure(Eigen::VectorXd(pb.field)));
  ReconstructRequest from_file;
  from_file.measurements_csv = (s.root / "meas.csv").string();
  from_file.y_obs = req.y_obs;
  const auto ff = cmd_reconstruct(from_file, s.root / "trained", s.root / "manifold", s.root / "rec_file");
  CHECK((ff.field - pb.field).norm() <= 1e-8 * pb.field.norm());

  ReconstructRequest missing;
  missing.snapshot_id = 0;
  CHECK_THROWS_AS(cmd_reconstruct(missing, s.root / "trained", s.root / "manifold", s.root / "rec_x"), UsageError);
  req.mode = "magic";
  CHECK_THROWS_AS(cmd_reconstruct(req, s.root / "trained", s.root / "manifold", s.root / "rec_x"), UsageError);
  req.mode = "pbdw";
  req.y_obs = ObservedParams{0.5, 200.0};
  CHECK_THROWS_AS(cmd_reconstruct(req, s.root / "trained", s.root / "manifold", s.root / "rec_x"), OutOfRange);
}

TEST_CASE("evaluation campaign") {
  auto& s = shared();
  const EvaluationReport rep = cmd_evaluate(s.cfg, s.root / "manifold", s.root / "trained", s.root / "evaluate");
  CHECK(rep.test_snapshots == 20);
  CHECK(rep.bound_checks > 0);
  CHECK(rep.bound_violations == 0);
  CHECK(rep.dp_checks > 0);
  CHECK(rep.dp_violations == 0);
  CHECK(rep.max_div_after <= 1e-8);
  // only held-out snapshot files are read
  const nlohmann::json mj = read_manifold_manifest(s.root / "manifold");
  const std::set<int> test(s.model.test_trajectories.begin(), s.model.test_trajectories.end());
  for (const auto& f : rep.files_read) {
    bool held_out = false;
    for (const auto& e : mj.at("snapshots"))
      if (e.at("file").get<std::string>() == f) held_out = test.count(e.at("trajectory").get<int>()) > 0;
    CHECK_MESSAGE(held_out, f);
  }
  // noise rows: mean error nonincreasing in alpha at fixed n and mode
  for (const auto& a : rep.noise)
    for (const auto& b : rep.noise)
      if (a.n == b.n && a.mode == b.mode && a.alpha < b.alpha) CHECK(b.mean_error <= a.mean_error + 1e-12);
  CHECK(rep.cls_inactive_max_diff <= 1e-10);
  for (const char* f : {"errors.csv", "bounds.csv", "dp_joint.csv", "dp_vw.csv", "qoi.csv", "noise.csv", "report.json"})
    CHECK(fs::exists(s.root / "evaluate" / f));
  const nlohmann::json j = read_json(s.root / "evaluate" / "report.json");
  CHECK(j.at("bound_violations") == 0);
}

TEST_CASE("empty campaign") {
  const fs::path dir = testsupport::scratch("empty");
  RunConfig cfg = testsupport::tiny_run(2);
  cfg.test_fraction = 0.0;
  cmd_generate(cfg, dir / "manifold");
  cmd_train(cfg, dir / "manifold", dir / "trained");
  const EvaluationReport rep = cmd_evaluate(cfg, dir / "manifold", dir / "trained", dir / "evaluate");
  CHECK(rep.test_snapshots == 0);
  CHECK(rep.bound_checks == 0);
  CHECK(rep.files_read.empty());
  const nlohmann::json j = read_json(dir / "evaluate" / "report.json");
  const nlohmann::json full = EvaluationReport{}.to_json();
  for (const auto& [key, value] : full.items()) CHECK_MESSAGE(j.contains(key), key);
  CHECK(testsupport::slurp(dir / "evaluate" / "errors.csv").rfind("trajectory,snapshot,time", 0) == 0);
}
