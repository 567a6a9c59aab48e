// flowrecon generate|train|reconstruct|evaluate --config <json> [--seed N] [--out DIR]
//
// Exit codes: 0 ok, 2 usage or configuration error, 3 numerical failure,
// 1 anything else (I/O).

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flowrecon/errors.hpp"
#include "flowrecon/pipeline.hpp"

namespace fs = std::filesystem;
using namespace flowrecon;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  // reconstruct overrides
  std::string mode, measurements;
  std::optional<int> snapshot, n;
  std::optional<double> phase, hr;
};

RunConfig load(const Options& o) {
  RunConfig cfg = load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  return cfg;
}

int run_generate(const Options& o) {
  const RunConfig cfg = load(o);
  const auto s = cmd_generate(cfg, fs::path(cfg.output_dir) / "manifold");
  std::cout << "snapshots " << s.snapshots << " trajectories " << s.trajectories << " wall " << s.seconds << " s"
            << " manifest " << s.manifest_hash << "\n";
  return 0;
}

int run_train(const Options& o) {
  const RunConfig cfg = load(o);
  const fs::path out(cfg.output_dir);
  const TrainedModel m = cmd_train(cfg, out / "manifold", out / "trained");
  std::cout << "velocity partition " << m.velocity.K << "x" << m.velocity.K_prime << " score " << m.velocity.score
            << "\njoint partition " << m.joint.K << "x" << m.joint.K_prime << " score " << m.joint.score << "\n";
  for (const auto& c : m.velocity.cells) {
    std::cout << "  velocity cell (" << c.k << "," << c.k_prime << ") snapshots " << c.members.size() << " n* "
              << c.curves.n_star << "\n";
  }
  return 0;
}

int run_reconstruct(const Options& o) {
  const RunConfig cfg = load(o);
  ReconstructRequest req = cfg.reconstruct;
  if (!o.mode.empty()) req.mode = o.mode;
  if (!o.measurements.empty()) req.measurements_csv = o.measurements;
  if (o.snapshot) req.snapshot_id = *o.snapshot;
  if (o.n) req.n = *o.n;
  if (o.phase || o.hr) {
    if (!(o.phase && o.hr)) throw UsageError("--phase and --hr go together");
    req.y_obs = ObservedParams{*o.phase, *o.hr};
  }
  const fs::path out(cfg.output_dir);
  const auto r = cmd_reconstruct(req, out / "trained", out / "manifold", out / "reconstruct");
  std::cout << r.diagnostics.dump(2) << "\n";
  return 0;
}

int run_evaluate(const Options& o) {
  const RunConfig cfg = load(o);
  const fs::path out(cfg.output_dir);
  const auto rep = cmd_evaluate(cfg, out / "manifold", out / "trained", out / "evaluate");
  std::cout << "test snapshots " << rep.test_snapshots << "\nbound violations " << rep.bound_violations << " / "
            << rep.bound_checks << "\npressure-drop violations " << rep.dp_violations << " / " << rep.dp_checks
            << "\nmean velocity error " << rep.mean_velocity_error << "\nmean pressure error "
            << rep.mean_pressure_error << "\nwall " << rep.seconds << " s\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reduced-model flow reconstruction from voxel velocity data"};
  app.require_subcommand(1, 1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the configured seed");
    sub->add_option("--out", o.out, "Output directory");
  };
  auto* gen = app.add_subcommand("generate", "Sample the solution manifold");
  auto* train = app.add_subcommand("train", "Train the partitioned reduced models");
  auto* rec = app.add_subcommand("reconstruct", "Reconstruct one field from measurements");
  auto* eval = app.add_subcommand("evaluate", "Run the evaluation campaign on held-out trajectories");
  for (auto* s : {gen, train, rec, eval}) add_common(s);
  rec->add_option("--mode", o.mode, "pbdw, ls, cls or joint");
  rec->add_option("--measurements", o.measurements, "Measurement CSV (voxel,value)");
  rec->add_option("--snapshot", o.snapshot, "Manifold snapshot id to measure");
  rec->add_option("--n", o.n, "Reduced dimension (default n*)");
  rec->add_option("--phase", o.phase, "Observed phase t/T");
  rec->add_option("--hr", o.hr, "Observed heart rate (1/min)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_generate(o);
    if (train->parsed()) return run_train(o);
    if (rec->parsed()) return run_reconstruct(o);
    return run_evaluate(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.numerical()) return 3;
    if (e.kind() == "UsageError" || e.kind() == "ConfigError") return 2;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
