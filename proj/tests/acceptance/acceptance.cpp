// Acceptance run on the default configuration: generates the 500-snapshot
// manifold, trains, evaluates, and checks every criterion. One line per
// criterion; exit status 1 if any fails.
//
//   acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "flowrecon/flow.hpp"
#include "flowrecon/pbdw.hpp"
#include "flowrecon/pipeline.hpp"
#include "flowrecon/qoi.hpp"
#include "flowrecon/store.hpp"
#include "support.hpp"

using namespace flowrecon;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Partition chosen on the default configuration (first full run).
constexpr int kExpectedVelocityK = 1;
constexpr int kExpectedVelocityKp = 2;

struct Outcome {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;

void record(int id, const std::string& name, bool pass, const std::string& detail) {
  outcomes.push_back({id, name, pass, detail});
  std::printf("[%s] %2d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

template <class... T>
std::string fmt(const char* f, T... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Eigen::MatrixXd velocity_matrix(const Manifold& m) {
  const auto& s = m.snapshots;
  Eigen::MatrixXd X(s.front().u.size(), static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) X.col(static_cast<Eigen::Index>(k)) = s[k].u;
  return X;
}

ObservedParams observed(const FlowParams& y) { return {std::clamp(y.t / y.period(), 0.0, 1.0), y.HR}; }

// Coarse-to-fine lattice search for argmin ||target - A c|| with |c_j| <= box.
// Every level is exhaustive over its window; the final spacing is `h_final`.
Eigen::VectorXd lattice_argmin(const Eigen::VectorXd& target, const Eigen::MatrixXd& A, double box, double h_final) {
  const int n = static_cast<int>(A.cols());
  auto f = [&](const Eigen::VectorXd& c) { return (target - A * c).squaredNorm(); };
  Eigen::VectorXd center = Eigen::VectorXd::Zero(n);
  double half = box, h = box / 20.0;
  while (true) {
    const bool last = h <= h_final * (1.0 + 1e-12);
    if (last) h = h_final;
    const int k = static_cast<int>(std::ceil(half / h));
    const int side = 2 * k + 1;
    long total = 1;
    for (int j = 0; j < n; ++j) total *= side;
    Eigen::VectorXd best = center, c(n);
    double fbest = f(center);
    for (long idx = 0; idx < total; ++idx) {
      long r = idx;
      for (int j = 0; j < n; ++j) {
        c[j] = center[j] + h * static_cast<double>(r % side - k);
        r /= side;
      }
      const double v = f(c);
      if (v < fbest) {
        fbest = v;
        best = c;
      }
    }
    center = best;
    if (last) return center;
    half = 10.0 * h;
    h = std::max(h / 4.0, h_final);
    if (h == h_final) half = std::min(half, 40.0 * h_final);
  }
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "flowrecon_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  RunConfig cfg;  // defaults: 120 x 20 channel, 25 draws of 20 snapshots
  cfg.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  cfg.output_dir = work.string();
  std::printf("work dir %s, %d worker(s)\n", work.c_str(), cfg.workers);

  // ---- end-to-end pipeline -------------------------------------------------
  const auto t_pipeline = Clock::now();
  const GenerateSummary gen = cmd_generate(cfg, work / "manifold");
  const double t_gen = seconds_since(t_pipeline);
  const TrainedModel model = cmd_train(cfg, work / "manifold", work / "trained");
  const double t_train = seconds_since(t_pipeline) - t_gen;
  const EvaluationReport rep = cmd_evaluate(cfg, work / "manifold", work / "trained", work / "evaluate");
  const double t_total = seconds_since(t_pipeline);
  std::printf("pipeline: %d snapshots, generate %.1f s, train %.1f s, evaluate %.1f s\n", gen.snapshots, t_gen, t_train,
              t_total - t_gen - t_train);
  std::printf("velocity partition %d x %d (score %.4g), joint partition %d x %d (score %.4g)\n", model.velocity.K,
              model.velocity.K_prime, model.velocity.score, model.joint.K, model.joint.K_prime, model.joint.score);

  const Domain d = build_domain(cfg.domain);
  const GramOperator gu = assemble_gram(d, SpaceTag::VelocityH1);
  const GramOperator gp = assemble_gram(d, SpaceTag::ProductUxP);
  const VoxelSet vox = build_voxels(d, cfg.voxels);
  const ObservationSpace wu(d, vox, gu), wp(d, vox, gp);
  const ManifoldStore held = read_manifold(work / "manifold", model.test_trajectories);
  const ManifoldStore train = read_manifold(work / "manifold", model.train_trajectories);
  const int m = wu.size();

  // ---- 1: exact recovery ---------------------------------------------------
  {
    const auto t0 = Clock::now();
    double worst = 0.0;
    int fields = 0;
    for (int r = 0; r < 20; ++r) {
      const PartitionCell& cell = model.velocity.cells[static_cast<std::size_t>(r) % model.velocity.cells.size()];
      const OrthonormalBasis vn = cell.basis.truncated(cell.curves.n_star);
      const Eigen::VectorXd u = vn.vectors * testsupport::random_vector(vn.size(), 1000 + r);
      const PbdwOperator op(vn, wu);
      const ReconstructionResult res = op.reconstruct(wu.measure(u));
      worst = std::max(worst, gu.norm(res.u_star.coeffs - u) / gu.norm(u));
      ++fields;
    }
    const double secs = seconds_since(t0);
    record(1, "exact recovery", fields == 20 && worst <= 1e-8 && secs < 10.0,
           fmt("%d fields, max relative error %.2e, %.2f s", fields, worst, secs));
  }

  // ---- 2: reconstruction bound over held-out snapshots and every cell -------
  {
    int checks = 0, violations = 0;
    double worst = 0.0;
    for (const auto& cell : model.velocity.cells) {
      const OrthonormalBasis vn = cell.basis.truncated(cell.curves.n_star);
      const PbdwOperator op(vn, wu);
      for (const Snapshot& s : held.manifold.snapshots) {
        const ReconstructionResult res = op.reconstruct(wu.measure(s.u));
        const double err = gu.norm(res.u_star.coeffs - s.u);
        const double dist = gu.norm(s.u - project_subspace(vn, gu, Field{s.u, SpaceTag::VelocityH1}).coeffs);
        const double bound = dist / op.beta() + 1e-8 * gu.norm(s.u);
        worst = std::max(worst, err / bound);
        violations += err > bound;
        ++checks;
      }
    }
    const bool ok = held.manifold.snapshots.size() >= 100 && violations == 0 && rep.bound_violations == 0 &&
                    rep.bound_checks > 0;
    record(2, "reconstruction bound", ok,
           fmt("%zu held-out snapshots x %zu cells: %d/%d violations (max ratio %.3f); campaign %d/%d",
               held.manifold.snapshots.size(), model.velocity.cells.size(), violations, checks, worst,
               rep.bound_violations, rep.bound_checks));
  }

  // ---- 3: Riesz fidelity ---------------------------------------------------
  {
    double worst = 0.0;
    for (const auto* w : {&wu, &wp}) {
      const GramOperator& g = w->tag() == SpaceTag::VelocityH1 ? gu : gp;
      for (int r = 0; r < 20; ++r) {
        const Eigen::VectorXd v = testsupport::random_vector(g.dimension(), 2000 + r);
        const Eigen::VectorXd diff = w->representers().transpose() * g.apply(v) - w->measure(v);
        worst = std::max(worst, diff.cwiseAbs().maxCoeff() / g.norm(v));
      }
    }
    record(3, "Riesz fidelity", worst <= 1e-10, fmt("20 fields x %d functionals x 2 spaces, max |<w,v> - l(v)|/||v|| %.2e", m, worst));
  }

  // ---- 4: stability constant -----------------------------------------------
  {
    bool ok = true;
    double worst_increase = 0.0;
    int curves = 0;
    for (const PartitionGrid* grid : {&model.velocity, &model.joint}) {
      for (const auto& cell : grid->cells) {
        const Eigen::VectorXd& b = cell.curves.beta;
        for (int n = 0; n < b.size(); ++n) {
          ok = ok && b[n] >= 0.0 && b[n] <= 1.0 + 1e-12;
          if (n > 0) worst_increase = std::max(worst_increase, b[n] - b[n - 1]);
        }
        ++curves;
      }
    }
    const ReducedBasis big = pod_basis(velocity_matrix(train.manifold), gu, m + 5);
    const Eigen::VectorXd b = beta_curve(big.modes, wu);
    double beyond = 0.0;
    for (int n = 0; n < b.size(); ++n) {
      ok = ok && b[n] >= 0.0 && b[n] <= 1.0 + 1e-12;
      if (n > 0) worst_increase = std::max(worst_increase, b[n] - b[n - 1]);
      if (n + 1 > m) beyond = std::max(beyond, b[n]);
    }
    ok = ok && worst_increase <= 1e-10 && beyond == 0.0 && big.size() == m + 5;
    record(4, "stability monotonicity", ok,
           fmt("%d cell curves + %d-mode curve, max increase %.2e, max beta for n > m %.2e", curves, big.size(),
               worst_increase, beyond));
  }

  // ---- 5: normal equations against a lattice search ----------------------
  {
    const VoxelSet few = build_voxels(d, 0.3, Rect{0.0, 0.6, 0.0, 1.0}, cfg.voxels.beam_angle);
    const ObservationSpace w(d, few, gu);
    const ReducedBasis pod = pod_basis(velocity_matrix(train.manifold), gu, 3);
    double worst = 0.0;
    bool ok = w.size() <= 10;
    for (int n = 1; n <= 3; ++n) {
      const OrthonormalBasis vn = pod.truncated(n);
      const double beta = infsup_beta(vn, w);
      for (int k = 0; k < 3; ++k) {
        const Snapshot& s = held.manifold.snapshots[static_cast<std::size_t>(7 * k + 3)];
        Eigen::VectorXd l = w.measure(s.u);
        l /= w.whiten(l).norm();  // ||omega|| = 1, hence |c| <= 1/beta
        const Eigen::VectorXd c = pbdw_v_star(l, vn, w);
        const Eigen::VectorXd g =
            lattice_argmin(w.whiten(l), w.whiten(w.measure(Eigen::MatrixXd(vn.vectors))), 1.0 / beta, 1e-3);
        worst = std::max(worst, (c - g).cwiseAbs().maxCoeff());
      }
    }
    ok = ok && worst <= 1e-3;
    record(5, "brute-force oracle", ok, fmt("m = %d, n = 1..3, max |v* - lattice argmin| %.2e (spacing 1e-3)", w.size(), worst));
  }

  // ---- 6: pressure-drop certificate ---------------------------------------
  record(6, "pressure-drop certificate", rep.dp_checks > 0 && rep.dp_violations == 0,
         fmt("%d/%d violations, max |dp - dp*|/(2 kappa eps + 1e-6) %.3f", rep.dp_violations, rep.dp_checks,
             rep.max_dp_ratio));

  // ---- 7: virtual works on a steady solution -----------------------------
  {
    FlowParams y;
    const Snapshot s = solve_steady(y, d, {0.0, 0.0});
    const StokesTestFields tf = stokes_test_fields(d);
    const auto vw = vw_pressure_drop(d, {s.u}, tf, y.rho, y.mu, 0.0)[0];
    const auto truth = pressure_drop(s.p, d);
    double rel = 0.0, off = 0.0, mass = 0.0;
    for (int i = 0; i < 2; ++i) {
      rel = std::max(rel, std::abs(vw[i] - truth[i]) / std::abs(truth[i]));
      off = std::max(off, std::abs(tf.F(i, 1 - i)) / std::abs(tf.F(i, i)));
      mass = std::max(mass, std::abs(tf.F(i, i) + tf.inlet_flux[static_cast<std::size_t>(i)]) / std::abs(tf.F(i, i)));
    }
    record(7, "virtual-works consistency", rel <= 0.05 && off <= 1e-6 && mass <= 1e-6,
           fmt("dp truth (%.2f, %.2f), virtual works (%.2f, %.2f): rel %.2e; F off/diag %.2e; mass %.2e", truth[0],
               truth[1], vw[0], vw[1], rel, off, mass));
  }

  // ---- 8: forward-solver physics -------------------------------------------
  {
    FlowParams y;
    y.HR = 75.0;
    y.s = 0.15;
    y.eta = 0.6;
    const auto steps = solve_unsteady_all_steps(y, d, cfg.solver, 2);
    double mass = 0.0;
    for (const auto& s : steps) {
      const double q_in = inlet_flux(d, s.u);
      const auto q = outlet_fluxes(d, s.u);
      mass = std::max(mass, std::abs(q_in + q[0] + q[1]) / std::abs(q_in));
    }
    WindkesselState st;
    const auto& wk = st.params[0];
    const double q0 = st.p_d[0] / wk.R_d;
    auto flux = [&](double t) { return q0 * (1.0 + 0.5 * std::sin(2.0 * 3.14159265358979323846 * t)); };
    const double dt = 2e-3;
    double wk_err = 0.0, y_ref = st.p_d[0];
    WindkesselState cur = st;
    for (int k = 0; k < 500; ++k) {
      const double t = k * dt;
      cur = windkessel_step(cur, {flux(t), flux(t)}, dt).state;
      y_ref = testsupport::dopri45([&](double tt, double p) { return (flux(tt) - p / wk.R_d) / wk.C_d; }, t, y_ref, t + dt);
      wk_err = std::max(wk_err, std::abs(cur.p_d[0] - y_ref) / std::abs(y_ref));
    }
    record(8, "forward-solver physics", mass <= 1e-6 && wk_err <= 1e-3,
           fmt("%zu steps, max mass imbalance %.2e; Windkessel vs adaptive ODE over 1 s: %.2e", steps.size(), mass, wk_err));
  }

  // ---- 9: noise behaviour --------------------------------------------------
  {
    bool monotone = true;
    int pairs = 0, min_samples = std::numeric_limits<int>::max();
    for (const auto& a : rep.noise) {
      min_samples = std::min(min_samples, a.samples);
      for (const auto& b : rep.noise) {
        if (a.n != b.n || a.mode != b.mode || !(a.alpha < b.alpha)) continue;
        ++pairs;
        monotone = monotone && b.mean_error <= a.mean_error;
      }
    }
    const bool ok = monotone && pairs > 0 && cfg.noise_realizations >= 100 && rep.cls_inactive_checks > 0 &&
                    rep.cls_inactive_max_diff <= 1e-10;
    record(9, "noise behaviour", ok,
           fmt("%zu rows, %d alpha pairs monotone: %s, %d realizations; cls = ls on %d inactive cases (max diff %.1e)",
               rep.noise.size(), pairs, monotone ? "yes" : "no", cfg.noise_realizations, rep.cls_inactive_checks,
               rep.cls_inactive_max_diff));
  }

  // ---- 10 / 11: Helmholtz projection and WSS estimator on reconstructions -
  {
    const HelmholtzProjector proj(d);
    const WssEstimator wss_est(d);
    double div_ratio = 0.0, idem = 0.0, self = 0.0, scale_dev = 0.0;
    bool div_ok = true;
    for (int k = 0; k < 20; ++k) {
      const Snapshot& s = held.manifold.snapshots[static_cast<std::size_t>(k * 5 % held.manifold.snapshots.size())];
      const ReconstructionResult res = piecewise_reconstruct(wu.measure(s.u), observed(s.y), model.velocity, wu);
      const Eigen::VectorXd& us = res.u_star.coeffs;
      const double din = divergence_norm(d, us);
      const Eigen::VectorXd out = proj.apply(us);
      const double dout = divergence_norm(d, out);
      div_ok = div_ok && dout <= std::max(1e-8, 1e-3 * din);
      div_ratio = std::max(div_ratio, dout / std::max(din, 1e-300));
      idem = std::max(idem, (proj.apply(out) - out).norm() / out.norm());

      self = std::max(self, wss_est.error(s.u, s.u, 0.03));
      const double e = wss_est.error(s.u, us, 0.03);
      for (double c : {0.01, 3.7, 250.0}) scale_dev = std::max(scale_dev, std::abs(wss_est.error(c * s.u, c * us, 0.03) - e));
    }
    record(10, "Helmholtz projection", div_ok && idem <= 1e-8,
           fmt("20 reconstructions, max div out/in %.2e, idempotence %.2e", div_ratio, idem));
    record(11, "WSS estimator", self == 0.0 && scale_dev <= 1e-10,
           fmt("e(u,u) max %.1e, max deviation under scaling %.2e", self, scale_dev));
  }

  // ---- 12: end-to-end runtime ---------------------------------------------
  record(12, "end-to-end runtime", gen.snapshots == 500 && rep.test_snapshots >= 100 && t_total < 1800.0,
         fmt("%d snapshots, %d held out, %.1f s total on %d worker(s) (limit 1800 s)", gen.snapshots,
             rep.test_snapshots, t_total, cfg.workers));

  const bool regression = model.velocity.K == kExpectedVelocityK && model.velocity.K_prime == kExpectedVelocityKp;
  std::printf("[%s] partition regression: %d x %d (recorded %d x %d)\n", regression ? "PASS" : "FAIL", model.velocity.K,
              model.velocity.K_prime, kExpectedVelocityK, kExpectedVelocityKp);

  int failed = regression ? 0 : 1;
  for (const auto& o : outcomes) failed += !o.pass;
  std::printf("%zu criteria, %d failed\n", outcomes.size(), failed);
  return failed == 0 ? 0 : 1;
}
