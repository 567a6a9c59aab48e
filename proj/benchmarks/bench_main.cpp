#include <benchmark/benchmark.h>

#include <random>

#include "flowrecon/flow.hpp"
#include "flowrecon/hilbert.hpp"
#include "flowrecon/observation.hpp"
#include "flowrecon/pbdw.hpp"
#include "flowrecon/qoi.hpp"
#include "flowrecon/reduced_models.hpp"

using namespace flowrecon;

namespace {

const Domain& domain() {
  static const Domain d = build_domain(DomainConfig{});
  return d;
}

Eigen::MatrixXd random_matrix(int rows, int cols, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
  return m;
}

void BM_AssembleGram(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(assemble_gram(domain(), SpaceTag::ProductUxP));
}
BENCHMARK(BM_AssembleGram)->Unit(benchmark::kMillisecond);

void BM_RieszRepresenters(benchmark::State& state) {
  const GramOperator g = assemble_gram(domain(), SpaceTag::VelocityH1);
  const VoxelSet vox = build_voxels(domain(), VoxelConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(riesz_representers(domain(), vox, g));
}
BENCHMARK(BM_RieszRepresenters)->Unit(benchmark::kMillisecond);

void BM_PodBasis(benchmark::State& state) {
  const GramOperator g = assemble_gram(domain(), SpaceTag::VelocityH1);
  const Eigen::MatrixXd X = random_matrix(domain().velocity_count(), static_cast<int>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(pod_basis(X, g, 60));
}
BENCHMARK(BM_PodBasis)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_PbdwOnline(benchmark::State& state) {
  const GramOperator g = assemble_gram(domain(), SpaceTag::VelocityH1);
  const ObservationSpace w(domain(), build_voxels(domain(), VoxelConfig{}), g);
  const OrthonormalBasis vn{g_orthonormalize(random_matrix(domain().velocity_count(), static_cast<int>(state.range(0)), 2), g),
                            SpaceTag::VelocityH1};
  const PbdwOperator op(vn, w);
  const Eigen::VectorXd l = w.measure(Eigen::VectorXd(random_matrix(domain().velocity_count(), 1, 3)));
  for (auto _ : state) benchmark::DoNotOptimize(op.reconstruct(l));
}
BENCHMARK(BM_PbdwOnline)->Arg(5)->Arg(20)->Arg(60)->Unit(benchmark::kMicrosecond);

void BM_ConstrainedLs(benchmark::State& state) {
  const Eigen::MatrixXd C = random_matrix(134, 10, 4);
  const Eigen::VectorXd z = 5.0 * random_matrix(134, 1, 5);
  const Eigen::VectorXd bounds = Eigen::VectorXd::Constant(10, 0.05);
  for (auto _ : state) benchmark::DoNotOptimize(ls_constrained(z, C, bounds));
}
BENCHMARK(BM_ConstrainedLs)->Unit(benchmark::kMicrosecond);

void BM_UnsteadyCycle(benchmark::State& state) {
  FlowParams y;
  y.HR = 120.0;
  for (auto _ : state) benchmark::DoNotOptimize(solve_unsteady(y, domain(), SolverConfig{}, 1));
}
BENCHMARK(BM_UnsteadyCycle)->Unit(benchmark::kMillisecond)->Iterations(1);

void BM_HelmholtzProject(benchmark::State& state) {
  const HelmholtzProjector proj(domain());
  const Eigen::VectorXd u = random_matrix(domain().velocity_count(), 1, 6);
  for (auto _ : state) benchmark::DoNotOptimize(proj.apply(u));
}
BENCHMARK(BM_HelmholtzProject)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
