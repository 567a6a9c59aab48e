#pragma once

// End-to-end commands behind the command-line tool: manifold generation,
// offline training of the velocity and joint (velocity, pressure) models,
// online reconstruction and evaluation campaigns.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowrecon/flow.hpp"
#include "flowrecon/geometry.hpp"
#include "flowrecon/observation.hpp"
#include "flowrecon/reduced_models.hpp"
#include "flowrecon/store.hpp"

namespace flowrecon {

struct ReconstructRequest {
  std::string mode = "pbdw";            // pbdw | ls | cls | joint
  std::optional<ObservedParams> y_obs;  // required
  std::string measurements_csv;         // either this ...
  int snapshot_id = -1;                 // ... or a snapshot of the manifold store
  int n = 0;                            // 0: the cell's n*
  double alpha = kNoiseFree;            // synthetic noise on snapshot data
  std::uint64_t noise_seed = 0;

  nlohmann::json to_json() const;
  static ReconstructRequest from_json(const nlohmann::json& j);
};

struct RunConfig {
  DomainConfig domain;
  SolverConfig solver;
  ParameterRanges ranges;
  VoxelConfig voxels;

  int trajectories = 25;  // parameter draws; each stores the second simulated cycle
  std::uint64_t seed = 1;
  int workers = 1;

  std::array<int, 2> K_range{1, 4};
  std::array<int, 2> K_prime_range{1, 3};
  double test_fraction = 0.2;

  std::vector<double> noise_alphas{10.0, 20.0, kNoiseFree};
  int noise_realizations = 100;
  int noise_n_max = 10;

  ReconstructRequest reconstruct;
  std::string output_dir = "flowrecon_out";

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  std::string hash() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

struct TrainedModel {
  DomainConfig domain;
  VoxelConfig voxels;
  double rho = 1.0;
  double mu = 0.03;
  std::string manifold_hash;
  std::string config_hash;
  std::vector<int> train_trajectories;
  std::vector<int> test_trajectories;
  double sigma_ref = 0.0;                       // max over training data of max_i l_i
  PartitionGrid velocity;
  PartitionGrid joint;
  std::vector<std::array<double, 2>> kappa;     // per joint cell and outlet
  std::vector<PartitionSearchLog> velocity_log;
  std::vector<PartitionSearchLog> joint_log;
};

void write_trained(const std::filesystem::path& dir, const TrainedModel& model);
TrainedModel read_trained(const std::filesystem::path& dir);

/// Trajectory split by a seeded shuffle: at least one training trajectory,
/// round(test_fraction * count) test trajectories.
std::array<std::vector<int>, 2> split_trajectories(int count, double test_fraction, std::uint64_t seed);

struct GenerateSummary {
  int snapshots = 0;
  int trajectories = 0;
  double seconds = 0.0;
  std::string manifest_hash;
};

/// Samples the manifold and writes it to out_dir.
GenerateSummary cmd_generate(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Trains both models from a stored manifold. With a single parameter draw the
/// partition search is skipped and the 1 x 1 partition recorded.
TrainedModel train_model(const RunConfig& cfg, const ManifoldStore& store);
TrainedModel cmd_train(const RunConfig& cfg, const std::filesystem::path& manifold_dir,
                       const std::filesystem::path& out_dir);

struct ReconstructOutcome {
  Eigen::VectorXd field;          // u, or (u, p) in joint mode
  Eigen::VectorXd coefficients;   // reduced coefficients
  nlohmann::json diagnostics;
};

ReconstructOutcome cmd_reconstruct(const ReconstructRequest& request, const std::filesystem::path& trained_dir,
                                   const std::filesystem::path& manifold_dir, const std::filesystem::path& out_dir);

struct NoiseRow {
  double alpha = 0.0;
  int n = 0;
  std::string mode;
  double mean_error = 0.0;
  int samples = 0;
};

struct EvaluationReport {
  int test_snapshots = 0;
  int bound_checks = 0;
  int bound_violations = 0;
  double max_bound_ratio = 0.0;      // max ||u - u*|| / (beta^-1 dist + 1e-8 ||u||)
  int dp_checks = 0;
  int dp_violations = 0;
  double max_dp_ratio = 0.0;         // max |dp - dp*| / (2 kappa eps + 1e-6)
  std::vector<NoiseRow> noise;
  int cls_inactive_checks = 0;
  double cls_inactive_max_diff = 0.0;
  double mean_velocity_error = 0.0;  // time-normalized H1, averaged over test snapshots
  double mean_pressure_error = 0.0;
  double mean_vorticity_error = 0.0;
  double mean_wss_error = 0.0;
  double max_div_after = 0.0;
  std::vector<std::string> files_read;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Runs the campaign on the held-out trajectories recorded in the trained
/// store and writes the CSV tables and report.json to out_dir.
EvaluationReport cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& manifold_dir,
                              const std::filesystem::path& trained_dir, const std::filesystem::path& out_dir);

}  // namespace flowrecon
