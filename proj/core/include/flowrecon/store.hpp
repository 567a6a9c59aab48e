#pragma once

// On-disk stores. A store is a directory with a JSON manifest and flat
// little-endian float64 arrays. Manifolds keep one subdirectory per
// trajectory with one file per snapshot (u followed by p); trained partitions
// keep one modes file per cell (column after column).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "flowrecon/flow.hpp"
#include "flowrecon/geometry.hpp"
#include "flowrecon/reduced_models.hpp"

namespace flowrecon {

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

void write_f64(const std::filesystem::path& path, const double* data, std::size_t count);
/// Reads exactly `count` values; IOError (with the path) on a size mismatch.
std::vector<double> read_f64(const std::filesystem::path& path, std::size_t count);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
/// Creates the directory (and parents); IOError when it exists as a file or
/// cannot be created.
void ensure_directory(const std::filesystem::path& dir);

struct ManifoldStore {
  Manifold manifold;
  DomainConfig domain;
  SolverConfig solver;
  ParameterRanges ranges;
  std::uint64_t seed = 0;
  std::string manifest_hash;
};

/// Writes manifest.json and traj_XXX/snap_XXX.bin. Returns the manifest hash,
/// which depends only on the stored content.
std::string write_manifold(const std::filesystem::path& dir, const Manifold& m, const Domain& domain,
                           const SolverConfig& solver, const ParameterRanges& ranges, std::uint64_t seed);

/// Loads the manifest and, when `trajectories` is non-empty, only the
/// snapshots of those trajectories.
ManifoldStore read_manifold(const std::filesystem::path& dir, const std::vector<int>& trajectories = {});

/// Manifest part of a stored manifold without any field data.
nlohmann::json read_manifold_manifest(const std::filesystem::path& dir);

/// PartitionGrid under dir: manifest.json (curves, n*, members, bounds, plus
/// `extra`), cell_K_Kp/modes.bin and curves.csv.
void write_partition(const std::filesystem::path& dir, const PartitionGrid& grid, const nlohmann::json& extra = {});
PartitionGrid read_partition(const std::filesystem::path& dir, nlohmann::json* extra = nullptr);

/// Per-cell curves as CSV: k,k_prime,n,eps,delta,beta.
void write_curves_csv(const std::filesystem::path& path, const PartitionGrid& grid);

}  // namespace flowrecon
