#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <unistd.h>

#include "flowrecon/pipeline.hpp"
#include "support.hpp"

namespace testsupport {

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("flowrecon_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// A few short trajectories on the coarse channel.
inline flowrecon::RunConfig tiny_run(int trajectories = 4) {
  flowrecon::RunConfig c;
  c.domain = coarse_config();
  c.voxels = coarse_voxels();
  c.ranges.HR = {110.0, 120.0};
  c.trajectories = trajectories;
  c.seed = 5;
  c.K_range = {1, 2};
  c.K_prime_range = {1, 1};
  c.test_fraction = 0.25;
  c.noise_realizations = 10;
  c.noise_n_max = 3;
  return c;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testsupport
