#include "flowrecon/store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "flowrecon/errors.hpp"

namespace flowrecon {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifoldFormat = "flowrecon-manifold/1";
constexpr const char* kPartitionFormat = "flowrecon-partition/1";

std::uint64_t fnv1a(const unsigned char* p, std::size_t n, std::uint64_t h = 14695981039346656037ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::uint64_t byteswap64(std::uint64_t v) {
  v = ((v & 0x00FF00FF00FF00FFULL) << 8) | ((v >> 8) & 0x00FF00FF00FF00FFULL);
  v = ((v & 0x0000FFFF0000FFFFULL) << 16) | ((v >> 16) & 0x0000FFFF0000FFFFULL);
  return (v << 32) | (v >> 32);
}

std::vector<unsigned char> to_le_bytes(const double* data, std::size_t count) {
  std::vector<unsigned char> bytes(count * 8);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t v;
    std::memcpy(&v, data + i, 8);
    if constexpr (std::endian::native == std::endian::big) v = byteswap64(v);
    std::memcpy(bytes.data() + 8 * i, &v, 8);
  }
  return bytes;
}

std::string snapshot_file(int trajectory, int index) {
  std::ostringstream os;
  os << "traj_" << std::setw(3) << std::setfill('0') << trajectory << "/snap_" << std::setw(3) << std::setfill('0')
     << index << ".bin";
  return os.str();
}

std::string cell_dir(int k, int kp) { return "cell_" + std::to_string(k) + "_" + std::to_string(kp); }

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  return hex(fnv1a(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

void write_f64(const fs::path& path, const double* data, std::size_t count) {
  const auto bytes = to_le_bytes(data, count);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IOError("write failed: " + path.string());
}

std::vector<double> read_f64(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IOError("cannot read " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size != count * 8) {
    throw IOError(path.string() + " holds " + std::to_string(size) + " bytes, expected " + std::to_string(count * 8));
  }
  in.seekg(0);
  std::vector<double> out(count);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
  if (!in) throw IOError("read failed: " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (double& x : out) {
      std::uint64_t v;
      std::memcpy(&v, &x, 8);
      v = byteswap64(v);
      std::memcpy(&x, &v, 8);
    }
  }
  return out;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IOError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IOError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IOError("write failed: " + path.string());
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_directory(dir, ec)) throw IOError(dir.string() + " exists and is not a directory");
  fs::create_directories(dir, ec);
  if (ec) throw IOError("cannot create " + dir.string() + ": " + ec.message());
}

std::string write_manifold(const fs::path& dir, const Manifold& m, const Domain& domain, const SolverConfig& solver,
                           const ParameterRanges& ranges, std::uint64_t seed) {
  ensure_directory(dir);
  nlohmann::json snaps = nlohmann::json::array();
  std::vector<int> per_traj(m.trajectories.size(), 0);
  for (std::size_t id = 0; id < m.snapshots.size(); ++id) {
    const Snapshot& s = m.snapshots[id];
    if (s.trajectory < 0 || static_cast<std::size_t>(s.trajectory) >= per_traj.size())
      throw ConfigError("snapshot refers to an unknown trajectory");
    const std::string file = snapshot_file(s.trajectory, per_traj[static_cast<std::size_t>(s.trajectory)]++);
    ensure_directory((dir / file).parent_path());
    std::vector<double> data(static_cast<std::size_t>(s.u.size() + s.p.size()));
    std::copy(s.u.data(), s.u.data() + s.u.size(), data.begin());
    std::copy(s.p.data(), s.p.data() + s.p.size(), data.begin() + s.u.size());
    write_f64(dir / file, data.data(), data.size());
    const auto bytes = to_le_bytes(data.data(), data.size());
    snaps.push_back({{"id", id},
                     {"file", file},
                     {"trajectory", s.trajectory},
                     {"cycle_index", s.cycle_index},
                     {"y", s.y.to_json()},
                     {"divergence_norm", s.divergence_norm},
                     {"inlet_flux", s.inlet_flux},
                     {"outlet_flux", s.outlet_flux},
                     {"outlet_pressure", s.outlet_pressure},
                     {"checksum", hex(fnv1a(bytes.data(), bytes.size()))}});
  }
  nlohmann::json trajs = nlohmann::json::array();
  for (std::size_t t = 0; t < m.trajectories.size(); ++t) {
    trajs.push_back({{"id", t}, {"dir", snapshot_file(static_cast<int>(t), 0).substr(0, 7)},
                     {"y", m.trajectories[t].to_json()}});
  }
  nlohmann::json manifest = {
      {"format", kManifoldFormat},
      {"provenance", m.provenance},
      {"domain_hash", domain.config_hash()},
      {"domain", domain.config().to_json()},
      {"solver", solver.to_json()},
      {"ranges", ranges.to_json()},
      {"seed", seed},
      {"layout",
       {{"velocity_count", domain.velocity_count()},
        {"ux_count", domain.ux_count()},
        {"cell_count", domain.cell_count()},
        {"ordering",
         "u_x on vertical faces (row j, then column i), then u_y on horizontal faces (row j, then column i), "
         "active faces only; then cell pressures (row j, then column i), active cells only"},
        {"dtype", "float64 little-endian"}}},
      {"units", {{"u", "cm/s"}, {"p", "dyn/cm^2"}, {"t", "s"}, {"HR", "1/min"}, {"length", "cm"}}},
      {"trajectories", trajs},
      {"snapshots", snaps}};
  const std::string hash = fnv1a_hex(manifest.dump());
  manifest["manifest_hash"] = hash;
  write_json(dir / "manifest.json", manifest);
  return hash;
}

nlohmann::json read_manifold_manifest(const fs::path& dir) {
  nlohmann::json j = read_json(dir / "manifest.json");
  if (j.value("format", "") != kManifoldFormat) throw IOError((dir / "manifest.json").string() + " is not a manifold store");
  return j;
}

ManifoldStore read_manifold(const fs::path& dir, const std::vector<int>& trajectories) {
  const nlohmann::json j = read_manifold_manifest(dir);
  ManifoldStore out;
  try {
    out.domain = DomainConfig::from_json(j.at("domain"));
    out.solver = SolverConfig::from_json(j.at("solver"));
    out.ranges = ParameterRanges::from_json(j.at("ranges"));
    out.seed = j.at("seed").get<std::uint64_t>();
    out.manifest_hash = j.at("manifest_hash").get<std::string>();
    out.manifold.provenance = j.at("provenance").get<std::string>();
    for (const auto& t : j.at("trajectories")) out.manifold.trajectories.push_back(FlowParams::from_json(t.at("y")));
    const auto nu = j.at("layout").at("velocity_count").get<std::size_t>();
    const auto nc = j.at("layout").at("cell_count").get<std::size_t>();
    for (const auto& s : j.at("snapshots")) {
      const int traj = s.at("trajectory").get<int>();
      if (!trajectories.empty() && std::find(trajectories.begin(), trajectories.end(), traj) == trajectories.end())
        continue;
      const auto data = read_f64(dir / s.at("file").get<std::string>(), nu + nc);
      Snapshot snap;
      snap.u = Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(nu));
      snap.p = Eigen::Map<const Eigen::VectorXd>(data.data() + nu, static_cast<Eigen::Index>(nc));
      snap.y = FlowParams::from_json(s.at("y"));
      snap.trajectory = traj;
      snap.cycle_index = s.at("cycle_index").get<int>();
      snap.divergence_norm = s.at("divergence_norm").get<double>();
      snap.inlet_flux = s.at("inlet_flux").get<double>();
      snap.outlet_flux = s.at("outlet_flux").get<std::array<double, 2>>();
      snap.outlet_pressure = s.at("outlet_pressure").get<std::array<double, 2>>();
      out.manifold.snapshots.push_back(std::move(snap));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IOError((dir / "manifest.json").string() + ": " + e.what());
  }
  return out;
}

void write_partition(const fs::path& dir, const PartitionGrid& grid, const nlohmann::json& extra) {
  ensure_directory(dir);
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t c = 0; c < grid.cells.size(); ++c) {
    const PartitionCell& cell = grid.cells[c];
    const std::string sub = cell_dir(cell.k, cell.k_prime);
    ensure_directory(dir / sub);
    write_f64(dir / sub / "modes.bin", cell.basis.modes.data(), static_cast<std::size_t>(cell.basis.modes.size()));
    cells.push_back({{"k", cell.k},
                     {"k_prime", cell.k_prime},
                     {"members", cell.members},
                     {"modes_file", sub + "/modes.bin"},
                     {"rows", cell.basis.modes.rows()},
                     {"n_modes", cell.basis.size()},
                     {"rank_deficient", cell.basis.rank_deficient},
                     {"singular_values", to_vec(cell.basis.singular_values)},
                     {"eps", to_vec(cell.curves.eps)},
                     {"delta", to_vec(cell.curves.delta)},
                     {"beta", to_vec(cell.curves.beta)},
                     {"n_star", cell.curves.n_star},
                     {"score", cell.curves.score},
                     {"coeff_bounds", c < grid.coeff_bounds.size() ? to_vec(grid.coeff_bounds[c]) : std::vector<double>{}}});
  }
  const nlohmann::json manifest = {{"format", kPartitionFormat},
                                   {"K", grid.K},
                                   {"K_prime", grid.K_prime},
                                   {"score", grid.score},
                                   {"space", to_string(grid.tag)},
                                   {"layout", "modes stored column after column, float64 little-endian"},
                                   {"cells", cells},
                                   {"extra", extra}};
  write_json(dir / "manifest.json", manifest);
  write_curves_csv(dir / "curves.csv", grid);
}

PartitionGrid read_partition(const fs::path& dir, nlohmann::json* extra) {
  const nlohmann::json j = read_json(dir / "manifest.json");
  if (j.value("format", "") != kPartitionFormat) throw IOError((dir / "manifest.json").string() + " is not a partition store");
  PartitionGrid g;
  try {
    g.K = j.at("K").get<int>();
    g.K_prime = j.at("K_prime").get<int>();
    g.score = j.at("score").get<double>();
    g.tag = space_tag_from_string(j.at("space").get<std::string>());
    for (const auto& c : j.at("cells")) {
      PartitionCell cell;
      cell.k = c.at("k").get<int>();
      cell.k_prime = c.at("k_prime").get<int>();
      cell.members = c.at("members").get<std::vector<int>>();
      const auto rows = c.at("rows").get<Eigen::Index>();
      const auto cols = c.at("n_modes").get<Eigen::Index>();
      const auto data = read_f64(dir / c.at("modes_file").get<std::string>(), static_cast<std::size_t>(rows * cols));
      cell.basis.modes = Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
      cell.basis.tag = g.tag;
      cell.basis.rank_deficient = c.at("rank_deficient").get<bool>();
      cell.basis.singular_values = from_vec(c.at("singular_values"));
      cell.curves.eps = from_vec(c.at("eps"));
      cell.curves.delta = from_vec(c.at("delta"));
      cell.curves.beta = from_vec(c.at("beta"));
      cell.curves.n_star = c.at("n_star").get<int>();
      cell.curves.score = c.at("score").get<double>();
      g.coeff_bounds.push_back(from_vec(c.at("coeff_bounds")));
      g.cells.push_back(std::move(cell));
    }
    if (static_cast<int>(g.cells.size()) != g.K * g.K_prime) throw IOError("cell count does not match K x K'");
    if (extra) *extra = j.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IOError((dir / "manifest.json").string() + ": " + e.what());
  }
  return g;
}

void write_curves_csv(const fs::path& path, const PartitionGrid& grid) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IOError("cannot write " + path.string());
  out << "k,k_prime,n,eps,delta,beta\n";
  out << std::setprecision(17);
  for (const auto& cell : grid.cells) {
    for (Eigen::Index i = 0; i < cell.curves.eps.size(); ++i) {
      out << cell.k << "," << cell.k_prime << "," << i + 1 << "," << cell.curves.eps[i] << ","
          << cell.curves.delta[i] << "," << (i < cell.curves.beta.size() ? cell.curves.beta[i] : 0.0) << "\n";
    }
  }
}

}  // namespace flowrecon
