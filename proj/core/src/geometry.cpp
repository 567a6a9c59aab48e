#include "flowrecon/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <numbers>
#include <sstream>

#include "flowrecon/errors.hpp"

namespace flowrecon {

std::string to_string(BoundaryLabel label) {
  switch (label) {
    case BoundaryLabel::Inlet: return "inlet";
    case BoundaryLabel::Outlet1: return "outlet1";
    case BoundaryLabel::Outlet2: return "outlet2";
    case BoundaryLabel::Wall: return "wall";
  }
  return "?";
}

DomainConfig DomainConfig::from_json(const nlohmann::json& j) {
  DomainConfig c;
  c.nx = j.value("nx", c.nx);
  c.ny = j.value("ny", c.ny);
  c.length_cm = j.value("length_cm", c.length_cm);
  c.height_cm = j.value("height_cm", c.height_cm);
  if (j.contains("splitter")) {
    if (j["splitter"].is_null()) {
      c.splitter.reset();
    } else {
      const auto& s = j["splitter"];
      c.splitter = FractionRect{s.at("x0").get<double>(), s.at("x1").get<double>(),
                                s.at("y0").get<double>(), s.at("y1").get<double>()};
    }
  }
  if (j.contains("stenosis")) {
    if (j["stenosis"].is_null()) {
      c.stenosis.reset();
    } else {
      const auto& s = j["stenosis"];
      StenosisConfig st;
      st.x0 = s.at("x0").get<double>();
      st.x1 = s.at("x1").get<double>();
      st.depth_frac = s.at("depth_frac").get<double>();
      const std::string side = s.value("side", std::string("top"));
      if (side == "top") {
        st.side = WallSide::Top;
      } else if (side == "bottom") {
        st.side = WallSide::Bottom;
      } else {
        throw ConfigError("stenosis.side must be 'top' or 'bottom', got '" + side + "'");
      }
      c.stenosis = st;
    }
  }
  return c;
}

nlohmann::json DomainConfig::to_json() const {
  nlohmann::json j;
  j["nx"] = nx;
  j["ny"] = ny;
  j["length_cm"] = length_cm;
  j["height_cm"] = height_cm;
  if (splitter) {
    j["splitter"] = {{"x0", splitter->x0}, {"x1", splitter->x1}, {"y0", splitter->y0}, {"y1", splitter->y1}};
  } else {
    j["splitter"] = nullptr;
  }
  if (stenosis) {
    j["stenosis"] = {{"x0", stenosis->x0},
                     {"x1", stenosis->x1},
                     {"depth_frac", stenosis->depth_frac},
                     {"side", stenosis->side == WallSide::Top ? "top" : "bottom"}};
  } else {
    j["stenosis"] = nullptr;
  }
  return j;
}

Vec2 Domain::cell_center(int cell) const {
  const auto [i, j] = cells_[static_cast<std::size_t>(cell)];
  return {(i + 0.5) * hx_, (j + 0.5) * hy_};
}

std::vector<BoundaryFace> Domain::boundary_faces(BoundaryLabel label) const {
  std::vector<BoundaryFace> out;
  for (const auto& f : boundary_) {
    if (f.label == label) out.push_back(f);
  }
  return out;
}

double Domain::measure(BoundaryLabel label) const {
  double m = 0.0;
  for (const auto& f : boundary_) {
    if (f.label == label) m += f.length;
  }
  return m;
}

int Domain::ux_index(int i, int j) const {
  if (i < 0 || i > nx_ || j < 0 || j >= ny_) return -1;
  return ux_id_[static_cast<std::size_t>(j) * (nx_ + 1) + i];
}

int Domain::uy_index(int i, int j) const {
  if (i < 0 || i >= nx_ || j < 0 || j > ny_) return -1;
  return uy_id_[static_cast<std::size_t>(j) * nx_ + i];
}

std::string Domain::config_hash() const {
  const std::string dumped = config_.to_json().dump();
  // FNV-1a, 64 bit
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dumped) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

namespace {

void validate_config(const DomainConfig& c) {
  if (c.nx < 8 || c.ny < 8) throw ConfigError("nx and ny must be >= 8");
  if (!(c.length_cm > 0.0) || !(c.height_cm > 0.0)) throw ConfigError("channel length and height must be positive");
  if (c.splitter) {
    const auto& s = *c.splitter;
    if (!(0.0 <= s.x0 && s.x0 < s.x1 && s.x1 <= 1.0 && 0.0 < s.y0 && s.y0 < s.y1 && s.y1 < 1.0)) {
      throw ConfigError("splitter rectangle must lie inside the grid (0<=x0<x1<=1, 0<y0<y1<1)");
    }
  }
  if (c.stenosis) {
    const auto& s = *c.stenosis;
    if (!(0.0 < s.x0 && s.x0 < s.x1 && s.x1 < 1.0 && 0.0 < s.depth_frac && s.depth_frac < 1.0)) {
      throw ConfigError("stenosis must satisfy 0<x0<x1<1 and 0<depth_frac<1");
    }
  }
}

// Runs of consecutive active cells along one grid column.
std::vector<std::pair<int, int>> active_runs(const Domain& d, int column) {
  std::vector<std::pair<int, int>> runs;
  int start = -1;
  for (int j = 0; j <= d.ny(); ++j) {
    const bool a = j < d.ny() && d.active(column, j);
    if (a && start < 0) start = j;
    if (!a && start >= 0) {
      runs.emplace_back(start, j - 1);
      start = -1;
    }
  }
  return runs;
}

}  // namespace

Domain build_domain(const DomainConfig& config) {
  validate_config(config);

  Domain d;
  d.config_ = config;
  d.nx_ = config.nx;
  d.ny_ = config.ny;
  d.hx_ = config.length_cm / config.nx;
  d.hy_ = config.height_cm / config.ny;
  const int nx = d.nx_, ny = d.ny_;
  const double L = config.length_cm, H = config.height_cm;

  d.mask_.assign(static_cast<std::size_t>(nx) * ny, 1);
  auto at = [&](int i, int j) -> std::uint8_t& { return d.mask_[static_cast<std::size_t>(j) * nx + i]; };

  if (config.splitter) {
    // Any cell overlapping the open splitter rectangle becomes solid.
    const auto& s = *config.splitter;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const bool ox = i * d.hx_ < s.x1 * L && (i + 1) * d.hx_ > s.x0 * L;
        const bool oy = j * d.hy_ < s.y1 * H && (j + 1) * d.hy_ > s.y0 * H;
        if (ox && oy) at(i, j) = 0;
      }
    }
  }
  if (config.stenosis) {
    const auto& s = *config.stenosis;
    const double xa = s.x0 * L, xb = s.x1 * L;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const double xc = (i + 0.5) * d.hx_, yc = (j + 0.5) * d.hy_;
        if (xc < xa || xc > xb) continue;
        const double sn = std::sin(std::numbers::pi * (xc - xa) / (xb - xa));
        const double depth = s.depth_frac * H * sn * sn;
        const bool inside = s.side == WallSide::Top ? yc > H - depth : yc < depth;
        if (inside) at(i, j) = 0;
      }
    }
  }

  // Active-cell numbering, row-major.
  d.cell_id_.assign(static_cast<std::size_t>(nx) * ny, -1);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      if (at(i, j)) {
        d.cell_id_[static_cast<std::size_t>(j) * nx + i] = static_cast<int>(d.cells_.size());
        d.cells_.push_back({i, j});
      }
    }
  }
  if (d.cells_.empty()) throw ConfigError("domain has no active cells");

  // Single connected component.
  {
    std::vector<char> seen(d.cells_.size(), 0);
    std::deque<int> queue{0};
    seen[0] = 1;
    std::size_t visited = 1;
    while (!queue.empty()) {
      const int c = queue.front();
      queue.pop_front();
      const auto [i, j] = d.cells_[static_cast<std::size_t>(c)];
      for (auto [di, dj] : {std::pair{1, 0}, std::pair{-1, 0}, std::pair{0, 1}, std::pair{0, -1}}) {
        const int n = d.cell_index(i + di, j + dj);
        if (n >= 0 && !seen[static_cast<std::size_t>(n)]) {
          seen[static_cast<std::size_t>(n)] = 1;
          ++visited;
          queue.push_back(n);
        }
      }
    }
    if (visited != d.cells_.size()) throw ConfigError("active region is not connected (splitter or stenosis disconnects the domain)");
  }

  // Inlet: one run on the left edge. Outlets: exactly two runs on the right edge.
  const auto inlet_runs = active_runs(d, 0);
  if (inlet_runs.size() != 1) throw ConfigError("inlet must be a single connected run of faces");
  const auto outlet_runs = active_runs(d, nx - 1);
  if (outlet_runs.size() < 2) throw ConfigError("Outlet2 is empty: the right edge must be split into two outlets");
  if (outlet_runs.size() > 2) throw ConfigError("right edge splits into more than two outlets");
  // Upper run is Outlet1, lower run is Outlet2.
  auto outlet_label = [&](int j) {
    if (j >= outlet_runs[1].first && j <= outlet_runs[1].second) return BoundaryLabel::Outlet1;
    return BoundaryLabel::Outlet2;
  };

  // Staggered velocity unknowns.
  d.ux_id_.assign(static_cast<std::size_t>(nx + 1) * ny, -1);
  d.uy_id_.assign(static_cast<std::size_t>(nx) * (ny + 1), -1);
  const double half_cell = 0.5 * d.hx_ * d.hy_;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      const int cm = d.cell_index(i - 1, j), cp = d.cell_index(i, j);
      if (cm < 0 && cp < 0) continue;
      VelocityDof v;
      v.horizontal_face = false;
      v.i = i;
      v.j = j;
      v.cell_minus = cm;
      v.cell_plus = cp;
      v.position = {i * d.hx_, (j + 0.5) * d.hy_};
      v.volume = half_cell * ((cm >= 0) + (cp >= 0));
      if (cm >= 0 && cp >= 0) {
        v.kind = FaceKind::Interior;
      } else if (i == 0) {
        v.kind = FaceKind::Inlet;
      } else if (i == nx) {
        v.kind = outlet_label(j) == BoundaryLabel::Outlet1 ? FaceKind::Outlet1 : FaceKind::Outlet2;
      } else {
        v.kind = FaceKind::Wall;
      }
      d.ux_id_[static_cast<std::size_t>(j) * (nx + 1) + i] = static_cast<int>(d.dofs_.size());
      d.dofs_.push_back(v);
    }
  }
  d.n_ux_ = static_cast<int>(d.dofs_.size());
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int cm = d.cell_index(i, j - 1), cp = d.cell_index(i, j);
      if (cm < 0 && cp < 0) continue;
      VelocityDof v;
      v.horizontal_face = true;
      v.i = i;
      v.j = j;
      v.cell_minus = cm;
      v.cell_plus = cp;
      v.position = {(i + 0.5) * d.hx_, j * d.hy_};
      v.volume = half_cell * ((cm >= 0) + (cp >= 0));
      v.kind = (cm >= 0 && cp >= 0) ? FaceKind::Interior : FaceKind::Wall;
      d.uy_id_[static_cast<std::size_t>(j) * nx + i] = static_cast<int>(d.dofs_.size());
      d.dofs_.push_back(v);
    }
  }

  // Boundary faces with labels; order: by cell (row-major), sides W,E,S,N.
  for (int c = 0; c < d.cell_count(); ++c) {
    const auto [i, j] = d.cells_[static_cast<std::size_t>(c)];
    const Vec2 cc = d.cell_center(c);
    struct Side {
      int di, dj;
      Vec2 n;
    };
    for (const Side s : {Side{-1, 0, {-1, 0}}, Side{1, 0, {1, 0}}, Side{0, -1, {0, -1}}, Side{0, 1, {0, 1}}}) {
      if (d.active(i + s.di, j + s.dj)) continue;
      BoundaryFace f;
      f.cell = c;
      f.ci = i;
      f.cj = j;
      f.normal = s.n;
      f.midpoint = {cc.x + 0.5 * s.di * d.hx_, cc.y + 0.5 * s.dj * d.hy_};
      f.length = s.di != 0 ? d.hy_ : d.hx_;
      if (s.di == -1 && i == 0) {
        f.label = BoundaryLabel::Inlet;
      } else if (s.di == 1 && i == nx - 1) {
        f.label = outlet_label(j);
      } else {
        f.label = BoundaryLabel::Wall;
      }
      if (s.di != 0) {
        f.velocity_dof = d.ux_index(s.di < 0 ? i : i + 1, j);
      } else {
        f.velocity_dof = d.uy_index(i, s.dj < 0 ? j : j + 1);
      }
      d.boundary_.push_back(f);
    }
  }
  for (auto label : kAllLabels) {
    if (d.measure(label) <= 0.0) throw ConfigError("boundary label '" + to_string(label) + "' is empty");
  }
  return d;
}

std::vector<BoundaryFace> boundary_faces(const Domain& domain, BoundaryLabel label) {
  return domain.boundary_faces(label);
}

}  // namespace flowrecon
