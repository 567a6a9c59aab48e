#pragma once

// Masked Cartesian channel with one inlet (left edge), two outlets (right
// edge, separated by a splitter block) and walls everywhere else, plus the
// staggered (MAC) unknown layout shared by every downstream module.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace flowrecon {

enum class BoundaryLabel { Inlet, Outlet1, Outlet2, Wall };

inline constexpr std::array<BoundaryLabel, 4> kAllLabels = {
    BoundaryLabel::Inlet, BoundaryLabel::Outlet1, BoundaryLabel::Outlet2, BoundaryLabel::Wall};

std::string to_string(BoundaryLabel label);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Rectangle in fractions of channel length (x) and height (y).
struct FractionRect {
  double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;
};

enum class WallSide { Top, Bottom };

/// Smooth sin^2 bump attached to one wall; depth is a fraction of the height.
struct StenosisConfig {
  double x0 = 0.25;
  double x1 = 0.40;
  double depth_frac = 0.3;
  WallSide side = WallSide::Top;
};

struct DomainConfig {
  int nx = 120;
  int ny = 20;
  double length_cm = 6.0;
  double height_cm = 1.0;
  std::optional<FractionRect> splitter = FractionRect{0.6, 1.0, 0.45, 0.55};
  std::optional<StenosisConfig> stenosis = StenosisConfig{};

  static DomainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// A boundary face of the active mask.
struct BoundaryFace {
  int cell = -1;         // active cell index (pressure numbering)
  int ci = 0, cj = 0;    // grid coordinates of that cell
  Vec2 normal;           // outward unit normal
  Vec2 midpoint;
  double length = 0.0;
  BoundaryLabel label = BoundaryLabel::Wall;
  int velocity_dof = -1; // normal-velocity unknown living on this face
};

enum class FaceKind { Interior, Inlet, Outlet1, Outlet2, Wall };

/// One staggered velocity unknown: an x-velocity on a vertical face or a
/// y-velocity on a horizontal face.
struct VelocityDof {
  bool horizontal_face = false;  // false: u_x on vertical face, true: u_y on horizontal face
  int i = 0, j = 0;              // face index: vertical (i in [0,nx], j cell row), horizontal (i cell column, j in [0,ny])
  int cell_minus = -1;           // active cell on the low side (left / below), -1 if none
  int cell_plus = -1;            // active cell on the high side (right / above), -1 if none
  FaceKind kind = FaceKind::Interior;
  Vec2 position;
  double volume = 0.0;           // dual control-volume area
};

class Domain {
 public:
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double hx() const { return hx_; }
  double hy() const { return hy_; }
  double length() const { return nx_ * hx_; }
  double height() const { return ny_ * hy_; }
  const DomainConfig& config() const { return config_; }

  bool active(int i, int j) const {
    return i >= 0 && j >= 0 && i < nx_ && j < ny_ && mask_[static_cast<std::size_t>(j) * nx_ + i] != 0;
  }
  /// Pressure/cell number of active cell (i,j), or -1.
  int cell_index(int i, int j) const {
    if (i < 0 || j < 0 || i >= nx_ || j >= ny_) return -1;
    return cell_id_[static_cast<std::size_t>(j) * nx_ + i];
  }
  int cell_count() const { return static_cast<int>(cells_.size()); }
  std::array<int, 2> cell_ij(int cell) const { return cells_[static_cast<std::size_t>(cell)]; }
  Vec2 cell_center(int cell) const;
  double cell_area() const { return hx_ * hy_; }
  double area() const { return cell_area() * cell_count(); }

  const std::vector<BoundaryFace>& boundary() const { return boundary_; }
  std::vector<BoundaryFace> boundary_faces(BoundaryLabel label) const;
  double measure(BoundaryLabel label) const;

  // Staggered layout: u_x dofs first, then u_y dofs.
  int velocity_count() const { return static_cast<int>(dofs_.size()); }
  int ux_count() const { return n_ux_; }
  const std::vector<VelocityDof>& dofs() const { return dofs_; }
  const VelocityDof& dof(int k) const { return dofs_[static_cast<std::size_t>(k)]; }
  /// Index of the u_x unknown on vertical face (i,j), or -1.
  int ux_index(int i, int j) const;
  /// Index of the u_y unknown on horizontal face (i,j), or -1.
  int uy_index(int i, int j) const;

  /// Stable hash of the configuration, used for store provenance.
  std::string config_hash() const;

 private:
  friend Domain build_domain(const DomainConfig& config);

  DomainConfig config_;
  int nx_ = 0, ny_ = 0;
  double hx_ = 0.0, hy_ = 0.0;
  std::vector<std::uint8_t> mask_;
  std::vector<int> cell_id_;
  std::vector<std::array<int, 2>> cells_;
  std::vector<BoundaryFace> boundary_;
  std::vector<VelocityDof> dofs_;
  int n_ux_ = 0;
  std::vector<int> ux_id_;  // (nx+1) * ny
  std::vector<int> uy_id_;  // nx * (ny+1)
};

/// Builds and validates the domain. Throws ConfigError on invalid geometry.
Domain build_domain(const DomainConfig& config);

/// Faces of one label with outward unit normals, ordered by their cell: rows
/// from the bottom, left to right within a row.
std::vector<BoundaryFace> boundary_faces(const Domain& domain, BoundaryLabel label);

}  // namespace flowrecon
