#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "flowrecon/errors.hpp"
#include "flowrecon/geometry.hpp"
#include "support.hpp"

using namespace flowrecon;

namespace {

// Faces of the active mask whose neighbour is inactive or outside, keyed by
// (cell, outward normal).
std::set<std::tuple<int, int, int>> perimeter(const Domain& d) {
  std::set<std::tuple<int, int, int>> out;
  const int di[4] = {-1, 1, 0, 0};
  const int dj[4] = {0, 0, -1, 1};
  for (int c = 0; c < d.cell_count(); ++c) {
    const auto [i, j] = d.cell_ij(c);
    for (int q = 0; q < 4; ++q)
      if (!d.active(i + di[q], j + dj[q])) out.insert({c, di[q], dj[q]});
  }
  return out;
}

int flood_fill_size(const Domain& d) {
  std::vector<char> seen(static_cast<std::size_t>(d.cell_count()), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int count = 0;
  while (!stack.empty()) {
    const int c = stack.back();
    stack.pop_back();
    ++count;
    const auto [i, j] = d.cell_ij(c);
    const int nb[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
    for (const auto& n : nb) {
      const int k = d.cell_index(n[0], n[1]);
      if (k >= 0 && !seen[static_cast<std::size_t>(k)]) {
        seen[static_cast<std::size_t>(k)] = 1;
        stack.push_back(k);
      }
    }
  }
  return count;
}

}  // namespace

TEST_CASE("default channel layout") {
  const Domain d = build_domain(DomainConfig{});
  CHECK(d.hx() == doctest::Approx(0.05));
  CHECK(d.hy() == doctest::Approx(0.05));
  CHECK(d.cell_count() == 2248);
  CHECK(d.velocity_count() == 4691);
  CHECK(boundary_faces(d, BoundaryLabel::Inlet).size() == 20);
  CHECK(boundary_faces(d, BoundaryLabel::Outlet1).size() == 9);
  CHECK(boundary_faces(d, BoundaryLabel::Outlet2).size() == 9);
  CHECK(flood_fill_size(d) == d.cell_count());
  for (int k = 0; k < d.ux_count(); ++k) CHECK_FALSE(d.dof(k).horizontal_face);
  for (int k = d.ux_count(); k < d.velocity_count(); ++k) CHECK(d.dof(k).horizontal_face);
}

TEST_CASE("plain channel without splitter has no second outlet") {
  DomainConfig c;
  c.nx = 16;
  c.ny = 8;
  c.splitter.reset();
  c.stenosis.reset();
  CHECK_THROWS_AS(build_domain(c), ConfigError);
}

TEST_CASE("centered splitter on a 64 x 32 grid") {
  DomainConfig c;
  c.nx = 64;
  c.ny = 32;
  c.stenosis.reset();
  c.splitter = FractionRect{0.6, 1.0, 0.45, 0.55};
  // Right-edge rows whose centre is outside the splitter band, split evenly.
  int open_rows = 0;
  for (int j = 0; j < c.ny; ++j) {
    const double y = (j + 0.5) / c.ny;
    if (y < 0.45 || y > 0.55) ++open_rows;
  }
  const Domain d = build_domain(c);
  CHECK(boundary_faces(d, BoundaryLabel::Outlet1).size() == static_cast<std::size_t>(open_rows / 2));
  CHECK(boundary_faces(d, BoundaryLabel::Outlet2).size() == static_cast<std::size_t>(open_rows / 2));
  CHECK(open_rows / 2 == 14);
}

TEST_CASE("boundary faces partition the mask perimeter") {
  for (const DomainConfig& c : {DomainConfig{}, testsupport::coarse_config(), testsupport::straight_config()}) {
    const Domain d = build_domain(c);
    const auto expected = perimeter(d);
    std::set<std::tuple<int, int, int>> labelled;
    std::size_t total = 0;
    for (BoundaryLabel label : kAllLabels) {
      for (const auto& f : boundary_faces(d, label)) {
        ++total;
        labelled.insert({f.cell, static_cast<int>(std::lround(f.normal.x)), static_cast<int>(std::lround(f.normal.y))});
        CHECK(f.label == label);
      }
    }
    CHECK(total == expected.size());
    CHECK(labelled == expected);
    CHECK(d.boundary().size() == expected.size());
  }
}

TEST_CASE("normals and measures") {
  const Domain d = build_domain(testsupport::straight_config());
  for (const auto& f : boundary_faces(d, BoundaryLabel::Inlet)) {
    CHECK(f.normal.x == -1.0);
    CHECK(f.normal.y == 0.0);
    CHECK(f.midpoint.x == 0.0);
  }
  for (const auto& f : boundary_faces(d, BoundaryLabel::Wall)) {
    CHECK(std::hypot(f.normal.x, f.normal.y) == doctest::Approx(1.0));
    if (f.midpoint.x < 0.55 * d.length()) {
      CHECK(f.normal.x == 0.0);
      CHECK(std::abs(f.normal.y) == 1.0);
    }
  }
  for (const auto label : {BoundaryLabel::Outlet1, BoundaryLabel::Outlet2}) {
    for (const auto& f : boundary_faces(d, label)) {
      CHECK(f.normal.x == 1.0);
      CHECK(f.midpoint.x == doctest::Approx(d.length()));
    }
  }
  CHECK(d.measure(BoundaryLabel::Inlet) == doctest::Approx(d.height()));
  // Outlet 1 is the upper branch.
  for (const auto& f : boundary_faces(d, BoundaryLabel::Outlet1)) CHECK(f.midpoint.y > 0.5 * d.height());
  for (const auto& f : boundary_faces(d, BoundaryLabel::Outlet2)) CHECK(f.midpoint.y < 0.5 * d.height());
}

TEST_CASE("faces are ordered by cell row, then column") {
  const Domain d = build_domain(DomainConfig{});
  for (BoundaryLabel label : kAllLabels) {
    const auto faces = boundary_faces(d, label);
    for (std::size_t k = 1; k < faces.size(); ++k) {
      const auto& a = faces[k - 1];
      const auto& b = faces[k];
      CHECK((a.cj < b.cj || (a.cj == b.cj && a.ci <= b.ci)));
    }
  }
}

TEST_CASE("velocity dofs of boundary faces carry the face label") {
  const Domain d = build_domain(DomainConfig{});
  std::map<BoundaryLabel, FaceKind> kinds{{BoundaryLabel::Inlet, FaceKind::Inlet},
                                          {BoundaryLabel::Outlet1, FaceKind::Outlet1},
                                          {BoundaryLabel::Outlet2, FaceKind::Outlet2},
                                          {BoundaryLabel::Wall, FaceKind::Wall}};
  for (const auto& f : d.boundary()) {
    REQUIRE(f.velocity_dof >= 0);
    CHECK(d.dof(f.velocity_dof).kind == kinds[f.label]);
  }
  double volume = 0.0;
  for (int k = 0; k < d.ux_count(); ++k) volume += d.dof(k).volume;
  CHECK(volume == doctest::Approx(d.area()));
}

TEST_CASE("stenosis narrows the channel on the chosen wall") {
  const Domain d = build_domain(DomainConfig{});
  const Domain s = build_domain(testsupport::straight_config(120, 20));
  CHECK(d.cell_count() < s.cell_count());
  const int i_mid = static_cast<int>(0.325 * d.nx());
  CHECK_FALSE(d.active(i_mid, d.ny() - 1));
  CHECK(d.active(i_mid, 0));
}

TEST_CASE("configuration JSON round trip and hash") {
  DomainConfig c = testsupport::coarse_config();
  const DomainConfig back = DomainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(build_domain(c).config_hash() == build_domain(back).config_hash());
  CHECK(build_domain(c).config_hash() != build_domain(DomainConfig{}).config_hash());
}

TEST_CASE("invalid configurations") {
  DomainConfig c;
  c.nx = 0;
  CHECK_THROWS_AS(build_domain(c), ConfigError);
  DomainConfig s;
  s.stenosis->depth_frac = 1.0;
  CHECK_THROWS_AS(build_domain(s), ConfigError);
}
