#pragma once

#include <cdii/errors.hpp>
#include <cdii/grid.hpp>

#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace cdii {

struct Disc {
  double cx = 0.0, cy = 0.0, r = 1.0;
};

/// Axis-aligned rectangle [x0, x1] x [y0, y1].
struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
};

struct Polygon {
  std::vector<std::pair<double, double>> vertices;
};

using Shape = std::variant<Disc, Rect, Polygon>;

namespace detail {

/// Signed inclusion test; positive `slack` grows the shape, negative shrinks it.
inline bool inside(const Shape& s, double x, double y, double slack) {
  struct Visitor {
    double x, y, slack;
    bool operator()(const Disc& d) const {
      return std::hypot(x - d.cx, y - d.cy) < d.r + slack;
    }
    bool operator()(const Rect& r) const {
      return x > r.x0 - slack && x < r.x1 + slack && y > r.y0 - slack && y < r.y1 + slack;
    }
    bool operator()(const Polygon& p) const {
      // even-odd ray casting; slack is ignored for polygons
      bool in = false;
      const auto& v = p.vertices;
      for (std::size_t a = 0, b = v.size() - 1; a < v.size(); b = a++) {
        auto [xa, ya] = v[a];
        auto [xb, yb] = v[b];
        if ((ya > y) != (yb > y) && x < (xb - xa) * (y - ya) / (yb - ya) + xa) in = !in;
      }
      return in;
    }
  };
  return std::visit(Visitor{x, y, slack}, s);
}

inline std::array<double, 4> bounds(const Shape& s) {
  struct Visitor {
    std::array<double, 4> operator()(const Disc& d) const {
      return {d.cx - d.r, d.cy - d.r, d.cx + d.r, d.cy + d.r};
    }
    std::array<double, 4> operator()(const Rect& r) const { return {r.x0, r.y0, r.x1, r.y1}; }
    std::array<double, 4> operator()(const Polygon& p) const {
      std::array<double, 4> b{1e300, 1e300, -1e300, -1e300};
      for (auto [x, y] : p.vertices) {
        b[0] = std::min(b[0], x);
        b[1] = std::min(b[1], y);
        b[2] = std::max(b[2], x);
        b[3] = std::max(b[3], y);
      }
      return b;
    }
  };
  return std::visit(Visitor{}, s);
}

}  // namespace detail

enum class InclusionKind { perfect, insulating };

struct InclusionSpec {
  Shape shape;
  InclusionKind kind = InclusionKind::perfect;
};

/// Raster codes shared with the geometry file format.
enum class NodeCode : int { exterior = 0, omega = 1, perfect = 2, insulating = 3 };

/// Rasterized domain with perfectly conducting (U) and insulating (V) inclusions.
///
/// Immutable once built. Construction validates the geometric hypotheses:
/// disjoint inclusion closures, inclusions strictly interior, and a 4-connected
/// background Omega \ (U u V).
class InclusionGeometry {
public:
  InclusionGeometry() = default;

  InclusionGeometry(NodeMask omega, NodeMask u_mask, NodeMask v_mask)
      : grid_(omega.grid()), omega_(std::move(omega)), u_(std::move(u_mask)), v_(std::move(v_mask)) {
    finish();
  }

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] const NodeMask& omega() const { return omega_; }
  [[nodiscard]] const NodeMask& u_mask() const { return u_; }
  [[nodiscard]] const NodeMask& v_mask() const { return v_; }
  /// Dirichlet nodes: Omega nodes whose 3x3 neighbourhood leaves Omega. Every
  /// other node then has four unit-weight faces (a full 5-point stencil).
  [[nodiscard]] const NodeMask& boundary() const { return boundary_; }
  /// Omega \ (U u V).
  [[nodiscard]] const NodeMask& background() const { return background_; }
  /// Omega \ V: where potentials are defined.
  [[nodiscard]] const NodeMask& conducting() const { return conducting_; }
  [[nodiscard]] const std::vector<Component>& u_components() const { return u_comps_; }
  [[nodiscard]] const std::vector<Component>& v_components() const { return v_comps_; }

  /// Dual-cell length fraction of a face in [0, 1]; zero for inactive faces.
  [[nodiscard]] double wx(int i, int j) const { return wx_[grid_.xface(i, j)]; }
  [[nodiscard]] double wy(int i, int j) const { return wy_[grid_.yface(i, j)]; }
  [[nodiscard]] std::span<const double> wxs() const { return wx_; }
  [[nodiscard]] std::span<const double> wys() const { return wy_; }

  [[nodiscard]] NodeCode code(std::size_t k) const {
    if (!omega_[k]) return NodeCode::exterior;
    if (u_[k]) return NodeCode::perfect;
    if (v_[k]) return NodeCode::insulating;
    return NodeCode::omega;
  }

  /// Maximum node-to-node distance over Omega (used for threshold scaling).
  [[nodiscard]] double diameter() const {
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (std::size_t k = 0; k < grid_.size(); ++k) {
      if (!omega_[k]) continue;
      double x = grid_.x(grid_.col(k)), y = grid_.y(grid_.row(k));
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
    return std::hypot(x1 - x0, y1 - y0);
  }

private:
  void finish() {
    if (!(omega_.grid() == u_.grid()) || !(omega_.grid() == v_.grid()))
      throw Error("InclusionGeometry: masks live on different grids");
    const Grid& g = grid_;
    if (!omega_.any()) throw Error("InclusionGeometry: empty domain");

    boundary_ = NodeMask(g);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        if (!omega_.at(i, j)) continue;
        bool edge = false;
        for (int dj = -1; dj <= 1; ++dj)
          for (int di = -1; di <= 1; ++di) edge = edge || !omega_.at(i + di, j + dj);
        if (edge) boundary_.set(i, j);
      }

    for (std::size_t k = 0; k < g.size(); ++k) {
      if (u_[k] && v_[k]) throw OverlapError("U and V overlap");
      if ((u_[k] || v_[k]) && !omega_[k]) throw OverlapError("inclusion leaves the domain");
    }
    // raster closure = one-node dilation
    if ((dilate(u_, 1) & dilate(v_, 1)).any()) throw OverlapError("closures of U and V intersect");
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        if (!u_.at(i, j) && !v_.at(i, j)) continue;
        if (boundary_.at(i, j)) throw OverlapError("inclusion touches the domain boundary");
      }

    background_ = omega_ - u_ - v_;
    conducting_ = omega_ - v_;
    if (connected_components(background_).size() != 1)
      throw DisconnectedError("Omega \\ (U u V) is not connected");

    u_comps_ = connected_components(u_);
    v_comps_ = connected_components(v_);

    auto cell_in = [&](int i, int j) {
      return omega_.at(i, j) && omega_.at(i + 1, j) && omega_.at(i, j + 1) && omega_.at(i + 1, j + 1);
    };
    wx_.assign(g.x_faces(), 0.0);
    wy_.assign(g.y_faces(), 0.0);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i + 1 < g.nx; ++i)
        if (omega_.at(i, j) && omega_.at(i + 1, j))
          wx_[g.xface(i, j)] = 0.5 * (int(cell_in(i, j - 1)) + int(cell_in(i, j)));
    for (int j = 0; j + 1 < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        if (omega_.at(i, j) && omega_.at(i, j + 1))
          wy_[g.yface(i, j)] = 0.5 * (int(cell_in(i - 1, j)) + int(cell_in(i, j)));
  }

  Grid grid_;
  NodeMask omega_, u_, v_, boundary_, background_, conducting_;
  std::vector<Component> u_comps_, v_comps_;
  std::vector<double> wx_, wy_;
};

struct BuildOptions {
  /// Drop inclusion nodes that land on the Dirichlet boundary instead of
  /// rejecting the geometry (shapes whose closure meets the boundary in a point).
  bool allow_boundary_contact = false;
};

/// Grid spanning the bounding box of `domain` with `n` nodes along its longer side.
inline Grid grid_for(const Shape& domain, int n) {
  auto b = detail::bounds(domain);
  double w = b[2] - b[0], hgt = b[3] - b[1];
  double h = std::max(w, hgt) / double(n - 1);
  int nx = int(std::lround(w / h)) + 1, ny = int(std::lround(hgt / h)) + 1;
  return Grid(nx, ny, h, b[0], b[1]);
}

/// Rasterize a domain and its inclusions. A node belongs to a shape iff its
/// centre is inside; the domain is closed, inclusions are open.
inline InclusionGeometry build_geometry(const Shape& domain, const std::vector<InclusionSpec>& inclusions,
                                        int n, BuildOptions opts = {}) {
  if (n < 3) throw Error("build_geometry: resolution must be at least 3");
  Grid g = grid_for(domain, n);
  const double tol = 1e-9 * g.h;
  NodeMask omega(g), u(g), v(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (detail::inside(domain, g.x(i), g.y(j), tol)) omega.set(i, j);

  for (const auto& inc : inclusions) {
    NodeMask& target = inc.kind == InclusionKind::perfect ? u : v;
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        if (!detail::inside(inc.shape, g.x(i), g.y(j), -tol)) continue;
        if (!omega.at(i, j)) throw OverlapError("inclusion crosses the domain boundary");
        target.set(i, j);
      }
  }

  // Inclusion nodes whose 3x3 neighbourhood leaves Omega only through a
  // diagonal are corner contacts at grid scale and are trimmed.
  InclusionGeometry probe_omega(omega, NodeMask(g), NodeMask(g));
  const auto& bnd = probe_omega.boundary();
  for (NodeMask* m : {&u, &v})
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        if (!m->at(i, j)) continue;
        if (!bnd.at(i, j)) continue;
        bool edge = !omega.at(i - 1, j) || !omega.at(i + 1, j) || !omega.at(i, j - 1) || !omega.at(i, j + 1);
        if (edge && !opts.allow_boundary_contact) throw OverlapError("inclusion touches the domain boundary");
        m->set(i, j, false);
      }

  return InclusionGeometry(std::move(omega), std::move(u), std::move(v));
}

}  // namespace cdii
