#pragma once

#include <cdii/errors.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <vector>

namespace cdii {

/// Uniform node lattice. Node (i, j) sits at origin + (i*h, j*h); i runs along x.
struct Grid {
  int nx = 0;
  int ny = 0;
  double h = 0.0;
  double ox = 0.0;
  double oy = 0.0;

  Grid() = default;
  Grid(int nx_, int ny_, double h_, double ox_ = 0.0, double oy_ = 0.0)
      : nx(nx_), ny(ny_), h(h_), ox(ox_), oy(oy_) {
    if (nx < 3 || ny < 3) throw Error("Grid: need at least 3 nodes per axis");
    if (!(h > 0.0) || !std::isfinite(h)) throw Error("Grid: spacing must be positive");
  }

  [[nodiscard]] std::size_t size() const { return std::size_t(nx) * std::size_t(ny); }
  [[nodiscard]] std::size_t index(int i, int j) const {
    return std::size_t(j) * std::size_t(nx) + std::size_t(i);
  }
  [[nodiscard]] int col(std::size_t k) const { return int(k % std::size_t(nx)); }
  [[nodiscard]] int row(std::size_t k) const { return int(k / std::size_t(nx)); }
  [[nodiscard]] double x(int i) const { return ox + i * h; }
  [[nodiscard]] double y(int j) const { return oy + j * h; }
  [[nodiscard]] bool contains(int i, int j) const { return i >= 0 && j >= 0 && i < nx && j < ny; }

  // staggered faces: x-face (i,j) joins nodes (i,j)-(i+1,j), y-face (i,j) joins (i,j)-(i,j+1)
  [[nodiscard]] std::size_t x_faces() const { return std::size_t(nx - 1) * std::size_t(ny); }
  [[nodiscard]] std::size_t y_faces() const { return std::size_t(nx) * std::size_t(ny - 1); }
  [[nodiscard]] std::size_t xface(int i, int j) const {
    return std::size_t(j) * std::size_t(nx - 1) + std::size_t(i);
  }
  [[nodiscard]] std::size_t yface(int i, int j) const { return index(i, j); }

  /// Nearest node to a point, clamped to the lattice.
  [[nodiscard]] std::size_t nearest(double px, double py) const {
    int i = std::clamp(int(std::lround((px - ox) / h)), 0, nx - 1);
    int j = std::clamp(int(std::lround((py - oy) / h)), 0, ny - 1);
    return index(i, j);
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.nx == b.nx && a.ny == b.ny && a.h == b.h && a.ox == b.ox && a.oy == b.oy;
  }
};

/// Boolean node field.
class NodeMask {
public:
  NodeMask() = default;
  explicit NodeMask(const Grid& g, bool value = false) : grid_(g), bits_(g.size(), value ? 1 : 0) {}

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] std::size_t size() const { return bits_.size(); }
  [[nodiscard]] bool operator[](std::size_t k) const { return bits_[k] != 0; }
  [[nodiscard]] bool at(int i, int j) const { return grid_.contains(i, j) && bits_[grid_.index(i, j)] != 0; }
  void set(std::size_t k, bool v = true) { bits_[k] = v ? 1 : 0; }
  void set(int i, int j, bool v = true) { bits_[grid_.index(i, j)] = v ? 1 : 0; }

  [[nodiscard]] std::size_t count() const {
    return std::size_t(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  [[nodiscard]] bool any() const { return count() > 0; }
  [[nodiscard]] std::vector<std::size_t> nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < bits_.size(); ++k)
      if (bits_[k]) out.push_back(k);
    return out;
  }

  NodeMask& operator|=(const NodeMask& o) {
    for (std::size_t k = 0; k < bits_.size(); ++k) bits_[k] = std::uint8_t(bits_[k] | o.bits_[k]);
    return *this;
  }
  NodeMask& operator&=(const NodeMask& o) {
    for (std::size_t k = 0; k < bits_.size(); ++k) bits_[k] = std::uint8_t(bits_[k] & o.bits_[k]);
    return *this;
  }
  friend NodeMask operator|(NodeMask a, const NodeMask& b) { return a |= b; }
  friend NodeMask operator&(NodeMask a, const NodeMask& b) { return a &= b; }
  /// Set difference a \ b.
  friend NodeMask operator-(NodeMask a, const NodeMask& b) {
    for (std::size_t k = 0; k < a.bits_.size(); ++k)
      if (b.bits_[k]) a.bits_[k] = 0;
    return a;
  }
  friend bool operator==(const NodeMask& a, const NodeMask& b) { return a.bits_ == b.bits_; }

private:
  Grid grid_;
  std::vector<std::uint8_t> bits_;
};

/// Nodal real field with a definedness mask.
class ScalarField {
public:
  ScalarField() = default;
  explicit ScalarField(const Grid& g, double fill = 0.0)
      : grid_(g), values_(g.size(), fill), defined_(g, true) {}
  ScalarField(const Grid& g, NodeMask defined, double fill = 0.0)
      : grid_(g), values_(g.size(), fill), defined_(std::move(defined)) {}

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] double operator[](std::size_t k) const { return values_[k]; }
  double& operator[](std::size_t k) { return values_[k]; }
  [[nodiscard]] double at(int i, int j) const { return values_[grid_.index(i, j)]; }
  double& at(int i, int j) { return values_[grid_.index(i, j)]; }

  [[nodiscard]] bool defined(std::size_t k) const { return defined_[k]; }
  [[nodiscard]] const NodeMask& defined_mask() const { return defined_; }
  void set_defined(std::size_t k, bool v) { defined_.set(k, v); }
  void restrict_to(const NodeMask& m) {
    defined_ &= m;
  }

  [[nodiscard]] std::span<const double> values() const { return values_; }
  [[nodiscard]] std::span<double> values() { return values_; }

  /// Sample a function of (x, y) on every defined node.
  template <class F>
  static ScalarField sample(const Grid& g, const NodeMask& where, F&& fn) {
    ScalarField s(g, where, 0.0);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        auto k = g.index(i, j);
        if (where[k]) s.values_[k] = fn(g.x(i), g.y(j));
      }
    return s;
  }

  [[nodiscard]] double min() const {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < values_.size(); ++k)
      if (defined_[k]) m = std::min(m, values_[k]);
    return m;
  }
  [[nodiscard]] double max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < values_.size(); ++k)
      if (defined_[k]) m = std::max(m, values_[k]);
    return m;
  }
  [[nodiscard]] bool all_finite() const {
    for (std::size_t k = 0; k < values_.size(); ++k)
      if (defined_[k] && !std::isfinite(values_[k])) return false;
    return true;
  }

private:
  Grid grid_;
  std::vector<double> values_;
  NodeMask defined_;
};

/// Staggered face field: x-components on x-faces, y-components on y-faces.
class VectorField {
public:
  VectorField() = default;
  explicit VectorField(const Grid& g) : grid_(g), fx_(g.x_faces(), 0.0), fy_(g.y_faces(), 0.0) {}

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] double x(int i, int j) const { return fx_[grid_.xface(i, j)]; }
  [[nodiscard]] double y(int i, int j) const { return fy_[grid_.yface(i, j)]; }
  double& x(int i, int j) { return fx_[grid_.xface(i, j)]; }
  double& y(int i, int j) { return fy_[grid_.yface(i, j)]; }
  [[nodiscard]] std::span<const double> xs() const { return fx_; }
  [[nodiscard]] std::span<const double> ys() const { return fy_; }
  [[nodiscard]] std::span<double> xs() { return fx_; }
  [[nodiscard]] std::span<double> ys() { return fy_; }

  /// Bilinear interpolation of the staggered components at an arbitrary point.
  [[nodiscard]] std::array<double, 2> interpolate(double px, double py) const {
    const Grid& g = grid_;
    auto bilinear = [](double s, double t, double v00, double v10, double v01, double v11) {
      return (1 - s) * (1 - t) * v00 + s * (1 - t) * v10 + (1 - s) * t * v01 + s * t * v11;
    };
    // x-faces live at (i + 1/2, j)
    double fxp = (px - g.ox) / g.h - 0.5, fyp = (py - g.oy) / g.h;
    int i0 = std::clamp(int(std::floor(fxp)), 0, g.nx - 3);
    int j0 = std::clamp(int(std::floor(fyp)), 0, g.ny - 2);
    double s = std::clamp(fxp - i0, 0.0, 1.0), t = std::clamp(fyp - j0, 0.0, 1.0);
    double jx = bilinear(s, t, x(i0, j0), x(i0 + 1, j0), x(i0, j0 + 1), x(i0 + 1, j0 + 1));
    // y-faces live at (i, j + 1/2)
    fxp = (px - g.ox) / g.h;
    fyp = (py - g.oy) / g.h - 0.5;
    i0 = std::clamp(int(std::floor(fxp)), 0, g.nx - 2);
    j0 = std::clamp(int(std::floor(fyp)), 0, g.ny - 3);
    s = std::clamp(fxp - i0, 0.0, 1.0);
    t = std::clamp(fyp - j0, 0.0, 1.0);
    double jy = bilinear(s, t, y(i0, j0), y(i0 + 1, j0), y(i0, j0 + 1), y(i0 + 1, j0 + 1));
    return {jx, jy};
  }

private:
  Grid grid_;
  std::vector<double> fx_;
  std::vector<double> fy_;
};

/// A connected set of nodes with a stable id.
struct Component {
  int id = 0;
  std::vector<std::size_t> nodes;
};

/// Connected components of a mask, labelled in raster order of their first node.
/// `eight` selects 8-connectivity, otherwise 4-connectivity.
inline std::vector<Component> connected_components(const NodeMask& mask, bool eight = false) {
  const Grid& g = mask.grid();
  std::vector<int> label(g.size(), -1);
  std::vector<Component> comps;
  std::queue<std::size_t> todo;
  for (std::size_t start = 0; start < g.size(); ++start) {
    if (!mask[start] || label[start] >= 0) continue;
    Component c;
    c.id = int(comps.size());
    label[start] = c.id;
    todo.push(start);
    while (!todo.empty()) {
      auto k = todo.front();
      todo.pop();
      c.nodes.push_back(k);
      int i = g.col(k), j = g.row(k);
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          if ((di == 0 && dj == 0) || (!eight && di != 0 && dj != 0)) continue;
          if (!g.contains(i + di, j + dj)) continue;
          auto n = g.index(i + di, j + dj);
          if (mask[n] && label[n] < 0) {
            label[n] = c.id;
            todo.push(n);
          }
        }
    }
    std::sort(c.nodes.begin(), c.nodes.end());
    comps.push_back(std::move(c));
  }
  return comps;
}

inline NodeMask mask_of(const Grid& g, const std::vector<std::size_t>& nodes) {
  NodeMask m(g);
  for (auto k : nodes) m.set(k);
  return m;
}

/// Chebyshev-radius dilation (square structuring element).
inline NodeMask dilate(const NodeMask& m, int radius = 1) {
  const Grid& g = m.grid();
  NodeMask out(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!m.at(i, j)) continue;
      for (int dj = -radius; dj <= radius; ++dj)
        for (int di = -radius; di <= radius; ++di)
          if (g.contains(i + di, j + dj)) out.set(i + di, j + dj);
    }
  return out;
}

/// Chebyshev-radius erosion; nodes off the lattice count as unset.
inline NodeMask erode(const NodeMask& m, int radius = 1) {
  const Grid& g = m.grid();
  NodeMask out(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!m.at(i, j)) continue;
      bool keep = true;
      for (int dj = -radius; dj <= radius && keep; ++dj)
        for (int di = -radius; di <= radius && keep; ++di) keep = m.at(i + di, j + dj);
      if (keep) out.set(i, j);
    }
  return out;
}

inline NodeMask opening(const NodeMask& m, int radius = 1) { return dilate(erode(m, radius), radius); }

/// Open part of a flagged node set (radius-1 opening, split into 4-connected
/// components) and the residual flagged nodes that no opening reaches.
struct OpenSplit {
  NodeMask open;
  std::vector<Component> components;
  NodeMask residual;
};

inline OpenSplit split_open(const NodeMask& flagged) {
  OpenSplit s;
  s.open = opening(flagged, 1) & flagged;
  s.components = connected_components(s.open);
  s.residual = flagged - s.open;
  return s;
}

}  // namespace cdii
