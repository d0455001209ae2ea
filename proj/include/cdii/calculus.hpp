#pragma once

#include <cdii/errors.hpp>
#include <cdii/geometry.hpp>
#include <cdii/grid.hpp>

#include <array>
#include <cmath>
#include <limits>

namespace cdii {

/// Harmonic mean of two nodal conductivities; an infinite side acts as a
/// perfect conductor (the face then carries twice the finite value).
inline double harmonic_face(double a, double b) {
  if (std::isinf(a) && std::isinf(b)) return std::numeric_limits<double>::infinity();
  if (std::isinf(a)) return 2.0 * b;
  if (std::isinf(b)) return 2.0 * a;
  double s = a + b;
  return s > 0.0 ? 2.0 * a * b / s : 0.0;
}

/// Forward differences on faces whose two nodes are defined in `u`.
inline VectorField gradient(const ScalarField& u) {
  const Grid& g = u.grid();
  const NodeMask& d = u.defined_mask();
  VectorField p(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!d.at(i, j)) continue;
      if (d.at(i + 1, j)) p.x(i, j) = (u.at(i + 1, j) - u.at(i, j)) / g.h;
      if (d.at(i, j + 1)) p.y(i, j) = (u.at(i, j + 1) - u.at(i, j)) / g.h;
    }
  return p;
}

/// Negative adjoint of `gradient` restricted to faces with both nodes in `mask`.
inline ScalarField divergence(const VectorField& p, const NodeMask& mask) {
  const Grid& g = p.grid();
  ScalarField out(g, mask, 0.0);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!mask.at(i, j)) continue;
      double s = 0.0;
      if (mask.at(i + 1, j)) s += p.x(i, j);
      if (mask.at(i - 1, j)) s -= p.x(i - 1, j);
      if (mask.at(i, j + 1)) s += p.y(i, j);
      if (mask.at(i, j - 1)) s -= p.y(i, j - 1);
      out.at(i, j) = s / g.h;
    }
  return out;
}

/// h^2-weighted inner product over nodes defined in both fields.
inline double inner(const ScalarField& a, const ScalarField& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a.defined(k) && b.defined(k)) s += a[k] * b[k];
  return s * a.grid().h * a.grid().h;
}

inline double inner(const VectorField& p, const VectorField& q) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.xs().size(); ++k) s += p.xs()[k] * q.xs()[k];
  for (std::size_t k = 0; k < p.ys().size(); ++k) s += p.ys()[k] * q.ys()[k];
  return s * p.grid().h * p.grid().h;
}

/// Nodal gradient magnitude from forward differences, |(u_E - u, u_N - u)| / h.
/// A difference whose forward neighbour is outside `mask` counts as zero. Shared
/// by data synthesis, the least-gradient functional and conductivity recovery.
inline ScalarField forward_gradient_norm(const ScalarField& u, const NodeMask& mask) {
  const Grid& g = u.grid();
  ScalarField out(g, mask, 0.0);
  for (auto k : mask.nodes()) {
    int i = g.col(k), j = g.row(k);
    double dx = mask.at(i + 1, j) ? u.at(i + 1, j) - u[k] : 0.0;
    double dy = mask.at(i, j + 1) ? u.at(i, j + 1) - u[k] : 0.0;
    out[k] = std::hypot(dx, dy) / g.h;
  }
  return out;
}

/// Magnitude of the forward face currents at each node, |(q_E, q_N)| with
/// q = harmonic_face(cond) du / h. Faces leaving `mask` carry nothing.
inline ScalarField forward_current_norm(const ScalarField& cond, const ScalarField& u, const NodeMask& mask) {
  const Grid& g = u.grid();
  ScalarField out(g, mask, 0.0);
  for (auto k : mask.nodes()) {
    int i = g.col(k), j = g.row(k);
    double qx = 0.0, qy = 0.0;
    if (mask.at(i + 1, j)) {
      auto n = g.index(i + 1, j);
      qx = harmonic_face(cond[k], cond[n]) * (u[n] - u[k]);
    }
    if (mask.at(i, j + 1)) {
      auto n = g.index(i, j + 1);
      qy = harmonic_face(cond[k], cond[n]) * (u[n] - u[k]);
    }
    out[k] = std::hypot(qx, qy) / g.h;
  }
  return out;
}

/// Discrete line integral of sigma du/dnu over the boundary faces of a node
/// set, nu pointing out of the set. Face conductivity is the harmonic mean of
/// the nodal values (infinite inside a perfect conductor). Faces whose outer
/// node is undefined in `u` (insulators, exterior) carry nothing.
inline double boundary_flux(const InclusionGeometry& geo, const ScalarField& sigma, const ScalarField& u,
                            const Component& comp) {
  if (comp.nodes.empty()) throw EmptyComponentError("boundary_flux: empty component");
  const Grid& g = geo.grid();
  NodeMask in = mask_of(g, comp.nodes);
  double flux = 0.0;
  for (auto k : comp.nodes) {
    int i = g.col(k), j = g.row(k);
    auto face = [&](int ni, int nj, double w) {
      if (!g.contains(ni, nj) || in.at(ni, nj) || w <= 0.0) return;
      auto n = g.index(ni, nj);
      if (!u.defined(n)) return;
      flux += w * harmonic_face(sigma[k], sigma[n]) * (u[n] - u[k]);
    };
    if (i + 1 < g.nx) face(i + 1, j, geo.wx(i, j));
    if (i > 0) face(i - 1, j, geo.wx(i - 1, j));
    if (j + 1 < g.ny) face(i, j + 1, geo.wy(i, j));
    if (j > 0) face(i, j - 1, geo.wy(i, j - 1));
  }
  return flux;
}

}  // namespace cdii
