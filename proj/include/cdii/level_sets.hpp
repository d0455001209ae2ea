#pragma once

#include <cdii/cdf_io.hpp>
#include <cdii/errors.hpp>
#include <cdii/geometry.hpp>
#include <cdii/grid.hpp>
#include <cdii/least_gradient.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <random>
#include <vector>

namespace cdii {

struct Segment {
  double x0, y0, x1, y1;
  [[nodiscard]] double length() const { return std::hypot(x1 - x0, y1 - y0); }
};

/// One level set u = lambda as marching-squares segments with its weighted length.
struct LevelSetSample {
  double lambda = 0.0;  ///< requested level
  double traced = 0.0;  ///< level actually traced (shifted off node ties)
  std::vector<Segment> segments;
  double area = 0.0;  ///< sum over segments of a(midpoint) * length
  bool empty = false;  ///< lambda outside the range of u
};

namespace detail {

/// Cells (lower-left node k) whose four corners are defined in both fields.
inline std::vector<std::size_t> full_cells(const ScalarField& a, const ScalarField& u) {
  const Grid& g = u.grid();
  std::vector<std::size_t> out;
  for (int j = 0; j + 1 < g.ny; ++j)
    for (int i = 0; i + 1 < g.nx; ++i) {
      bool ok = true;
      for (auto k : {g.index(i, j), g.index(i + 1, j), g.index(i, j + 1), g.index(i + 1, j + 1)})
        ok = ok && u.defined(k) && a.defined(k);
      if (ok) out.push_back(g.index(i, j));
    }
  return out;
}

inline double bilinear(double v00, double v10, double v01, double v11, double s, double t) {
  return (1 - s) * (1 - t) * v00 + s * (1 - t) * v10 + (1 - s) * t * v01 + s * t * v11;
}

}  // namespace detail

/// Marching squares on the bilinear interpolant. A level within 1e-9 of a node
/// value is moved up by 1e-9 (repeatedly) so no corner sits on it. Saddle
/// cells are split by the value at the cell centre.
inline LevelSetSample level_set_area(const ScalarField& a, const ScalarField& u, double lambda) {
  const Grid& g = u.grid();
  if (!(a.grid() == g)) throw InconsistentGeometryError("level_set_area: a and u live on different grids");
  auto cells = detail::full_cells(a, u);
  LevelSetSample out;
  out.lambda = lambda;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto k : cells)
    for (auto n : {k, k + 1, k + std::size_t(g.nx), k + std::size_t(g.nx) + 1}) {
      lo = std::min(lo, u[n]);
      hi = std::max(hi, u[n]);
    }
  double lam = lambda;
  for (int tries = 0; tries < 64; ++tries) {
    bool tie = false;
    for (auto k : cells)
      for (auto n : {k, k + 1, k + std::size_t(g.nx), k + std::size_t(g.nx) + 1}) tie = tie || std::abs(u[n] - lam) < 1e-9;
    if (!tie) break;
    lam += 1e-9;
  }
  out.traced = lam;
  if (cells.empty() || lam <= lo || lam >= hi) {
    out.empty = true;
    return out;
  }

  for (auto k : cells) {
    int i = g.col(k), j = g.row(k);
    // corners counter-clockwise from the lower left
    const double v[4] = {u[k], u[k + 1], u[k + std::size_t(g.nx) + 1], u[k + std::size_t(g.nx)]};
    const double w[4] = {a[k], a[k + 1], a[k + std::size_t(g.nx) + 1], a[k + std::size_t(g.nx)]};
    const double cx[4] = {0, 1, 1, 0}, cy[4] = {0, 0, 1, 1};
    int code = 0;
    for (int c = 0; c < 4; ++c)
      if (v[c] > lam) code |= 1 << c;
    if (code == 0 || code == 15) continue;
    // crossing point on edge e (corner e to corner e+1), in cell coordinates
    auto cross = [&](int e) {
      int c0 = e, c1 = (e + 1) % 4;
      double s = (lam - v[c0]) / (v[c1] - v[c0]);
      return std::pair{cx[c0] + s * (cx[c1] - cx[c0]), cy[c0] + s * (cy[c1] - cy[c0])};
    };
    std::vector<int> edges;
    for (int e = 0; e < 4; ++e)
      if (((code >> e) & 1) != ((code >> ((e + 1) % 4)) & 1)) edges.push_back(e);
    std::vector<std::pair<int, int>> pairs;
    if (edges.size() == 2) {
      pairs.emplace_back(edges[0], edges[1]);
    } else {
      // saddle: edges 0..3 all cut; join around the corners whose side the centre is not on
      double centre = 0.25 * (v[0] + v[1] + v[2] + v[3]);
      bool centre_above = centre > lam;
      bool c0_above = (code & 1) != 0;
      if (centre_above == c0_above) pairs = {{0, 1}, {2, 3}};  // isolate corners 1 and 3
      else pairs = {{3, 0}, {1, 2}};                           // isolate corners 0 and 2
    }
    for (auto [e0, e1] : pairs) {
      auto [s0, t0] = cross(e0);
      auto [s1, t1] = cross(e1);
      Segment seg{g.x(i) + s0 * g.h, g.y(j) + t0 * g.h, g.x(i) + s1 * g.h, g.y(j) + t1 * g.h};
      double am = detail::bilinear(w[0], w[1], w[3], w[2], 0.5 * (s0 + s1), 0.5 * (t0 + t1));
      out.area += am * seg.length();
      out.segments.push_back(seg);
    }
  }
  return out;
}

/// Same, but an empty level set is an error.
inline LevelSetSample require_level_set(const ScalarField& a, const ScalarField& u, double lambda) {
  auto s = level_set_area(a, u, lambda);
  if (s.empty) throw EmptyLevelSetError("level " + std::to_string(lambda) + " lies outside the range of u");
  return s;
}

/// Integral of a |grad u| by the midpoint rule on cells, the gradient taken
/// from the bilinear interpolant at the cell centre.
inline double cell_energy(const ScalarField& a, const ScalarField& u) {
  const Grid& g = u.grid();
  double e = 0.0;
  for (auto k : detail::full_cells(a, u)) {
    auto k10 = k + 1, k01 = k + std::size_t(g.nx), k11 = k01 + 1;
    double gx = (u[k10] + u[k11] - u[k] - u[k01]) / (2.0 * g.h);
    double gy = (u[k01] + u[k11] - u[k] - u[k10]) / (2.0 * g.h);
    e += 0.25 * (a[k] + a[k10] + a[k01] + a[k11]) * std::hypot(gx, gy);
  }
  return e * g.h * g.h;
}

/// Range of u over the cells used by the level-set routines.
inline std::pair<double, double> cell_range(const ScalarField& a, const ScalarField& u) {
  const Grid& g = u.grid();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto k : detail::full_cells(a, u))
    for (auto n : {k, k + 1, k + std::size_t(g.nx), k + std::size_t(g.nx) + 1}) {
      lo = std::min(lo, u[n]);
      hi = std::max(hi, u[n]);
    }
  return {lo, hi};
}

struct TruncationCheck {
  double lambda = 0.0;
  double area = 0.0;
  std::array<double, 3> eps{};    ///< 4h, 2h, h
  std::array<double, 3> error{};  ///< |F(truncate(u, lambda, eps)) - A(lambda)|
  bool decreasing = false;        ///< error shrinks with eps (10% slack per step)
};

struct CoareaReport {
  double residual = 0.0;  ///< |lhs - rhs| / lhs
  double lhs = 0.0;       ///< integral of a |grad u|
  double rhs = 0.0;       ///< trapezoid integral of A(lambda)
  std::vector<TruncationCheck> truncation;
};

/// Compares the integral of a |grad u| with the trapezoid integral of A(lambda)
/// over n_levels uniform levels spanning the range of u, and checks at five
/// random levels that the truncated-energy error shrinks as eps goes 4h, 2h, h.
inline CoareaReport coarea_check(const ScalarField& a, const ScalarField& u, int n_levels, std::uint64_t seed = 1) {
  if (n_levels < 2) throw InvalidProblemError("coarea_check: need at least two levels");
  const Grid& g = u.grid();
  CoareaReport r;
  r.lhs = cell_energy(a, u);
  if (!(r.lhs > 0.0)) throw DegenerateFieldError("coarea_check: the integral of a |grad u| vanishes");
  auto [lo, hi] = cell_range(a, u);
  const double dl = (hi - lo) / double(n_levels - 1);
  // the end levels are taken as one-sided limits from inside the range
  const double inset = 1e-7 * (hi - lo);
  for (int k = 0; k < n_levels; ++k) {
    bool end = k == 0 || k == n_levels - 1;
    double lam = k == 0 ? lo + inset : k == n_levels - 1 ? hi - inset : lo + k * dl;
    r.rhs += (end ? 0.5 : 1.0) * level_set_area(a, u, lam).area * dl;
  }
  r.residual = std::abs(r.lhs - r.rhs) / r.lhs;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pick(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo));
  for (int s = 0; s < 5; ++s) {
    TruncationCheck c;
    c.lambda = pick(rng);
    auto ls = level_set_area(a, u, c.lambda);
    c.area = ls.area;
    c.eps = {4.0 * g.h, 2.0 * g.h, g.h};
    for (int e = 0; e < 3; ++e) c.error[e] = std::abs(cell_energy(a, truncate(u, ls.traced, c.eps[e])) - c.area);
    c.decreasing = c.error[1] <= 1.1 * c.error[0] && c.error[2] <= 1.1 * c.error[1];
    r.truncation.push_back(c);
  }
  return r;
}

/// Levels lo + (hi - lo)(k + theta)/count with the irrational offset theta = (sqrt5 - 1)/2.
inline std::vector<double> sample_levels(double lo, double hi, int count) {
  std::vector<double> out;
  const double theta = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int k = 0; k < count; ++k) out.push_back(lo + (hi - lo) * (double(k) + theta) / double(count));
  return out;
}

struct MinimalityOptions {
  double rel_tol = 1e-3;            ///< A(u*) <= A(v) + rel_tol A(u*)
  std::vector<double> flat_values;  ///< values of u* on flat regions; nearby levels are skipped
  double skip_width = 0.0;          ///< half-width of the skipped window (eps_u)
  double eps_a = 0.0;               ///< hypothesis check: a < eps_a on the closure of v's flat set
  double eps_g = 0.0;               ///< |grad v| < eps_g marks v's flat set
};

struct MinimalityRow {
  double lambda = 0.0;
  double area_u = 0.0, area_v = 0.0;
  bool holds = false;
  bool skipped = false;
};

struct MinimalityReport {
  std::vector<MinimalityRow> rows;
  bool hypothesis_holds = true;  ///< a vanishes on the closure of v's flat set
  double max_a_on_flat_v = 0.0;
  [[nodiscard]] double fraction_holding() const {
    std::size_t n = 0, ok = 0;
    for (const auto& r : rows)
      if (!r.skipped) {
        ++n;
        ok += r.holds;
      }
    return n ? double(ok) / double(n) : 1.0;
  }
};

/// Checks A(u*^-1(lambda)) <= A(v^-1(lambda)) + tol at each level; v must carry
/// the same trace as u* on the Dirichlet nodes of `geo`.
inline MinimalityReport minimality_test(const InclusionGeometry& geo, const ScalarField& a, const ScalarField& u_star,
                                        const ScalarField& v, const std::vector<double>& lambdas,
                                        const MinimalityOptions& opt = {}) {
  for (auto k : geo.boundary().nodes())
    if (std::abs(v[k] - u_star[k]) > 1e-10)
      throw TraceMismatchError("minimality_test: trial field differs from u* on the boundary");
  MinimalityReport rep;
  if (opt.eps_g > 0.0) {
    auto grad = forward_gradient_norm(v, geo.omega());
    NodeMask flat(geo.grid());
    for (auto k : forward_complete(geo.omega()).nodes())
      if (grad[k] < opt.eps_g) flat.set(k);
    for (auto k : (dilate(flat, 1) & geo.omega()).nodes()) rep.max_a_on_flat_v = std::max(rep.max_a_on_flat_v, a[k]);
    rep.hypothesis_holds = rep.max_a_on_flat_v < opt.eps_a;
  }
  for (double lam : lambdas) {
    MinimalityRow row;
    row.lambda = lam;
    for (double fv : opt.flat_values) row.skipped = row.skipped || std::abs(lam - fv) <= opt.skip_width;
    row.area_u = level_set_area(a, u_star, lam).area;
    row.area_v = level_set_area(a, v, lam).area;
    row.holds = row.area_u <= row.area_v + opt.rel_tol * row.area_u;
    rep.rows.push_back(row);
  }
  return rep;
}

inline void write_level_set_csv(std::ostream& os, const std::vector<LevelSetSample>& sets) {
  os << "lambda,seg_id,x0,y0,x1,y1\n";
  for (const auto& s : sets)
    for (std::size_t i = 0; i < s.segments.size(); ++i) {
      const auto& q = s.segments[i];
      os << detail::format_real(s.lambda) << ',' << i << ',' << detail::format_real(q.x0) << ',' << detail::format_real(q.y0) << ','
         << detail::format_real(q.x1) << ',' << detail::format_real(q.y1) << '\n';
    }
}

inline void write_minimality_csv(std::ostream& os, const MinimalityReport& rep) {
  os << "lambda,area_u,area_v,holds\n";
  for (const auto& r : rep.rows)
    os << detail::format_real(r.lambda) << ',' << detail::format_real(r.area_u) << ',' << detail::format_real(r.area_v) << ','
       << (r.skipped ? "skipped" : r.holds ? "true" : "false") << '\n';
}

}  // namespace cdii
