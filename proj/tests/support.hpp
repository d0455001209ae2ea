#pragma once

#include <cdii/forward.hpp>
#include <cdii/geometry.hpp>
#include <cdii/synthesis.hpp>

#include "oracles/subgradient.hpp"

#include <cmath>
#include <functional>
#include <random>

namespace cdii::test {

inline ForwardProblem square_problem(int n, const std::function<double(double, double)>& f,
                                     std::vector<InclusionSpec> inclusions = {}) {
  ForwardProblem p;
  p.geometry = build_geometry(Rect{0, 0, 1, 1}, inclusions, n);
  const Grid& g = p.geometry.grid();
  p.sigma = ScalarField::sample(g, p.geometry.background(), [](double, double) { return 1.0; });
  p.sigma1 = ScalarField::sample(g, p.geometry.u_mask(), [](double, double) { return 1.0; });
  p.f = ScalarField::sample(g, p.geometry.boundary(), f);
  return p;
}

/// Example-1 problem with its boundary trace replaced by x^2 - y^2 sampled at the nodes.
inline ForwardProblem example_problem_xy(int n) {
  auto ph = example_phantom(n);
  const Grid& g = ph.problem.geometry.grid();
  ph.problem.f = ScalarField::sample(g, ph.problem.geometry.boundary(), [](double x, double y) { return x * x - y * y; });
  return ph.problem;
}

inline double rel_l2(const ScalarField& a, const ScalarField& b, const NodeMask& where) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (!where[k]) continue;
    num += (a[k] - b[k]) * (a[k] - b[k]);
    den += b[k] * b[k];
  }
  return std::sqrt(num / den);
}

inline double max_abs_diff(const ScalarField& a, const ScalarField& b, const NodeMask& where) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (where[k]) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

/// Pair from a limit solve of `p` with the given extension inside U.
inline AdmissiblePair pair_for(const ForwardProblem& p, Extension ext = Extension::finite(1e4)) {
  return synthesize_magnitude(solve_limit(p), p, ext);
}

/// Random 8x8 unit-square instance: a uniform in [0.1, 2] on every node, f
/// uniform in [-1, 1] on the outer ring. Returns the pair and the same data
/// for the subgradient oracle.
inline std::pair<AdmissiblePair, oracle::Instance> random_small_instance(std::mt19937_64& rng) {
  auto geo = build_geometry(Rect{0, 0, 1, 1}, {}, 8);
  const Grid& g = geo.grid();
  std::uniform_real_distribution<double> ua(0.1, 2.0), uf(-1.0, 1.0);
  AdmissiblePair pair;
  pair.geometry = geo;
  pair.a = ScalarField(g, geo.omega(), 0.0);
  pair.f = ScalarField(g, geo.boundary(), 0.0);
  oracle::Instance in{g.nx, g.ny, g.h, std::vector<double>(g.size()), std::vector<double>(g.size(), 0.0)};
  for (std::size_t k = 0; k < g.size(); ++k) {
    pair.a[k] = in.a[k] = ua(rng);
    if (geo.boundary()[k]) pair.f[k] = in.f[k] = uf(rng);
  }
  return {pair, in};
}

/// Smooth bump of the given amplitude supported on the disc (cx, cy, radius).
inline double bump(double x, double y, double cx, double cy, double radius, double amplitude) {
  double r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (radius * radius);
  return r2 < 1.0 ? amplitude * std::exp(1.0 - 1.0 / (1.0 - r2)) : 0.0;
}

inline double value_at(const ScalarField& u, double x, double y) {
  return u[u.grid().nearest(x, y)];
}

}  // namespace cdii::test
