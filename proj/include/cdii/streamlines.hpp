#pragma once

#include <cdii/calculus.hpp>
#include <cdii/errors.hpp>
#include <cdii/forward.hpp>
#include <cdii/geometry.hpp>
#include <cdii/grid.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace cdii {

/// Current density sampled at nodes.
struct NodalVectorField {
  ScalarField x, y;
};

/// Nodal current of a forward solution: each component is the mean of the
/// face currents sigma_f du/h on the two faces along that axis (one at the edge
/// of the conducting set).
inline NodalVectorField nodal_current(const ForwardProblem& p, const ForwardSolution& sol) {
  const auto& geo = p.geometry;
  const Grid& g = geo.grid();
  const auto& mask = geo.conducting();
  ScalarField cond = p.nodal_conductivity(sol.contrast);
  NodalVectorField J{ScalarField(g, geo.omega(), 0.0), ScalarField(g, geo.omega(), 0.0)};
  auto face = [&](std::size_t k, std::size_t n) { return harmonic_face(cond[k], cond[n]) * (sol.u[n] - sol.u[k]) / g.h; };
  for (auto k : mask.nodes()) {
    int i = g.col(k), j = g.row(k);
    double sx = 0.0, sy = 0.0;
    int nx = 0, ny = 0;
    if (mask.at(i + 1, j)) sx += face(k, g.index(i + 1, j)), ++nx;
    if (mask.at(i - 1, j)) sx += face(g.index(i - 1, j), k), ++nx;
    if (mask.at(i, j + 1)) sy += face(k, g.index(i, j + 1)), ++ny;
    if (mask.at(i, j - 1)) sy += face(g.index(i, j - 1), k), ++ny;
    J.x[k] = nx ? sx / nx : 0.0;
    J.y[k] = ny ? sy / ny : 0.0;
  }
  return J;
}

struct PartialRegion {
  double alpha = 0.0, beta = 0.0;
  NodeMask region_mask;     ///< covered nodes whose reconstructed value lies in (alpha, beta)
  NodeMask gamma_boundary;  ///< Dirichlet nodes with alpha < f < beta
};

struct PartialReconstruction {
  PartialRegion region;
  ScalarField u;        ///< on coverage
  ScalarField sigma;    ///< |J| / |grad u| on region nodes off the low-current collar
  NodeMask coverage;    ///< nodes within h/2 of a traced curve sample
  std::size_t curves = 0;
  std::size_t stalled = 0;  ///< curves ended by low current or the step cap
  [[nodiscard]] bool stalled_out() const { return curves > 0 && 2 * stalled > curves; }
};

struct TraceOptions {
  double eps_a = 0.0;           ///< curves stop where |J| < eps_a
  std::size_t max_steps = 100000;
  int seeds_per_node = 4;       ///< seed budget is seeds_per_node * max(nx, ny)
};

namespace detail {

/// Bilinear interpolation of J at a point over the cell corners that lie in
/// Omega, reweighted; false when those corners carry less than half the weight.
inline bool sample_current(const NodalVectorField& J, const NodeMask& omega, double px, double py, double& jx,
                           double& jy) {
  const Grid& g = omega.grid();
  double fx = (px - g.ox) / g.h, fy = (py - g.oy) / g.h;
  int i = int(std::floor(fx)), j = int(std::floor(fy));
  double s = fx - i, t = fy - j;
  const std::array<std::array<int, 2>, 4> c{{{i, j}, {i + 1, j}, {i, j + 1}, {i + 1, j + 1}}};
  const std::array<double, 4> w{(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t};
  double wsum = 0.0;
  jx = jy = 0.0;
  for (int q = 0; q < 4; ++q) {
    if (w[q] <= 0.0 || !omega.at(c[q][0], c[q][1])) continue;
    auto k = g.index(c[q][0], c[q][1]);
    wsum += w[q];
    jx += w[q] * J.x[k];
    jy += w[q] * J.y[k];
  }
  if (wsum < 0.5) return false;
  jx /= wsum;
  jy /= wsum;
  return true;
}

/// Uniform bucket grid for nearest-sample queries.
struct SampleIndex {
  double ox = 0.0, oy = 0.0, cell = 1.0;
  int nx = 0, ny = 0;
  std::vector<std::vector<std::size_t>> buckets;
  const std::vector<std::array<double, 3>>* pts = nullptr;

  SampleIndex(const std::vector<std::array<double, 3>>& p, const Grid& g) : pts(&p) {
    ox = g.ox;
    oy = g.oy;
    cell = g.h;
    nx = g.nx;
    ny = g.ny;
    buckets.resize(std::size_t(nx) * std::size_t(ny));
    for (std::size_t s = 0; s < p.size(); ++s) buckets[bucket(p[s][0], p[s][1])].push_back(s);
  }
  [[nodiscard]] std::size_t bucket(double x, double y) const {
    int i = std::clamp(int(std::floor((x - ox) / cell)), 0, nx - 1);
    int j = std::clamp(int(std::floor((y - oy) / cell)), 0, ny - 1);
    return std::size_t(j) * std::size_t(nx) + std::size_t(i);
  }

  /// Up to `k` nearest samples as (distance, index), nearest first.
  [[nodiscard]] std::vector<std::pair<double, std::size_t>> nearest(double x, double y, std::size_t k) const {
    std::vector<std::pair<double, std::size_t>> found;
    int ci = std::clamp(int(std::floor((x - ox) / cell)), 0, nx - 1);
    int cj = std::clamp(int(std::floor((y - oy) / cell)), 0, ny - 1);
    for (int r = 0; r < std::max(nx, ny); ++r) {
      for (int j = cj - r; j <= cj + r; ++j)
        for (int i = ci - r; i <= ci + r; ++i) {
          if (std::max(std::abs(i - ci), std::abs(j - cj)) != r) continue;
          if (i < 0 || j < 0 || i >= nx || j >= ny) continue;
          for (auto s : buckets[std::size_t(j) * std::size_t(nx) + std::size_t(i)])
            found.emplace_back(std::hypot((*pts)[s][0] - x, (*pts)[s][1] - y), s);
        }
      // every sample outside the searched rings is at least r * cell away
      if (found.size() >= k) {
        std::partial_sort(found.begin(), found.begin() + std::ptrdiff_t(k), found.end());
        if (found[k - 1].first <= r * cell) {
          found.resize(k);
          return found;
        }
      }
    }
    std::sort(found.begin(), found.end());
    if (found.size() > k) found.resize(k);
    return found;
  }
};

}  // namespace detail

/// Rebuilds u on the part of Omega reached by the level curves that start on
/// the Dirichlet nodes where alpha < f < beta. Level curves are integral
/// curves of J rotated by 90 degrees, traced both ways by RK4 with step h/2;
/// a curve carries its seed's f value. Curves end on leaving Omega, where
/// |J| < eps_a, or after max_steps. Node values are inverse-distance weighted
/// over the 8 nearest curve samples; nodes with no sample within h/2 stay
/// uncovered. sigma = |J| / |grad u| on region nodes away from low current.
inline PartialReconstruction reconstruct_from_full_J(const InclusionGeometry& geo, const NodalVectorField& J,
                                                     const ScalarField& f, double alpha, double beta,
                                                     const TraceOptions& opt = {}) {
  const Grid& g = geo.grid();
  const auto& omega = geo.omega();
  if (!(alpha < beta)) throw InvalidProblemError("reconstruct_from_full_J: need alpha < beta");

  PartialReconstruction out;
  out.region.alpha = alpha;
  out.region.beta = beta;
  out.region.gamma_boundary = NodeMask(g);
  std::vector<std::size_t> eligible;
  for (auto k : geo.boundary().nodes())
    if (f.defined(k) && f[k] > alpha && f[k] < beta) {
      eligible.push_back(k);
      out.region.gamma_boundary.set(k);
    }
  if (eligible.empty()) throw NoSeedError("no Dirichlet node has f in (alpha, beta)");

  // seeds: eligible nodes plus midpoints of 8-adjacent eligible pairs, thinned
  // to the seed budget
  std::vector<std::array<double, 3>> seeds;
  for (auto k : eligible) seeds.push_back({g.x(g.col(k)), g.y(g.row(k)), f[k]});
  for (auto k : eligible) {
    int i = g.col(k), j = g.row(k);
    for (auto [di, dj] : {std::pair{1, 0}, {0, 1}, {1, 1}, {1, -1}}) {
      if (!out.region.gamma_boundary.at(i + di, j + dj)) continue;
      auto n = g.index(i + di, j + dj);
      seeds.push_back({g.x(i) + 0.5 * di * g.h, g.y(j) + 0.5 * dj * g.h, 0.5 * (f[k] + f[n])});
    }
  }
  const std::size_t budget = std::size_t(opt.seeds_per_node) * std::size_t(std::max(g.nx, g.ny));
  if (seeds.size() > budget) {
    std::vector<std::array<double, 3>> thin;
    for (std::size_t s = 0; s < budget; ++s) thin.push_back(seeds[s * seeds.size() / budget]);
    seeds.swap(thin);
  }

  const double step = 0.5 * g.h;
  std::vector<std::array<double, 3>> samples;
  // unit rotated direction; false where the field is unusable, with low_hit set
  // when that is for lack of current rather than leaving Omega
  bool low_hit = false;
  auto dir = [&](double x, double y, double sign, double& dx, double& dy) {
    double jx, jy;
    if (!detail::sample_current(J, omega, x, y, jx, jy)) return false;
    double m = std::hypot(jx, jy);
    if (!(m >= opt.eps_a) || m == 0.0) {
      low_hit = true;
      return false;
    }
    dx = -sign * jy / m;
    dy = sign * jx / m;
    return true;
  };
  for (const auto& sd : seeds) {
    samples.push_back(sd);
    for (double sign : {1.0, -1.0}) {
      double x = sd[0], y = sd[1];
      std::size_t n = 0;
      bool stalled = false;
      low_hit = false;
      for (; n < opt.max_steps; ++n) {
        double k1x, k1y, k2x, k2y, k3x, k3y, k4x, k4y;
        if (!dir(x, y, sign, k1x, k1y) || !dir(x + 0.5 * step * k1x, y + 0.5 * step * k1y, sign, k2x, k2y) ||
            !dir(x + 0.5 * step * k2x, y + 0.5 * step * k2y, sign, k3x, k3y) ||
            !dir(x + step * k3x, y + step * k3y, sign, k4x, k4y)) {
          stalled = low_hit;
          break;
        }
        x += step / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
        y += step / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y);
        samples.push_back({x, y, sd[2]});
      }
      if (n == opt.max_steps) stalled = true;
      // a curve that leaves within two cells without stalling was traced
      // outward from the seed
      if (stalled || n > 4) {
        ++out.curves;
        out.stalled += stalled;
      }
    }
  }

  out.coverage = NodeMask(g);
  out.u = ScalarField(g, NodeMask(g), 0.0);
  out.region.region_mask = NodeMask(g);
  detail::SampleIndex index(samples, g);
  for (auto k : omega.nodes()) {
    double x = g.x(g.col(k)), y = g.y(g.row(k));
    auto near = index.nearest(x, y, 8);
    if (near.empty() || near.front().first > 0.5 * g.h * (1.0 + 1e-9)) continue;
    double num = 0.0, den = 0.0;
    bool exact = false;
    for (auto [d, s] : near) {
      if (d < 1e-12 * g.h) {
        num = samples[s][2];
        den = 1.0;
        exact = true;
        break;
      }
      num += samples[s][2] / d;
      den += 1.0 / d;
    }
    out.u[k] = exact ? num : num / den;
    out.u.set_defined(k, true);
    out.coverage.set(k);
    if (out.u[k] > alpha && out.u[k] < beta) out.region.region_mask.set(k);
  }

  // sigma on region nodes whose forward neighbours are in the region, away from low current
  NodeMask low(g);
  for (auto k : omega.nodes())
    if (std::hypot(J.x[k], J.y[k]) < opt.eps_a) low.set(k);
  NodeMask where(g);
  const auto& rm = out.region.region_mask;
  for (auto k : (rm - dilate(low, 1)).nodes()) {
    int i = g.col(k), j = g.row(k);
    if (rm.at(i + 1, j) && rm.at(i, j + 1)) where.set(k);
  }
  out.sigma = ScalarField(g, where, 0.0);
  for (auto k : where.nodes()) {
    int i = g.col(k), j = g.row(k);
    double gx = (out.u.at(i + 1, j) - out.u[k]) / g.h, gy = (out.u.at(i, j + 1) - out.u[k]) / g.h;
    double gn = std::hypot(gx, gy);
    out.sigma[k] = gn > 0.0 ? std::hypot(J.x[k], J.y[k]) / gn : std::numeric_limits<double>::infinity();
  }
  return out;
}

/// Same, but more than half of the curves stalling is an error.
inline PartialReconstruction require_full_reconstruction(const PartialReconstruction& r) {
  if (r.stalled_out())
    throw StallError("reconstruct_from_full_J: " + std::to_string(r.stalled) + " of " + std::to_string(r.curves) +
                     " curves stalled before closing the region");
  return r;
}

}  // namespace cdii
