#pragma once

#include <cdii/calculus.hpp>
#include <cdii/cg.hpp>
#include <cdii/errors.hpp>
#include <cdii/geometry.hpp>
#include <cdii/grid.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace cdii {

inline constexpr double kInfiniteContrast = std::numeric_limits<double>::infinity();

/// Relative residual (2-norm) for the forward CG solves. Tight enough that
/// every per-node flux imbalance stays far below 1e-10.
inline constexpr double kForwardTolerance = 1e-12;

/// Conductivity problem with perfectly conducting (U) and insulating (V) inclusions.
/// `contrast` multiplies sigma1 inside U; infinity selects the perfect-conductor limit.
struct ForwardProblem {
  InclusionGeometry geometry;
  ScalarField sigma;   ///< on Omega \ (U u V)
  ScalarField sigma1;  ///< on U
  double contrast = kInfiniteContrast;
  ScalarField f;       ///< Dirichlet values on geometry.boundary()
  std::string preset;  ///< name of the phantom this problem came from, if any

  [[nodiscard]] double lambda_lo() const { return bounds().first; }
  [[nodiscard]] double lambda_hi() const { return bounds().second; }

  [[nodiscard]] std::pair<double, double> bounds() const {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    const auto& bg = geometry.background();
    const auto& um = geometry.u_mask();
    for (std::size_t k = 0; k < bg.size(); ++k) {
      if (bg[k]) lo = std::min(lo, sigma[k]), hi = std::max(hi, sigma[k]);
      if (um[k]) lo = std::min(lo, sigma1[k]), hi = std::max(hi, sigma1[k]);
    }
    return {lo, hi};
  }

  void validate() const {
    const Grid& g = geometry.grid();
    if (!(sigma.grid() == g) || !(f.grid() == g))
      throw InvalidProblemError("forward problem: fields do not match the geometry grid");
    if (geometry.u_mask().any() && !(sigma1.grid() == g))
      throw InvalidProblemError("forward problem: sigma1 missing for U");
    if (!(contrast > 1.0)) throw InvalidProblemError("forward problem: contrast must exceed 1");
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (geometry.background()[k] && !(sigma.defined(k) && sigma[k] > 0.0 && std::isfinite(sigma[k])))
        throw InvalidProblemError("forward problem: sigma must be positive and finite off the inclusions");
      if (geometry.u_mask()[k] && !(sigma1.defined(k) && sigma1[k] > 0.0 && std::isfinite(sigma1[k])))
        throw InvalidProblemError("forward problem: sigma1 must be positive and finite on U");
      if (geometry.boundary()[k] && !(f.defined(k) && std::isfinite(f[k])))
        throw InvalidProblemError("forward problem: boundary trace missing at a boundary node");
    }
  }

  /// Nodal conductivity used for face averaging: sigma outside, contrast*sigma1
  /// (or infinity) in U, zero in V and outside Omega.
  [[nodiscard]] ScalarField nodal_conductivity(double k) const {
    const Grid& g = geometry.grid();
    ScalarField c(g, geometry.omega(), 0.0);
    for (std::size_t n = 0; n < g.size(); ++n) {
      if (geometry.background()[n]) c[n] = sigma[n];
      else if (geometry.u_mask()[n]) c[n] = std::isinf(k) ? k : k * sigma1[n];
    }
    return c;
  }
};

struct ForwardSolution {
  ScalarField u;  ///< defined on Omega \ V
  double energy = 0.0;
  std::map<int, double> per_component_flux;
  std::size_t iterations = 0;
  double residual = 0.0;
  double contrast = kInfiniteContrast;
};

namespace detail {

template <class FaceFn>
void for_each_face(const InclusionGeometry& geo, FaceFn&& fn) {
  const Grid& g = geo.grid();
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (i + 1 < g.nx && geo.wx(i, j) > 0.0) fn(g.index(i, j), g.index(i + 1, j), geo.wx(i, j));
      if (j + 1 < g.ny && geo.wy(i, j) > 0.0) fn(g.index(i, j), g.index(i, j + 1), geo.wy(i, j));
    }
}

}  // namespace detail

/// Discrete energy 1/2 sum_f w_f sigma_f (du_f)^2 (the h factors cancel in 2D).
/// Faces touching V or lying inside one perfect conductor (infinite sigma) carry none.
inline double dirichlet_energy(const InclusionGeometry& geo, const ScalarField& cond, const ScalarField& u) {
  double e = 0.0;
  detail::for_each_face(geo, [&](std::size_t a, std::size_t b, double w) {
    if (geo.v_mask()[a] || geo.v_mask()[b]) return;
    double c = harmonic_face(cond[a], cond[b]);
    double d = u[b] - u[a];
    if (std::isinf(c)) return;
    e += w * c * d * d;
  });
  return 0.5 * e;
}

/// sum_f w_f (du_f)^2 over Omega \ V, i.e. ||grad u||^2 in the grid norm.
inline double gradient_norm_sq(const InclusionGeometry& geo, const ScalarField& u) {
  double e = 0.0;
  detail::for_each_face(geo, [&](std::size_t a, std::size_t b, double w) {
    if (geo.v_mask()[a] || geo.v_mask()[b]) return;
    double d = u[b] - u[a];
    e += w * d * d;
  });
  return e;
}

namespace detail {

inline ForwardSolution solve_impl(const ForwardProblem& p, double K, double tol) {
  p.validate();
  const InclusionGeometry& geo = p.geometry;
  const Grid& g = geo.grid();
  const bool limit = std::isinf(K);
  ScalarField cond = p.nodal_conductivity(K);

  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> unknown(g.size(), none);
  std::size_t n = 0;
  // free nodes first (raster order), then one aggregated unknown per U component
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!geo.conducting()[k] || geo.boundary()[k]) continue;
    if (limit && geo.u_mask()[k]) continue;
    unknown[k] = n++;
  }
  if (limit)
    for (const auto& c : geo.u_components()) {
      for (auto k : c.nodes) unknown[k] = n;
      ++n;
    }

  std::vector<CsrMatrix::Entry> entries;
  std::vector<double> rhs(n, 0.0);
  for_each_face(geo, [&](std::size_t a, std::size_t b, double w) {
    if (geo.v_mask()[a] || geo.v_mask()[b]) return;
    std::size_t ua = unknown[a], ub = unknown[b];
    if (ua == none && ub == none) return;
    if (ua == ub) return;  // inside one aggregated conductor
    double c = w * harmonic_face(cond[a], cond[b]);
    if (c == 0.0) return;
    if (ua != none) entries.push_back({ua, ua, c});
    if (ub != none) entries.push_back({ub, ub, c});
    if (ua != none && ub != none) {
      entries.push_back({ua, ub, -c});
      entries.push_back({ub, ua, -c});
    } else if (ua != none) {
      rhs[ua] += c * p.f[b];
    } else {
      rhs[ub] += c * p.f[a];
    }
  });
  CsrMatrix A(n, std::move(entries));

  // initial guess: mean boundary value
  double fmean = 0.0;
  std::size_t nb = 0;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (geo.boundary()[k]) fmean += p.f[k], ++nb;
  fmean = nb ? fmean / double(nb) : 0.0;
  std::vector<double> x(n, fmean);
  auto cap = std::size_t(500.0 * std::sqrt(double(std::max<std::size_t>(n, 1))));
  CgResult cg = pcg(A, rhs, x, tol, cap);
  if (!cg.converged) {
    char msg[160];
    std::snprintf(msg, sizeof msg, "forward solve: CG stopped at relative residual %.3g after %zu iterations",
                  cg.residual, cg.iterations);
    throw NoConvergenceError(msg);
  }

  ForwardSolution sol;
  sol.u = ScalarField(g, geo.conducting(), 0.0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!geo.conducting()[k]) continue;
    sol.u[k] = geo.boundary()[k] ? p.f[k] : x[unknown[k]];
  }
  sol.energy = dirichlet_energy(geo, cond, sol.u);
  for (const auto& c : geo.u_components()) sol.per_component_flux[c.id] = boundary_flux(geo, cond, sol.u, c);
  sol.iterations = cg.iterations;
  sol.residual = cg.residual;
  sol.contrast = K;
  return sol;
}

}  // namespace detail

/// Finite-contrast conductivity problem: face conductivity is the harmonic mean
/// of {K sigma1 in U, sigma outside}; V nodes are removed (zero-flux faces).
inline ForwardSolution solve_finite_contrast(const ForwardProblem& p, double tol = kForwardTolerance) {
  if (std::isinf(p.contrast)) throw InvalidProblemError("solve_finite_contrast: contrast must be finite");
  return detail::solve_impl(p, p.contrast, tol);
}

/// Perfect-conductor limit: each U component is one unknown whose row is the
/// sum of its boundary-face balances, so its net flux vanishes exactly.
inline ForwardSolution solve_limit(const ForwardProblem& p, double tol = kForwardTolerance) {
  return detail::solve_impl(p, kInfiniteContrast, tol);
}

inline ForwardSolution solve(const ForwardProblem& p, double tol = kForwardTolerance) {
  return std::isinf(p.contrast) ? solve_limit(p, tol) : solve_finite_contrast(p, tol);
}

struct ConvergenceRow {
  double contrast = 0.0;
  double distance = 0.0;         ///< ||u_K - u_0|| / ||u_0||
  double energy_gap = 0.0;       ///< |I_K[u_K] - I_0[u_0]|
  double grad_norm_ratio = 0.0;  ///< ||grad u_K||^2 / ||grad u_0||^2
  double energy = 0.0;
  double max_flux = 0.0;         ///< max |net flux| over U components
  bool bound_holds = false;
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
  std::vector<ScalarField> solutions;
  ForwardSolution limit;
  double bound = 0.0;  ///< Lambda / lambda

  void write_csv(std::ostream& os) const {
    os << "K,distance,energy_gap,grad_norm_ratio\n";
    char buf[160];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", r.contrast, r.distance, r.energy_gap,
                    r.grad_norm_ratio);
      os << buf;
    }
  }
};

/// Solves the limit problem once and each finite contrast in turn, recording
/// distances, energy gaps and the uniform gradient bound.
inline ConvergenceReport convergence_study(const ForwardProblem& p, const std::vector<double>& contrasts) {
  for (std::size_t i = 0; i < contrasts.size(); ++i) {
    if (!std::isfinite(contrasts[i]) || !(contrasts[i] > 1.0))
      throw InvalidProblemError("convergence_study: contrasts must be finite and > 1");
    if (i && !(contrasts[i] > contrasts[i - 1]))
      throw InvalidProblemError("convergence_study: contrasts must be strictly ascending");
  }
  ConvergenceReport rep;
  rep.limit = solve_limit(p);
  rep.bound = p.lambda_hi() / p.lambda_lo();
  const auto& geo = p.geometry;
  const auto& u0 = rep.limit.u;
  double n0 = 0.0;
  for (std::size_t k = 0; k < u0.size(); ++k)
    if (u0.defined(k)) n0 += u0[k] * u0[k];
  n0 = std::sqrt(n0);
  double g0 = gradient_norm_sq(geo, u0);

  for (double K : contrasts) {
    ForwardProblem pk = p;
    pk.contrast = K;
    auto sol = solve_finite_contrast(pk);
    ConvergenceRow row;
    row.contrast = K;
    double d = 0.0;
    for (std::size_t k = 0; k < u0.size(); ++k)
      if (u0.defined(k)) d += std::pow(sol.u[k] - u0[k], 2);
    row.distance = n0 > 0.0 ? std::sqrt(d) / n0 : std::sqrt(d);
    row.energy = sol.energy;
    row.energy_gap = std::abs(sol.energy - rep.limit.energy);
    row.grad_norm_ratio = g0 > 0.0 ? gradient_norm_sq(geo, sol.u) / g0 : 0.0;
    row.bound_holds = row.grad_norm_ratio <= rep.bound;
    for (auto [id, fl] : sol.per_component_flux) row.max_flux = std::max(row.max_flux, std::abs(fl));
    rep.rows.push_back(row);
    rep.solutions.push_back(std::move(sol.u));
  }
  return rep;
}

}  // namespace cdii
