#pragma once

#include <cdii/calculus.hpp>
#include <cdii/cg.hpp>
#include <cdii/errors.hpp>
#include <cdii/forward.hpp>
#include <cdii/geometry.hpp>
#include <cdii/grid.hpp>

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace cdii {

enum class Provenance { synthesized, loaded };

/// Boundary voltage plus interior current magnitude a = |J|.
struct AdmissiblePair {
  ScalarField f;  ///< on geometry.boundary()
  ScalarField a;  ///< on Omega
  InclusionGeometry geometry;
  Provenance provenance = Provenance::synthesized;
  std::string extension;  ///< how a was filled inside U
};

struct Extension {
  enum class Mode { finite_contrast, analytic_example, none };
  Mode mode = Mode::finite_contrast;
  double contrast = 1e4;

  static Extension finite(double K = 1e4) { return {Mode::finite_contrast, K}; }
  static Extension analytic() { return {Mode::analytic_example, 0.0}; }
  static Extension zero() { return {Mode::none, 0.0}; }

  [[nodiscard]] std::string name() const {
    switch (mode) {
      case Mode::finite_contrast: {
        char buf[48];
        std::snprintf(buf, sizeof buf, "finite_contrast(%g)", contrast);
        return buf;
      }
      case Mode::analytic_example: return "analytic_example";
      case Mode::none: return "none";
    }
    return "?";
  }
};

inline constexpr const char* kDiskExamplePreset = "disk-example";

/// Interior magnitude data from a limit solve: a = |J| from the forward face
/// currents off the inclusions, 0 in V, and a current extension inside U.
inline AdmissiblePair synthesize_magnitude(const ForwardSolution& sol, const ForwardProblem& p, Extension ext) {
  if (!std::isinf(sol.contrast))
    throw InvalidProblemError("synthesize_magnitude: expects a perfect-conductor (limit) solution");
  if (ext.mode == Extension::Mode::analytic_example && p.preset != kDiskExamplePreset)
    throw ModeMismatchError("analytic_example extension is only defined for the disk-example phantom");
  const auto& geo = p.geometry;
  const Grid& g = geo.grid();
  AdmissiblePair pair;
  pair.geometry = geo;
  pair.f = p.f;
  pair.provenance = Provenance::synthesized;
  pair.extension = ext.name();
  pair.a = ScalarField(g, geo.omega(), 0.0);

  ScalarField cur = forward_current_norm(p.nodal_conductivity(kInfiniteContrast), sol.u, geo.conducting());
  for (auto k : geo.background().nodes()) pair.a[k] = cur[k];

  switch (ext.mode) {
    case Extension::Mode::finite_contrast: {
      ForwardProblem pk = p;
      pk.contrast = ext.contrast;
      auto fine = solve_finite_contrast(pk);
      ScalarField inner = forward_current_norm(pk.nodal_conductivity(ext.contrast), fine.u, geo.conducting());
      for (auto k : geo.u_mask().nodes()) pair.a[k] = inner[k];
      break;
    }
    case Extension::Mode::analytic_example:
      // unit circulating field: |J| = 1 throughout U
      for (std::size_t k = 0; k < g.size(); ++k)
        if (geo.u_mask()[k]) pair.a[k] = 1.0;
      break;
    case Extension::Mode::none: break;
  }
  return pair;
}

/// Analytic Example phantom on the unit disc: U is the inscribed square
/// (-1/sqrt2, 1/sqrt2)^2, a = 1, u = 2x^2-1 / 0 / 1-2y^2 (cos 2 theta on the circle).
struct Phantom {
  ForwardProblem problem;
  AdmissiblePair pair;
  ScalarField u_exact;      ///< on Omega
  ScalarField sigma_exact;  ///< on Omega \ U
};

inline double example_u(double x, double y) {
  const double s = std::numbers::sqrt2 / 2.0;
  if (std::abs(x) < s && std::abs(y) < s) return 0.0;
  return std::abs(x) >= std::abs(y) ? 2.0 * x * x - 1.0 : 1.0 - 2.0 * y * y;
}

inline double example_sigma(double x, double y) { return 0.25 / std::max(std::abs(x), std::abs(y)); }

inline Phantom example_phantom(int n) {
  if (n < 51 || n % 2 == 0) throw InvalidProblemError("example_phantom: n must be odd and >= 51");
  const double s = std::numbers::sqrt2 / 2.0;
  BuildOptions opts;
  opts.allow_boundary_contact = true;  // the square's corners lie on the circle
  auto geo = build_geometry(Disc{0.0, 0.0, 1.0}, {{Rect{-s, -s, s, s}, InclusionKind::perfect}}, n, opts);
  const Grid& g = geo.grid();

  Phantom ph;
  ph.problem.geometry = geo;
  ph.problem.sigma = ScalarField::sample(g, geo.background(), example_sigma);
  ph.problem.sigma1 = ScalarField::sample(g, geo.u_mask(), [](double, double) { return 0.25 * std::numbers::sqrt2; });
  // u_sigma at the Dirichlet nodes; equals cos 2 theta on the circle itself
  ph.problem.f = ScalarField::sample(g, geo.boundary(), example_u);
  ph.problem.contrast = kInfiniteContrast;
  ph.problem.preset = kDiskExamplePreset;

  ph.pair.geometry = geo;
  ph.pair.f = ph.problem.f;
  ph.pair.a = ScalarField(g, geo.omega(), 1.0);
  ph.pair.provenance = Provenance::synthesized;
  ph.pair.extension = Extension::analytic().name();

  ph.u_exact = ScalarField::sample(g, geo.omega(), example_u);
  ph.sigma_exact = ScalarField::sample(g, geo.omega() - geo.u_mask(), example_sigma);
  return ph;
}

enum class Verdict { admissible, inadmissible, undecided };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::admissible: return "admissible";
    case Verdict::inadmissible: return "inadmissible";
    case Verdict::undecided: return "undecided";
  }
  return "?";
}

struct AdmissibilityOptions {
  std::size_t max_iterations = 10000;
  double feasibility_rel_tol = 1e-6;  ///< slack threshold relative to max a
  double flux_rel_tol = 1e-8;         ///< net flux threshold relative to total boundary flux
  double eps_a_rel = 1e-3;            ///< zero threshold for a
};

struct ZeroPartition {
  std::size_t open_components = 0;
  std::size_t open_nodes = 0;
  std::size_t gamma_nodes = 0;
};

struct AdmissibilityReport {
  double cond_i_residual = 0.0;   ///< max |a - sigma|grad u|| on stencil-complete nodes off a 1-node inclusion collar
  double cond_i_tolerance = 0.0;
  double v_max_a = 0.0;           ///< max a on V
  std::map<int, double> per_component_net_flux;
  double net_flux_tolerance = 0.0;
  std::map<int, double> per_component_slack;
  double cond_ii_slack = 0.0;     ///< max_f (|q_f| - a_f) of the best certifying flux; <= 0 feasible
  double cond_ii_threshold = 0.0;
  std::size_t cond_ii_iterations = 0;
  ZeroPartition cond_iii;
  Verdict verdict = Verdict::undecided;
  std::string reason;
};

namespace detail {

/// Search for a divergence-free face flux in one U component matching the
/// outward boundary flux `outflow` with |q_f| <= a at the face's west or south
/// node, by alternating projection between the affine balance set and that
/// box. Returns the best slack found.
struct FeasibilityResult {
  double slack = 0.0;
  std::size_t iterations = 0;
};

inline FeasibilityResult certify_flux(const InclusionGeometry& geo, const Component& comp,
                                      const std::vector<double>& outflow, const ScalarField& a, double threshold,
                                      std::size_t max_iter) {
  const Grid& g = geo.grid();
  std::map<std::size_t, std::size_t> local;
  for (std::size_t n = 0; n < comp.nodes.size(); ++n) local[comp.nodes[n]] = n;
  struct Face {
    std::size_t a, b;
    double len, cap;
  };
  std::vector<Face> faces;
  for (std::size_t n = 0; n < comp.nodes.size(); ++n) {
    auto k = comp.nodes[n];
    int i = g.col(k), j = g.row(k);
    if (geo.u_mask().at(i + 1, j) && geo.wx(i, j) > 0.0)
      faces.push_back({n, local.at(g.index(i + 1, j)), geo.wx(i, j) * g.h, a[k]});
    if (geo.u_mask().at(i, j + 1) && geo.wy(i, j) > 0.0)
      faces.push_back({n, local.at(g.index(i, j + 1)), geo.wy(i, j) * g.h, a[k]});
  }
  const std::size_t nn = comp.nodes.size();
  FeasibilityResult res;
  if (faces.empty()) {
    double m = 0.0;
    for (double o : outflow) m = std::max(m, std::abs(o));
    res.slack = m > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    return res;
  }

  // Laplacian D D^T with node 0 pinned (the balance rows sum to the net flux)
  std::vector<CsrMatrix::Entry> e;
  for (const auto& f : faces) {
    double w = f.len * f.len;
    if (f.a) e.push_back({f.a - 1, f.a - 1, w});
    if (f.b) e.push_back({f.b - 1, f.b - 1, w});
    if (f.a && f.b) {
      e.push_back({f.a - 1, f.b - 1, -w});
      e.push_back({f.b - 1, f.a - 1, -w});
    }
  }
  CsrMatrix L(nn - 1, std::move(e));
  std::vector<double> lambda(nn - 1, 0.0), rhs(nn - 1), q(faces.size(), 0.0), bal(nn);

  // project q onto {D q + outflow = 0}
  auto project = [&](std::vector<double>& qv) {
    std::fill(bal.begin(), bal.end(), 0.0);
    for (std::size_t f = 0; f < faces.size(); ++f) {
      bal[faces[f].a] += faces[f].len * qv[f];
      bal[faces[f].b] -= faces[f].len * qv[f];
    }
    for (std::size_t n = 1; n < nn; ++n) rhs[n - 1] = bal[n] + outflow[n];
    pcg(L, rhs, lambda, 1e-12, 20 * nn + 100);
    for (std::size_t f = 0; f < faces.size(); ++f) {
      double la = faces[f].a ? lambda[faces[f].a - 1] : 0.0;
      double lb = faces[f].b ? lambda[faces[f].b - 1] : 0.0;
      qv[f] -= faces[f].len * (la - lb);
    }
  };
  auto slack_of = [&](const std::vector<double>& qv) {
    double s = -std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < faces.size(); ++f) s = std::max(s, std::abs(qv[f]) - faces[f].cap);
    return s;
  };

  project(q);
  double best = slack_of(q);
  double checkpoint = best;
  for (std::size_t it = 1; it <= max_iter && best > threshold; ++it) {
    for (std::size_t f = 0; f < faces.size(); ++f) q[f] = std::clamp(q[f], -faces[f].cap, faces[f].cap);
    project(q);
    best = std::min(best, slack_of(q));
    res.iterations = it;
    // stagnation: the slack has settled well above the threshold
    if (it % 500 == 0) {
      if (best > 10.0 * threshold && checkpoint - best <= 1e-3 * best) break;
      checkpoint = best;
    }
  }
  res.slack = best;
  return res;
}

}  // namespace detail

/// Computational check of the admissibility conditions for (f, a) against a
/// candidate generating conductivity and its potential.
///
/// (i)   a = sigma |grad u| off the inclusions and a = 0 on V;
/// (ii)  per U component: zero net flux (necessary) and a certifying
///       divergence-free flux below a (sufficient);
/// (iii) {a < eps_a} outside the closure of U split into open part and residual.
inline AdmissibilityReport check_admissibility(const AdmissiblePair& pair, const ScalarField& sigma,
                                               const ScalarField& u_sigma, AdmissibilityOptions opt = {}) {
  const auto& geo = pair.geometry;
  const Grid& g = geo.grid();
  if (!(sigma.grid() == g) || !(u_sigma.grid() == g) || !(pair.a.grid() == g))
    throw InconsistentGeometryError("check_admissibility: grids differ");
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (geo.background()[k] && !sigma.defined(k))
      throw InconsistentGeometryError("check_admissibility: sigma undefined off the inclusions");
    if (geo.conducting()[k] && !u_sigma.defined(k))
      throw InconsistentGeometryError("check_admissibility: potential undefined on Omega \\ V");
    if (geo.omega()[k] && !pair.a.defined(k))
      throw InconsistentGeometryError("check_admissibility: a undefined on Omega");
  }

  AdmissibilityReport rep;
  double amax = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (geo.omega()[k]) amax = std::max(amax, pair.a[k]);
  const double eps_a = opt.eps_a_rel * amax;

  // (i)
  ScalarField grad = forward_gradient_norm(u_sigma, geo.conducting());
  NodeMask collar = dilate(geo.u_mask() | geo.v_mask(), 1);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      auto k = g.index(i, j);
      if (!geo.background()[k] || collar[k] || geo.boundary()[k]) continue;
      bool complete = i > 0 && j > 0 && i + 1 < g.nx && j + 1 < g.ny && geo.wx(i, j) == 1.0 &&
                      geo.wx(i - 1, j) == 1.0 && geo.wy(i, j) == 1.0 && geo.wy(i, j - 1) == 1.0;
      if (!complete) continue;
      rep.cond_i_residual = std::max(rep.cond_i_residual, std::abs(pair.a[k] - sigma[k] * grad[k]));
    }
  rep.cond_i_tolerance = g.h * amax;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (geo.v_mask()[k]) rep.v_max_a = std::max(rep.v_max_a, pair.a[k]);

  // (ii)
  ScalarField cond(g, geo.omega(), 0.0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (geo.background()[k]) cond[k] = sigma[k];
    if (geo.u_mask()[k]) cond[k] = kInfiniteContrast;
  }
  rep.cond_ii_threshold = opt.feasibility_rel_tol * amax;
  rep.cond_ii_slack = -std::numeric_limits<double>::infinity();
  bool flux_bad = false;
  for (const auto& comp : geo.u_components()) {
    std::vector<double> outflow(comp.nodes.size(), 0.0);
    double total = 0.0, net = 0.0;
    for (std::size_t n = 0; n < comp.nodes.size(); ++n) {
      auto k = comp.nodes[n];
      int i = g.col(k), j = g.row(k);
      auto face = [&](int ni, int nj, double w) {
        if (!g.contains(ni, nj) || w <= 0.0) return;
        auto m = g.index(ni, nj);
        if (geo.u_mask()[m] || !geo.conducting()[m]) return;
        double fl = w * harmonic_face(cond[k], cond[m]) * (u_sigma[m] - u_sigma[k]);
        outflow[n] += fl;
        total += std::abs(fl);
      };
      if (i + 1 < g.nx) face(i + 1, j, geo.wx(i, j));
      if (i > 0) face(i - 1, j, geo.wx(i - 1, j));
      if (j + 1 < g.ny) face(i, j + 1, geo.wy(i, j));
      if (j > 0) face(i, j - 1, geo.wy(i, j - 1));
      net += outflow[n];
    }
    rep.per_component_net_flux[comp.id] = net;
    double ftol = opt.flux_rel_tol * std::max(total, 1.0);
    rep.net_flux_tolerance = std::max(rep.net_flux_tolerance, ftol);
    if (std::abs(net) > ftol) {
      flux_bad = true;
      rep.per_component_slack[comp.id] = std::numeric_limits<double>::infinity();
      rep.cond_ii_slack = std::numeric_limits<double>::infinity();
      continue;
    }
    // remove the round-off net flux so the balance system is consistent
    for (auto& o : outflow) o -= net / double(outflow.size());
    auto fr = detail::certify_flux(geo, comp, outflow, pair.a, rep.cond_ii_threshold, opt.max_iterations);
    rep.per_component_slack[comp.id] = fr.slack;
    rep.cond_ii_iterations = std::max(rep.cond_ii_iterations, fr.iterations);
    rep.cond_ii_slack = std::max(rep.cond_ii_slack, fr.slack);
  }
  if (geo.u_components().empty()) rep.cond_ii_slack = 0.0;

  // (iii)
  NodeMask flagged(g);
  NodeMask ubar = dilate(geo.u_mask(), 1);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (geo.omega()[k] && !ubar[k] && pair.a[k] < eps_a) flagged.set(k);
  auto split = split_open(flagged);
  rep.cond_iii.open_components = split.components.size();
  rep.cond_iii.open_nodes = split.open.count();
  rep.cond_iii.gamma_nodes = split.residual.count();

  if (flux_bad) {
    rep.verdict = Verdict::inadmissible;
    rep.reason = "nonzero net flux through a perfect conductor";
  } else if (rep.cond_ii_slack > rep.cond_ii_threshold) {
    rep.verdict = Verdict::inadmissible;
    rep.reason = "no divergence-free flux inside U fits under a";
  } else if (rep.cond_i_residual > rep.cond_i_tolerance || rep.v_max_a > eps_a) {
    rep.verdict = Verdict::undecided;
    rep.reason = "a does not match the supplied conductivity";
  } else {
    rep.verdict = Verdict::admissible;
    rep.reason = "all conditions hold";
  }
  return rep;
}

}  // namespace cdii
