#pragma once

#include <cdii/calculus.hpp>
#include <cdii/errors.hpp>
#include <cdii/forward.hpp>
#include <cdii/geometry.hpp>
#include <cdii/grid.hpp>
#include <cdii/synthesis.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace cdii {

struct SolverParams {
  std::size_t max_iters = 200000;
  double gap_tol = 1e-6;  ///< relative primal-dual gap
  double theta = 1.0;
  double tau = 0.0;  ///< primal step; 0 derives it from s or step_ratio
  double s = 0.0;    ///< dual step; 0 derives it from tau or step_ratio
  /// sqrt(tau / s) with tau s = h^2 / 8; 0 races several ratios
  double step_ratio = 0.0;
  std::size_t check_every = 50;
};

/// F(v) = h^2 sum_i a_i |grad v|_i over the nodes of Omega.
inline double weighted_gradient_energy(const ScalarField& a, const ScalarField& v, const InclusionGeometry& geo) {
  auto g = forward_gradient_norm(v, geo.omega());
  double s = 0.0;
  for (auto k : geo.omega().nodes()) s += a[k] * g[k];
  return s * geo.grid().h * geo.grid().h;
}

/// (1/eps) min{eps, max{u - lambda, 0}} nodewise.
inline ScalarField truncate(const ScalarField& u, double lambda, double eps) {
  ScalarField out = u;
  for (std::size_t k = 0; k < u.size(); ++k)
    if (u.defined(k)) out[k] = std::min(eps, std::max(u[k] - lambda, 0.0)) / eps;
  return out;
}

/// Harmonic extension of the Dirichlet data into Omega (unit conductivity, no inclusions).
inline ScalarField harmonic_extension(const InclusionGeometry& geo, const ScalarField& f) {
  const Grid& g = geo.grid();
  ForwardProblem p;
  p.geometry = InclusionGeometry(geo.omega(), NodeMask(g), NodeMask(g));
  p.sigma = ScalarField(g, geo.omega(), 1.0);
  p.f = f;
  return solve_limit(p).u;
}

enum class ZoneLabel { perfect, insulating, singular_or_perfect, indeterminate, flat_unknown, unlabelled };

inline const char* to_string(ZoneLabel l) {
  switch (l) {
    case ZoneLabel::perfect: return "perfect";
    case ZoneLabel::insulating: return "insulating";
    case ZoneLabel::singular_or_perfect: return "singular_or_perfect";
    case ZoneLabel::indeterminate: return "indeterminate";
    case ZoneLabel::flat_unknown: return "flat_unknown";
    case ZoneLabel::unlabelled: return "unlabelled";
  }
  return "?";
}

struct ZeroComponent {
  Component nodes;
  ZoneLabel label = ZoneLabel::unlabelled;
};

struct ZeroSetDecomposition {
  std::vector<ZeroComponent> components;
  NodeMask gamma_nodes;
  NodeMask z_mask;
};

struct ReconstructionResult {
  ScalarField u;
  ScalarField sigma;
  ZeroSetDecomposition decomposition;
  std::vector<double> energy_history;  ///< primal energy after every iteration
  std::vector<double> gap_history;     ///< relative gap at every check
  std::size_t check_every = 0;
  double final_gap = std::numeric_limits<double>::infinity();
  double energy = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double tau = 0.0, s = 0.0;
  std::size_t clipped_low = 0, clipped_high = 0;
};

namespace detail {

/// The discrete gradient v -> (K_i v)_i by forward differences, one row pair
/// per Omega node; a difference whose forward neighbour leaves Omega is zero.
struct NodeOperator {
  std::vector<std::size_t> nodes;  // Omega nodes, raster order
  std::vector<std::array<std::size_t, 2>> nbr;
  std::vector<std::array<double, 2>> coef;
  std::size_t n = 0;  // grid size

  NodeOperator(const InclusionGeometry& geo) : n(geo.grid().size()) {
    const Grid& g = geo.grid();
    nodes = geo.omega().nodes();
    nbr.resize(nodes.size());
    coef.resize(nodes.size());
    for (std::size_t r = 0; r < nodes.size(); ++r) {
      int i = g.col(nodes[r]), j = g.row(nodes[r]);
      bool ex = geo.omega().at(i + 1, j), ey = geo.omega().at(i, j + 1);
      nbr[r] = {ex ? g.index(i + 1, j) : nodes[r], ey ? g.index(i, j + 1) : nodes[r]};
      coef[r] = {ex ? 1.0 / g.h : 0.0, ey ? 1.0 / g.h : 0.0};
    }
  }

  void apply(const std::vector<double>& v, std::vector<std::array<double, 2>>& out) const {
    for (std::size_t r = 0; r < nodes.size(); ++r) {
      double c = v[nodes[r]];
      out[r] = {coef[r][0] * (v[nbr[r][0]] - c), coef[r][1] * (v[nbr[r][1]] - c)};
    }
  }

  void adjoint(const std::vector<std::array<double, 2>>& p, std::vector<double>& out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t r = 0; r < nodes.size(); ++r)
      for (std::size_t f = 0; f < 2; ++f) {
        double q = coef[r][f] * p[r][f];
        out[nbr[r][f]] += q;
        out[nodes[r]] -= q;
      }
  }
};

/// Fixed data of one minimization: operator, weights and trace.
struct CpProblem {
  const AdmissiblePair& pair;
  NodeOperator K;
  std::vector<std::size_t> free_nodes, boundary_nodes;
  std::vector<double> a;  // per operator row
  double fmin = 0.0, fmax = 0.0, h2 = 0.0;
  std::size_t check_every = 50;
  double theta = 1.0;

  CpProblem(const AdmissiblePair& p, const SolverParams& params)
      : pair(p), K(p.geometry), check_every(std::max<std::size_t>(1, params.check_every)), theta(params.theta) {
    const auto& geo = p.geometry;
    free_nodes = (geo.omega() - geo.boundary()).nodes();
    boundary_nodes = geo.boundary().nodes();
    a.resize(K.nodes.size());
    for (std::size_t r = 0; r < a.size(); ++r) a[r] = p.a[K.nodes[r]];
    fmin = p.f.min();
    fmax = p.f.max();
    h2 = geo.grid().h * geo.grid().h;
  }

  [[nodiscard]] double primal(const std::vector<std::array<double, 2>>& kv) const {
    double e = 0.0;
    for (std::size_t r = 0; r < a.size(); ++r) e += a[r] * std::sqrt(kv[r][0] * kv[r][0] + kv[r][1] * kv[r][1]);
    return e * h2;
  }

  /// Lagrangian lower bound for p, minimized over v in [min f, max f] off the
  /// trace; truncation to that box never increases F, so this bounds the minimum.
  [[nodiscard]] double dual(const std::vector<double>& ktp) const {
    double e = 0.0;
    for (auto k : boundary_nodes) e += pair.f[k] * ktp[k];
    for (auto k : free_nodes) e += std::min(fmin * ktp[k], fmax * ktp[k]);
    return e * h2;
  }
};

/// Iterate of the primal-dual method with its step sizes; resumable.
struct CpState {
  double tau = 0.0, s = 0.0;
  std::vector<double> v, ktp;
  std::vector<std::array<double, 2>> p, kv, kv_old;
  std::vector<double> best_v, history, gaps;
  double best_gap = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;

  CpState(const CpProblem& pr, const std::vector<double>& v0, double tau_, double s_)
      : tau(tau_), s(s_), v(v0), ktp(v0.size(), 0.0), p(pr.a.size(), {0.0, 0.0}), kv(pr.a.size()), best_v(v0) {
    pr.K.apply(v, kv);
    kv_old = kv;
  }

  /// Runs up to `count` iterations, stopping once the relative gap reaches `gap_tol`.
  void run(const CpProblem& pr, std::size_t count, double gap_tol) {
    const auto& K = pr.K;
    const std::size_t m = pr.a.size();
    for (std::size_t n = 0; n < count && !converged; ++n) {
      // K is linear, so K vbar = K v + theta (K v - K v_old)
      for (std::size_t r = 0; r < m; ++r) {
        auto& q = p[r];
        q[0] += s * (kv[r][0] + pr.theta * (kv[r][0] - kv_old[r][0]));
        q[1] += s * (kv[r][1] + pr.theta * (kv[r][1] - kv_old[r][1]));
        double n2 = q[0] * q[0] + q[1] * q[1];
        if (n2 > pr.a[r] * pr.a[r]) {
          double scale = pr.a[r] > 0.0 ? pr.a[r] / std::sqrt(n2) : 0.0;
          q[0] *= scale;
          q[1] *= scale;
        }
      }
      K.adjoint(p, ktp);
      for (auto k : pr.free_nodes) v[k] -= tau * ktp[k];
      kv_old.swap(kv);
      K.apply(v, kv);
      double P = pr.primal(kv);
      history.push_back(P);
      ++iterations;
      if (iterations % pr.check_every == 0) {
        double D = pr.dual(ktp);
        double gap = P > 0.0 ? (P - D) / P : std::abs(P - D);
        gaps.push_back(gap);
        if (gap < best_gap) {
          best_gap = gap;
          best_v = v;
        }
        converged = gap <= gap_tol;
      }
    }
  }
};

}  // namespace detail

/// Minimizes F(v) = sum a|grad v| subject to v = f on the Dirichlet nodes with
/// the first-order primal-dual method (dual constraint |p_i| <= a_i), starting
/// from `initial` (its trace values are replaced by f).
///
/// Stopping uses the relative gap (P - D)/P. The best iterate seen at a gap
/// check is returned. When neither step nor step_ratio is given, tau = c h/sqrt8 and
/// s = h/(c sqrt8) for c in {1, 0.3, 0.1} run round-robin in chunks of 2500
/// iterations. After 10000 iterations a candidate whose gap trails the
/// leader's by more than a factor 10 drops out. The first to converge wins;
/// max_iters counts each candidate's own iterations.
inline ReconstructionResult minimize_weighted_gradient(const AdmissiblePair& pair, const SolverParams& params,
                                                       const ScalarField& initial) {
  const auto& geo = pair.geometry;
  const Grid& g = geo.grid();
  if (!(pair.a.grid() == g) || !(pair.f.grid() == g))
    throw InconsistentGeometryError("minimize_weighted_gradient: fields do not match the geometry");
  for (auto k : geo.omega().nodes())
    if (!pair.a.defined(k) || !(pair.a[k] >= 0.0) || !std::isfinite(pair.a[k]))
      throw InvalidProblemError("minimize_weighted_gradient: a must be finite and non-negative on Omega");
  for (auto k : geo.boundary().nodes())
    if (!pair.f.defined(k) || !std::isfinite(pair.f[k]))
      throw InvalidProblemError("minimize_weighted_gradient: trace missing at a boundary node");
  if (!(initial.grid() == g)) throw InconsistentGeometryError("minimize_weighted_gradient: initial guess on another grid");
  if (!(params.theta >= 0.0 && params.theta <= 1.0)) throw InvalidProblemError("theta must lie in [0, 1]");

  // ||K||^2 <= 8 / h^2 for forward differences
  const double L2 = 8.0 / (g.h * g.h);
  const double L = std::sqrt(L2);
  std::vector<std::pair<double, double>> steps;
  if (params.tau > 0.0 || params.s > 0.0) {
    double tau = params.tau, s = params.s;
    if (tau <= 0.0) tau = 1.0 / (s * L2);
    else if (s <= 0.0) s = 1.0 / (tau * L2);
    if (tau * s * L2 > 1.0 + 1e-9) throw InvalidProblemError("step sizes violate tau s L^2 <= 1");
    steps.emplace_back(tau, s);
  } else if (params.step_ratio > 0.0) {
    steps.emplace_back(params.step_ratio / L, 1.0 / (params.step_ratio * L));
  } else if (params.step_ratio < 0.0) {
    throw InvalidProblemError("step_ratio must be non-negative");
  } else {
    for (double c : {1.0, 0.3, 0.1}) steps.emplace_back(c / L, 1.0 / (c * L));
  }

  detail::CpProblem pr(pair, params);
  std::vector<double> v0(g.size(), 0.0);
  for (auto k : geo.omega().nodes()) v0[k] = initial[k];
  for (auto k : geo.boundary().nodes()) v0[k] = pair.f[k];

  std::vector<detail::CpState> alive;
  for (auto [tau, s] : steps) alive.emplace_back(pr, v0, tau, s);
  constexpr std::size_t kChunk = 2500, kWarmup = 10000;
  while (alive.size() > 1) {
    for (auto& st : alive) st.run(pr, std::min(kChunk, params.max_iters - st.iterations), params.gap_tol);
    auto lead = std::min_element(alive.begin(), alive.end(), [](const auto& x, const auto& y) {
      if (x.converged != y.converged) return x.converged;
      return x.best_gap < y.best_gap;
    });
    if (lead->converged || lead->iterations >= params.max_iters) {
      alive = {std::move(*lead)};
      break;
    }
    if (lead->iterations < kWarmup) continue;
    const double bar = 10.0 * lead->best_gap;
    std::erase_if(alive, [&](const detail::CpState& st) { return st.best_gap > bar; });
  }
  auto& st = alive.front();
  st.run(pr, params.max_iters - st.iterations, params.gap_tol);

  ReconstructionResult res;
  res.tau = st.tau;
  res.s = st.s;
  res.iterations = st.iterations;
  res.converged = st.converged;
  res.final_gap = st.best_gap;
  res.energy_history = std::move(st.history);
  res.gap_history = std::move(st.gaps);
  res.check_every = pr.check_every;
  res.u = ScalarField(g, geo.omega(), 0.0);
  for (auto k : geo.omega().nodes()) res.u[k] = st.best_v[k];
  res.energy = weighted_gradient_energy(pair.a, res.u, geo);
  return res;
}

/// Same, starting from the harmonic extension of f.
inline ReconstructionResult minimize_weighted_gradient(const AdmissiblePair& pair, const SolverParams& params = {}) {
  return minimize_weighted_gradient(pair, params, harmonic_extension(pair.geometry, pair.f));
}

/// Thresholds for the degenerate set: a < eps_a or |grad u| < eps_g flags a
/// node; eps_u bounds the oscillation of u regarded as constant.
struct ZeroThresholds {
  double eps_a = 0.0;
  double eps_g = 0.0;
  double eps_u = 0.0;
};

/// eps_a = 1e-3 max a, eps_g = 1e-2 (max f - min f) / diam Omega, eps_u = 1e-2 (max f - min f).
inline ZeroThresholds default_thresholds(const AdmissiblePair& pair) {
  const auto& geo = pair.geometry;
  const Grid& g = geo.grid();
  double amax = 0.0;
  for (auto k : geo.omega().nodes()) amax = std::max(amax, pair.a[k]);
  double diam = 0.0;
  auto bnd = geo.boundary().nodes();
  for (std::size_t p = 0; p < bnd.size(); ++p)
    for (std::size_t q = p + 1; q < bnd.size(); ++q)
      diam = std::max(diam, std::hypot(g.x(g.col(bnd[p])) - g.x(g.col(bnd[q])), g.y(g.row(bnd[p])) - g.y(g.row(bnd[q]))));
  const double range = pair.f.max() - pair.f.min();
  ZeroThresholds t;
  t.eps_a = 1e-3 * amax;
  t.eps_g = diam > 0.0 ? 1e-2 * range / diam : 0.0;
  t.eps_u = 1e-2 * range;
  return t;
}

/// Omega nodes whose east and north neighbours are in Omega, where the forward
/// gradient sees both axes.
inline NodeMask forward_complete(const NodeMask& omega) {
  const Grid& g = omega.grid();
  NodeMask out(g);
  for (auto k : omega.nodes()) {
    int i = g.col(k), j = g.row(k);
    if (omega.at(i + 1, j) && omega.at(i, j + 1)) out.set(k);
  }
  return out;
}

/// Flags nodes with a < eps_a or |grad u| < eps_g, then splits the flags by a
/// radius-1 opening into the open part Z (4-connected components, unlabelled)
/// and the residual Gamma. Only nodes with a complete forward stencil are flagged.
inline ZeroSetDecomposition zero_set_decomposition(const AdmissiblePair& pair, const ScalarField& u,
                                                   const ZeroThresholds& t) {
  const auto& geo = pair.geometry;
  const Grid& g = geo.grid();
  NodeMask flagged(g);
  auto grad = forward_gradient_norm(u, geo.omega());
  for (auto k : forward_complete(geo.omega()).nodes())
    if (pair.a[k] < t.eps_a || grad[k] < t.eps_g) flagged.set(k);
  auto split = split_open(flagged);
  ZeroSetDecomposition d;
  d.z_mask = split.open;
  d.gamma_nodes = split.residual;
  for (auto& c : split.components) d.components.push_back({std::move(c), ZoneLabel::unlabelled});
  return d;
}

/// Labels each component O of the zero set from the data. "a > eps_a on O"
/// means the median of a over O, so a fringe of flagged nodes does not decide it.
///   perfect              a > eps_a on O and |grad u| < eps_g on O;
///   flat_unknown         a > eps_a on O while u is not flat on O;
///   insulating           a < eps_a on O and u oscillates by more than eps_u on the rim;
///   singular_or_perfect  a < eps_a on O, u constant on the rim, a jumps across the rim;
///   indeterminate        a < eps_a on O, u constant on the rim, a continuous.
/// The rim is the set of nodes of O with a 4-neighbour in Omega outside O. The
/// jump test compares the mean one-sided difference of a across the rim with
/// 10 h times the median |grad a| away from the zero set.
inline ZeroSetDecomposition classify_inclusions(const AdmissiblePair& pair, const ScalarField& u,
                                                ZeroSetDecomposition d, const ZeroThresholds& t) {
  const auto& geo = pair.geometry;
  const Grid& g = geo.grid();
  auto median_of = [](std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  auto grad = forward_gradient_norm(u, geo.omega());
  auto grad_a = forward_gradient_norm(pair.a, geo.omega());
  std::vector<double> ga;
  for (auto k : (forward_complete(geo.omega()) - dilate(d.z_mask | d.gamma_nodes, 2)).nodes()) ga.push_back(grad_a[k]);
  const double median_grad_a = median_of(std::move(ga));

  for (auto& comp : d.components) {
    NodeMask in = mask_of(g, comp.nodes.nodes);
    std::vector<double> av;
    double gmax = 0.0;
    for (auto k : comp.nodes.nodes) {
      av.push_back(pair.a[k]);
      gmax = std::max(gmax, grad[k]);
    }
    if (median_of(std::move(av)) > t.eps_a) {
      comp.label = gmax < t.eps_g ? ZoneLabel::perfect : ZoneLabel::flat_unknown;
      continue;
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, jump = 0.0;
    std::size_t faces = 0;
    for (auto k : comp.nodes.nodes) {
      int i = g.col(k), j = g.row(k);
      bool rim = false;
      for (auto [di, dj] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
        if (!geo.omega().at(i + di, j + dj) || in.at(i + di, j + dj)) continue;
        rim = true;
        jump += std::abs(pair.a[g.index(i + di, j + dj)] - pair.a[k]);
        ++faces;
      }
      if (rim) {
        lo = std::min(lo, u[k]);
        hi = std::max(hi, u[k]);
      }
    }
    if (faces == 0) {
      comp.label = ZoneLabel::indeterminate;
      continue;
    }
    if (hi - lo > t.eps_u) comp.label = ZoneLabel::insulating;
    else if (jump / double(faces) > 10.0 * g.h * median_grad_a) comp.label = ZoneLabel::singular_or_perfect;
    else comp.label = ZoneLabel::indeterminate;
  }
  return d;
}

struct RecoveredConductivity {
  ScalarField sigma;
  std::size_t clipped_low = 0, clipped_high = 0;
};

/// sigma = a / |grad u| at forward-complete nodes at distance >= 2 from the
/// zero set; undefined elsewhere. Values are clipped to [1e-6, 1e6].
inline RecoveredConductivity recover_conductivity(const AdmissiblePair& pair, const ScalarField& u,
                                                  const ZeroSetDecomposition& d) {
  const auto& geo = pair.geometry;
  const Grid& g = geo.grid();
  RecoveredConductivity r;
  NodeMask where = forward_complete(geo.omega()) - dilate(d.z_mask | d.gamma_nodes, 1);
  auto grad = forward_gradient_norm(u, geo.omega());
  r.sigma = ScalarField(g, where, 0.0);
  for (auto k : where.nodes()) {
    double s = grad[k] > 0.0 ? pair.a[k] / grad[k] : std::numeric_limits<double>::infinity();
    if (s < 1e-6) {
      s = 1e-6;
      ++r.clipped_low;
    } else if (s > 1e6) {
      s = 1e6;
      ++r.clipped_high;
    }
    r.sigma[k] = s;
  }
  return r;
}

/// Minimization, zero-set decomposition, classification and recovery in one call.
inline ReconstructionResult reconstruct(const AdmissiblePair& pair, const SolverParams& params,
                                        const ZeroThresholds& t) {
  auto res = minimize_weighted_gradient(pair, params);
  res.decomposition = classify_inclusions(pair, res.u, zero_set_decomposition(pair, res.u, t), t);
  auto rc = recover_conductivity(pair, res.u, res.decomposition);
  res.sigma = std::move(rc.sigma);
  res.clipped_low = rc.clipped_low;
  res.clipped_high = rc.clipped_high;
  return res;
}

}  // namespace cdii
