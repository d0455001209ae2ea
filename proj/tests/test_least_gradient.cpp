#include "support.hpp"

#include <cdii/least_gradient.hpp>

#include <gtest/gtest.h>

#include <numeric>

using namespace cdii;
using namespace cdii::test;

namespace {

/// Example pair at n = 101 with its minimizer, computed once.
struct ExampleRun {
  Phantom ph;
  AdmissiblePair pair;
  ZeroThresholds t;
  ReconstructionResult res;

  static const ExampleRun& get() {
    static const ExampleRun run = [] {
      ExampleRun r;
      r.ph = example_phantom(101);
      r.pair = pair_for(r.ph.problem, Extension::analytic());
      r.t = default_thresholds(r.pair);
      SolverParams sp;
      sp.gap_tol = 1e-7;
      sp.step_ratio = 0.1;
      r.res = reconstruct(r.pair, sp, r.t);
      return r;
    }();
    return run;
  }
};

/// Hand-made data on the unit square around the disc r < 0.3 centred at
/// (0.5, 0.5): u = (r - 0.3)_+^3 is flat on the disc and `a` vanishes there.
struct DiscData {
  AdmissiblePair pair;
  ScalarField u;
};

DiscData flat_disc(int n, double (*a_of_r)(double)) {
  auto geo = build_geometry(Rect{0, 0, 1, 1}, {}, n);
  const Grid& g = geo.grid();
  auto r = [](double x, double y) { return std::hypot(x - 0.5, y - 0.5); };
  auto u_of = [&](double x, double y) { return std::pow(std::max(r(x, y) - 0.3, 0.0), 3); };
  DiscData d;
  d.pair.geometry = geo;
  d.pair.a = ScalarField::sample(g, geo.omega(), [&](double x, double y) { return a_of_r(r(x, y)); });
  d.pair.f = ScalarField::sample(g, geo.boundary(), u_of);
  d.u = ScalarField::sample(g, geo.omega(), u_of);
  return d;
}

double smooth_a(double r) { return r > 0.3 ? 3.0 * (r - 0.3) * (r - 0.3) : 0.0; }
double step_a(double r) { return r > 0.3 ? 1.0 : 0.0; }

}  // namespace

TEST(Minimizer, LinearTraceIsReproduced) {
  auto p = square_problem(41, [](double x, double) { return x; });
  auto pair = pair_for(p);
  SolverParams sp;
  sp.gap_tol = 1e-9;
  auto res = minimize_weighted_gradient(pair, sp);
  EXPECT_TRUE(res.converged);
  EXPECT_LE(res.final_gap, 1e-8);
  auto exact = ScalarField::sample(p.geometry.grid(), p.geometry.omega(), [](double x, double) { return x; });
  EXPECT_LE(max_abs_diff(res.u, exact, p.geometry.omega()), 1e-6);
}

TEST(Minimizer, ExampleMatchesAnalyticPotential) {
  const auto& run = ExampleRun::get();
  const auto& geo = run.ph.problem.geometry;
  EXPECT_TRUE(run.res.converged) << run.res.final_gap;
  NodeMask off = geo.omega() - dilate(geo.u_mask(), 2);
  EXPECT_LE(rel_l2(run.res.u, run.ph.u_exact, off), 0.05);
  // the analytic potential has energy at least the minimum
  double e_exact = weighted_gradient_energy(run.pair.a, run.ph.u_exact, geo);
  EXPECT_LE(run.res.energy, e_exact * (1.0 + 1e-6));
}

TEST(Minimizer, AgreesWithSubgradientOracle) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 3; ++rep) {
    auto [pair, inst] = random_small_instance(rng);
    SolverParams sp;
    sp.gap_tol = 1e-12;
    auto res = minimize_weighted_gradient(pair, sp);
    auto orc = oracle::minimize(inst, 1000000, 0.3);
    EXPECT_NEAR(res.energy, orc.best, 1e-6) << "instance " << rep;
    // the oracle is an upper bound up to the solver's own gap
    EXPECT_LE(res.energy, orc.best + 1e-9);
  }
}

TEST(Minimizer, ObeysMaximumPrinciple) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 4; ++rep) {
    auto [pair, inst] = random_small_instance(rng);
    auto res = minimize_weighted_gradient(pair, SolverParams{});
    for (auto k : pair.geometry.omega().nodes()) {
      EXPECT_GE(res.u[k], pair.f.min() - 1e-8);
      EXPECT_LE(res.u[k], pair.f.max() + 1e-8);
    }
  }
  const auto& run = ExampleRun::get();
  for (auto k : run.pair.geometry.omega().nodes()) {
    EXPECT_GE(run.res.u[k], run.pair.f.min() - 1e-8);
    EXPECT_LE(run.res.u[k], run.pair.f.max() + 1e-8);
  }
}

TEST(Minimizer, PerturbationsDoNotLowerTheEnergy) {
  const auto& run = ExampleRun::get();
  const auto& geo = run.pair.geometry;
  const Grid& g = geo.grid();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> c(-0.6, 0.6), amp(-0.2, 0.2);
  for (int rep = 0; rep < 20; ++rep) {
    double cx = c(rng), cy = c(rng), A = amp(rng);
    ScalarField v = run.res.u;
    for (auto k : (geo.omega() - geo.boundary()).nodes()) v[k] += bump(g.x(g.col(k)), g.y(g.row(k)), cx, cy, 0.3, A);
    double ev = weighted_gradient_energy(run.pair.a, v, geo);
    EXPECT_LE(run.res.energy, ev + 1e-7 * run.res.energy) << "bump at " << cx << "," << cy;
  }
}

TEST(Minimizer, DifferentStartsAgreeOffTheZeroSet) {
  const auto& run = ExampleRun::get();
  const auto& geo = run.pair.geometry;
  SolverParams sp;
  sp.gap_tol = 1e-5;
  sp.step_ratio = 0.1;
  auto first = minimize_weighted_gradient(run.pair, sp);
  // a start that is not harmonic: the trace mean everywhere inside
  double mean = 0.0;
  auto bnd = geo.boundary().nodes();
  for (auto k : bnd) mean += run.pair.f[k];
  ScalarField init(geo.grid(), geo.omega(), mean / double(bnd.size()));
  auto other = minimize_weighted_gradient(run.pair, sp, init);
  ASSERT_TRUE(first.converged && other.converged);
  const auto& d = run.res.decomposition;
  NodeMask off = geo.omega() - d.z_mask - d.gamma_nodes;
  EXPECT_LE(rel_l2(other.u, first.u, off), 10.0 * sp.gap_tol);
}

TEST(Minimizer, SmoothedEnergyHistoryDoesNotIncrease) {
  // window means of the primal energy may only rise by less than the
  // certified suboptimality at that point
  const auto& res = ExampleRun::get().res;
  const auto& h = res.energy_history;
  ASSERT_GT(h.size(), 1000u);
  ASSERT_EQ(res.gap_history.size(), h.size() / res.check_every);
  constexpr std::size_t w = 100;
  double prev = std::numeric_limits<double>::infinity();
  std::size_t rises = 0;
  for (std::size_t b = 0; b + w <= h.size(); b += w) {
    double m = std::accumulate(h.begin() + std::ptrdiff_t(b), h.begin() + std::ptrdiff_t(b + w), 0.0) / double(w);
    std::size_t c = std::min(res.gap_history.size() - 1, b / res.check_every);
    if (m > prev) {
      ++rises;
      EXPECT_LE(m - prev, res.gap_history[c] * m) << "window at " << b;
    }
    prev = m;
  }
  EXPECT_LT(rises, h.size() / w / 2);
}

TEST(Minimizer, IterationCapIsReportedNotThrown) {
  auto ph = example_phantom(51);
  SolverParams sp;
  sp.max_iters = 100;
  sp.gap_tol = 1e-12;
  auto res = minimize_weighted_gradient(ph.pair, sp);
  EXPECT_FALSE(res.converged);
  EXPECT_LE(res.iterations, 100u);
  EXPECT_GT(res.final_gap, 1e-12);
}

TEST(Minimizer, RejectsBadInput) {
  auto ph = example_phantom(51);
  SolverParams sp;
  sp.tau = 1.0;
  sp.s = 1.0;
  EXPECT_THROW(minimize_weighted_gradient(ph.pair, sp), InvalidProblemError);
  sp = {};
  sp.theta = 2.0;
  EXPECT_THROW(minimize_weighted_gradient(ph.pair, sp), InvalidProblemError);
  auto pair = ph.pair;
  pair.a[pair.geometry.grid().nearest(0.0, 0.0)] = -1.0;
  EXPECT_THROW(minimize_weighted_gradient(pair, SolverParams{}), InvalidProblemError);
}

TEST(Minimizer, ExplicitStepsAreUsed) {
  auto ph = example_phantom(51);
  const double h = ph.pair.geometry.grid().h;
  SolverParams sp;
  sp.tau = 0.5 * h / std::sqrt(8.0);
  sp.max_iters = 200;
  auto res = minimize_weighted_gradient(ph.pair, sp);
  EXPECT_DOUBLE_EQ(res.tau, sp.tau);
  EXPECT_NEAR(res.tau * res.s * 8.0 / (h * h), 1.0, 1e-12);
}

TEST(Truncate, RampOfLinearField) {
  Grid g(11, 3, 0.1);
  auto u = ScalarField::sample(g, NodeMask(g, true), [](double x, double) { return x; });
  auto t = truncate(u, 0.3, 0.2);
  for (int i = 0; i < g.nx; ++i) {
    double x = g.x(i), expect = x <= 0.3 ? 0.0 : x >= 0.5 ? 1.0 : (x - 0.3) / 0.2;
    EXPECT_NEAR(t.at(i, 1), expect, 1e-12) << x;
  }
  auto below = truncate(u, -1.0, 0.2);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_EQ(below[k], 1.0);
}

TEST(Truncate, MinimizerTruncationsStayMinimal) {
  const auto& run = ExampleRun::get();
  const auto& geo = run.pair.geometry;
  const Grid& g = geo.grid();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> lam(-0.9, 0.9), c(-0.5, 0.5);
  for (int rep = 0; rep < 10; ++rep) {
    double l = lam(rng), eps = 4.0 * g.h;
    ScalarField v = run.res.u;
    double cx = c(rng), cy = c(rng);
    for (auto k : (geo.omega() - geo.boundary()).nodes()) v[k] += bump(g.x(g.col(k)), g.y(g.row(k)), cx, cy, 0.3, 0.1);
    double eu = weighted_gradient_energy(run.pair.a, truncate(run.res.u, l, eps), geo);
    double ev = weighted_gradient_energy(run.pair.a, truncate(v, l, eps), geo);
    EXPECT_LE(eu, ev + 1e-3 * std::max(eu, 1e-12)) << "lambda " << l;
  }
}

TEST(ZeroSet, ExampleHasOnePerfectComponentOnTheSquare) {
  const auto& run = ExampleRun::get();
  const auto& d = run.res.decomposition;
  ASSERT_EQ(d.components.size(), 1u);
  EXPECT_EQ(d.components[0].label, ZoneLabel::perfect);
  const auto& U = run.ph.problem.geometry.u_mask();
  NodeMask z = d.components[0].nodes.nodes.empty() ? NodeMask(U.grid()) : mask_of(U.grid(), d.components[0].nodes.nodes);
  double inter = double((z & U).count()), uni = double((z | U).count());
  EXPECT_GE(inter / uni, 0.9);
  // flat on the perfect component
  double lo = 1e300, hi = -1e300;
  for (auto k : d.components[0].nodes.nodes) {
    lo = std::min(lo, run.res.u[k]);
    hi = std::max(hi, run.res.u[k]);
  }
  EXPECT_LE(hi - lo, run.t.eps_u);
  EXPECT_EQ(d.z_mask, z);
}

TEST(ZeroSet, LinearCaseHasNoComponents) {
  auto p = square_problem(61, [](double x, double) { return x; });
  auto pair = pair_for(p);
  auto t = default_thresholds(pair);
  auto res = reconstruct(pair, SolverParams{}, t);
  EXPECT_TRUE(res.decomposition.components.empty());
  EXPECT_LE(double(res.decomposition.gamma_nodes.count()), 0.005 * double(p.geometry.omega().count()));
  NodeMask where = res.sigma.defined_mask();
  EXPECT_GT(where.count(), 0u);
  for (auto k : where.nodes()) EXPECT_NEAR(res.sigma[k], 1.0, 0.02);
}

TEST(ZeroSet, InsulatingDiscIsFoundAndLabelled) {
  auto p = square_problem(61, [](double x, double) { return x; }, {{Disc{0.5, 0.5, 0.2}, InclusionKind::insulating}});
  auto pair = pair_for(p);
  auto t = default_thresholds(pair);
  auto res = reconstruct(pair, SolverParams{}, t);
  ASSERT_EQ(res.decomposition.components.size(), 1u);
  EXPECT_EQ(res.decomposition.components[0].label, ZoneLabel::insulating);
  const auto& V = p.geometry.v_mask();
  const auto& z = res.decomposition.z_mask;
  EXPECT_EQ(V - z, NodeMask(V.grid()));
  EXPECT_EQ(z - dilate(V, 2), NodeMask(V.grid()));
}

TEST(ZeroSet, ComponentsAreDisjointAndGammaIsTheRest) {
  auto p = square_problem(61, [](double x, double y) { return std::sin(3 * x) + y * y; },
                          {{Disc{0.3, 0.35, 0.12}, InclusionKind::perfect}, {Disc{0.7, 0.6, 0.12}, InclusionKind::insulating}});
  auto pair = pair_for(p);
  auto t = default_thresholds(pair);
  SolverParams sp;
  sp.gap_tol = 1e-6;
  auto u = minimize_weighted_gradient(pair, sp).u;
  auto d = zero_set_decomposition(pair, u, t);
  NodeMask seen(p.geometry.grid());
  for (const auto& c : d.components)
    for (auto k : c.nodes.nodes) {
      EXPECT_FALSE(seen[k]);
      seen.set(k);
    }
  EXPECT_EQ(seen, d.z_mask);
  EXPECT_EQ(d.z_mask & d.gamma_nodes, NodeMask(p.geometry.grid()));
  d = classify_inclusions(pair, u, d, t);
  std::size_t perfect = 0, insulating = 0;
  for (const auto& c : d.components) {
    perfect += c.label == ZoneLabel::perfect;
    insulating += c.label == ZoneLabel::insulating;
  }
  EXPECT_GE(perfect, 1u);
  EXPECT_EQ(insulating, 1u);
}

TEST(Classify, VanishingDataWithFlatRimAndSmoothOutsideIsIndeterminate) {
  auto d = flat_disc(61, smooth_a);
  auto t = default_thresholds(d.pair);
  auto z = classify_inclusions(d.pair, d.u, zero_set_decomposition(d.pair, d.u, t), t);
  ASSERT_EQ(z.components.size(), 1u);
  EXPECT_EQ(z.components[0].label, ZoneLabel::indeterminate);
}

TEST(Classify, VanishingDataWithFlatRimAndJumpIsSingularOrPerfect) {
  auto d = flat_disc(61, step_a);
  auto t = default_thresholds(d.pair);
  auto z = classify_inclusions(d.pair, d.u, zero_set_decomposition(d.pair, d.u, t), t);
  ASSERT_EQ(z.components.size(), 1u);
  EXPECT_EQ(z.components[0].label, ZoneLabel::singular_or_perfect);
}

TEST(Classify, FlatPotentialWithCurrentIsPerfectElseFlatUnknown) {
  auto d = flat_disc(61, [](double) { return 1.0; });
  auto t = default_thresholds(d.pair);
  auto z = classify_inclusions(d.pair, d.u, zero_set_decomposition(d.pair, d.u, t), t);
  ASSERT_EQ(z.components.size(), 1u);
  EXPECT_EQ(z.components[0].label, ZoneLabel::perfect);
  // a component whose potential is not flat
  auto tilted = d.u;
  for (auto k : z.components[0].nodes.nodes) tilted[k] += 0.1 * d.pair.geometry.grid().x(d.pair.geometry.grid().col(k));
  z = classify_inclusions(d.pair, tilted, z, t);
  EXPECT_EQ(z.components[0].label, ZoneLabel::flat_unknown);
}

TEST(Recovery, ExampleConductivityOffTheSquare) {
  const auto& run = ExampleRun::get();
  EXPECT_NEAR(value_at(run.res.sigma, 0.8, 0.0), 0.3125, 0.1 * 0.3125);
  EXPECT_NEAR(value_at(run.res.sigma, 0.0, -0.85), 0.25 / 0.85, 0.1 * 0.25 / 0.85);
  const auto& d = run.res.decomposition;
  NodeMask near = dilate(d.z_mask | d.gamma_nodes, 1);
  for (auto k : run.res.sigma.defined_mask().nodes()) {
    EXPECT_FALSE(near[k]);
    EXPECT_GE(run.res.sigma[k], 0.0);
  }
}

TEST(Recovery, ClipsAndCounts) {
  auto p = square_problem(21, [](double x, double) { return x; });
  auto pair = pair_for(p);
  auto u = ScalarField::sample(p.geometry.grid(), p.geometry.omega(), [](double x, double) { return 1e-9 * x; });
  auto rc = recover_conductivity(pair, u, ZeroSetDecomposition{{}, NodeMask(p.geometry.grid()), NodeMask(p.geometry.grid())});
  EXPECT_GT(rc.clipped_high, 0u);
  for (auto k : rc.sigma.defined_mask().nodes()) EXPECT_LE(rc.sigma[k], 1e6);
}
