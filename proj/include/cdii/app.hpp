#pragma once

// Presets, subcommands and the end-to-end pipeline behind the `cdii` tool.

#include <cdii/cdf_io.hpp>
#include <cdii/config.hpp>
#include <cdii/errors.hpp>
#include <cdii/forward.hpp>
#include <cdii/geometry.hpp>
#include <cdii/least_gradient.hpp>
#include <cdii/level_sets.hpp>
#include <cdii/synthesis.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace cdii {

struct Preset {
  std::string name;
  ForwardProblem problem;
  Extension extension;
  SolverParams solver;
  std::optional<ScalarField> u_exact, sigma_exact;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"disk-example", "no-inclusion", "insulator-disc", "two-inclusions"};
  return names;
}

inline int preset_default_n(const std::string& name) { return name == kDiskExamplePreset ? 201 : 101; }

/// Solver defaults per preset; the disc example runs a single step ratio.
inline SolverParams preset_solver(const std::string& name) {
  SolverParams sp;
  if (name == kDiskExamplePreset) {
    sp.gap_tol = 1e-7;
    sp.step_ratio = 0.1;
  }
  return sp;
}

/// disk-example: the analytic disc phantom with the square conductor.
/// no-inclusion: unit square, sigma = 1, f = x.
/// insulator-disc: the same with an insulating disc of radius 0.2 at the centre.
/// two-inclusions: a perfect disc at (0.3, 0.5) and an insulating one at (0.7, 0.5), radius 0.12.
inline Preset make_preset(const std::string& name, int n = 0) {
  if (n == 0) n = preset_default_n(name);
  Preset p;
  p.name = name;
  p.solver = preset_solver(name);
  auto square = [&](std::vector<InclusionSpec> inc) {
    ForwardProblem fp;
    fp.geometry = build_geometry(Rect{0, 0, 1, 1}, inc, n);
    const Grid& g = fp.geometry.grid();
    fp.sigma = ScalarField::sample(g, fp.geometry.background(), [](double, double) { return 1.0; });
    fp.sigma1 = ScalarField::sample(g, fp.geometry.u_mask(), [](double, double) { return 1.0; });
    fp.f = ScalarField::sample(g, fp.geometry.boundary(), [](double x, double) { return x; });
    fp.preset = name;
    return fp;
  };
  if (name == kDiskExamplePreset) {
    if (n < 51 || n % 2 == 0) throw UsageError("--n: disk-example needs an odd n >= 51, got " + std::to_string(n));
    auto ph = example_phantom(n);
    p.problem = ph.problem;
    p.extension = Extension::analytic();
    p.u_exact = ph.u_exact;
    p.sigma_exact = ph.sigma_exact;
  } else if (name == "no-inclusion") {
    p.problem = square({});
  } else if (name == "insulator-disc") {
    p.problem = square({{Disc{0.5, 0.5, 0.2}, InclusionKind::insulating}});
  } else if (name == "two-inclusions") {
    p.problem = square({{Disc{0.3, 0.5, 0.12}, InclusionKind::perfect}, {Disc{0.7, 0.5, 0.12}, InclusionKind::insulating}});
  } else {
    throw UsageError("--preset: unknown preset '" + name + "'");
  }
  return p;
}

/// Files written into one output directory. Each goes to `<name>.partial`
/// first and is renamed by commit(); a failed run leaves the partial files.
class Artifacts {
public:
  explicit Artifacts(std::string dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw UsageError("--out: cannot create '" + dir_ + "': " + ec.message());
  }

  std::string path(const std::string& name) {
    auto p = (std::filesystem::path(dir_) / name).string();
    pending_.push_back(p);
    return p + ".partial";
  }
  void field(const std::string& name, const ScalarField& f) { save_file(path(name), f, write_cdf); }
  void geometry(const std::string& name, const InclusionGeometry& g) { save_file(path(name), g, write_geometry); }
  void trace(const std::string& name, const ScalarField& f) { save_file(path(name), f, write_trace_csv); }
  void text(const std::string& name, const std::string& body) {
    save_file(path(name), body, [](std::ostream& os, const std::string& s) { os << s; });
  }
  void commit() {
    for (const auto& p : pending_) std::filesystem::rename(p + ".partial", p);
    pending_.clear();
  }
  [[nodiscard]] const std::string& dir() const { return dir_; }

private:
  std::string dir_;
  std::vector<std::string> pending_;
};

/// Line-oriented `metric=value status` report.
class Report {
public:
  void check(const std::string& metric, double value, const std::string& op, double threshold,
             const std::string& threshold_text = "") {
    bool pass = op == "<=" ? value <= threshold : op == ">=" ? value >= threshold : value == threshold;
    std::string thr = threshold_text.empty() ? fmt(threshold) : threshold_text;
    lines_.push_back(metric + "=" + fmt(value) + " " + metric + op + thr + ": " + (pass ? "PASS" : "FAIL"));
    all_ = all_ && pass;
  }
  void flag(const std::string& metric, bool ok) { check(metric, ok ? 1.0 : 0.0, "==", 1.0, "1"); }
  void info(const std::string& metric, double value) { lines_.push_back(metric + "=" + fmt(value) + " INFO"); }
  void info(const std::string& metric, const std::string& value) { lines_.push_back(metric + "=" + value + " INFO"); }

  [[nodiscard]] bool all_pass() const { return all_; }
  [[nodiscard]] std::string str() const {
    std::string s;
    for (const auto& l : lines_) s += l + "\n";
    return s;
  }
  [[nodiscard]] const std::vector<std::string>& lines() const { return lines_; }

  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
  }

private:
  std::vector<std::string> lines_;
  bool all_ = true;
};

inline SolverParams solver_params(const RunConfig& c, SolverParams base = {}) {
  if (c.gap_tol) base.gap_tol = *c.gap_tol;
  if (c.theta) base.theta = *c.theta;
  if (c.tau) base.tau = *c.tau;
  if (c.s) base.s = *c.s;
  if (c.step_ratio) base.step_ratio = *c.step_ratio;
  if (c.max_iters) base.max_iters = std::size_t(*c.max_iters);
  if (c.check_every) base.check_every = std::size_t(*c.check_every);
  return base;
}

inline ZeroThresholds thresholds(const RunConfig& c, const AdmissiblePair& pair) {
  auto t = default_thresholds(pair);
  if (c.eps_a) t.eps_a = *c.eps_a;
  if (c.eps_g) t.eps_g = *c.eps_g;
  if (c.eps_u) t.eps_u = *c.eps_u;
  return t;
}

inline Extension extension_named(const std::string& name, double K) {
  if (name == "analytic") return Extension::analytic();
  if (name == "zero") return Extension::zero();
  return Extension::finite(K);
}

/// Largest excursion of u outside [min f, max f] over the nodes where u is defined.
inline double max_principle_violation(const ScalarField& u, const ScalarField& f) {
  const double lo = f.min(), hi = f.max();
  double worst = 0.0;
  for (auto k : u.defined_mask().nodes()) worst = std::max({worst, u[k] - hi, lo - u[k]});
  return worst;
}

inline double jaccard(const NodeMask& a, const NodeMask& b) {
  std::size_t both = (a & b).count(), either = (a | b).count();
  return either ? double(both) / double(either) : 1.0;
}

/// Trace-preserving bump perturbation: a smooth bump of the given radius and
/// amplitude centred at a random point whose support misses the Dirichlet nodes.
inline ScalarField bump_perturbation(const InclusionGeometry& geo, const ScalarField& u, std::mt19937_64& rng,
                                     double radius, double amplitude) {
  const Grid& g = geo.grid();
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (auto k : geo.omega().nodes()) {
    x0 = std::min(x0, g.x(g.col(k)));
    x1 = std::max(x1, g.x(g.col(k)));
    y0 = std::min(y0, g.y(g.row(k)));
    y1 = std::max(y1, g.y(g.row(k)));
  }
  std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1);
  auto bnd = geo.boundary().nodes();
  for (int tries = 0; tries < 10000; ++tries) {
    double cx = ux(rng), cy = uy(rng);
    if (!geo.omega()[g.nearest(cx, cy)]) continue;
    bool clear = true;
    for (auto k : bnd)
      if (std::hypot(g.x(g.col(k)) - cx, g.y(g.row(k)) - cy) < radius) {
        clear = false;
        break;
      }
    if (!clear) continue;
    ScalarField v = u;
    for (auto k : geo.omega().nodes()) {
      double r2 = (std::pow(g.x(g.col(k)) - cx, 2) + std::pow(g.y(g.row(k)) - cy, 2)) / (radius * radius);
      if (r2 < 1.0) v[k] += amplitude * std::exp(1.0 - 1.0 / (1.0 - r2));
    }
    return v;
  }
  throw InvalidProblemError("bump_perturbation: no interior disc of radius " + Report::fmt(radius) + " fits");
}

/// Values of u on the flat components (medians), where level sets are not unique.
inline std::vector<double> flat_values(const ZeroSetDecomposition& d, const ScalarField& u) {
  std::vector<double> out;
  for (const auto& c : d.components) {
    std::vector<double> v;
    for (auto k : c.nodes.nodes) v.push_back(u[k]);
    if (v.empty()) continue;
    std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(v.size() / 2), v.end());
    out.push_back(v[v.size() / 2]);
  }
  return out;
}

struct MinimalitySweep {
  std::vector<MinimalityReport> reports;
  double worst_fraction = 1.0;
  std::string csv;
};

/// Level-set minimality of u against `count` random bump perturbations.
inline MinimalitySweep minimality_sweep(const AdmissiblePair& pair, const ScalarField& u, const ZeroSetDecomposition& d,
                                        const ZeroThresholds& t, int count, int n_lambdas, std::uint64_t seed) {
  const auto& geo = pair.geometry;
  std::mt19937_64 rng(seed);
  MinimalityOptions opt;
  opt.flat_values = flat_values(d, u);
  opt.skip_width = t.eps_u;
  opt.eps_a = t.eps_a;
  opt.eps_g = t.eps_g;
  const double radius = 0.15 * geo.diameter(), amplitude = 0.05 * (pair.f.max() - pair.f.min());
  auto levels = sample_levels(pair.f.min(), pair.f.max(), n_lambdas);
  MinimalitySweep out;
  std::ostringstream csv;
  csv << "perturbation,lambda,area_u,area_v,holds\n";
  for (int p = 0; p < count; ++p) {
    auto v = bump_perturbation(geo, u, rng, radius, amplitude);
    auto rep = minimality_test(geo, pair.a, u, v, levels, opt);
    for (const auto& r : rep.rows)
      csv << p << ',' << detail::format_real(r.lambda) << ',' << detail::format_real(r.area_u) << ','
          << detail::format_real(r.area_v) << ',' << (r.skipped ? "skipped" : r.holds ? "true" : "false") << '\n';
    out.worst_fraction = std::min(out.worst_fraction, rep.fraction_holding());
    out.reports.push_back(std::move(rep));
  }
  out.csv = csv.str();
  return out;
}

/// Forward-resimulates the recovered conductivity on the original inclusion
/// geometry (recovered values where defined, filled inward from them
/// elsewhere) and returns the relative L2 difference of the resulting current
/// magnitude from `a` over the recovery domain.
inline double closed_loop_residual(const ForwardProblem& p, const AdmissiblePair& pair, const ScalarField& sigma_rec) {
  const auto& geo = p.geometry;
  const Grid& g = geo.grid();
  ForwardProblem q = p;
  q.contrast = kInfiniteContrast;
  q.sigma = ScalarField(g, geo.background(), 0.0);
  NodeMask known(g);
  for (auto k : geo.background().nodes())
    if (sigma_rec.defined(k)) {
      q.sigma[k] = sigma_rec[k];
      known.set(k);
    }
  if (!known.any()) throw DegenerateFieldError("closed_loop_residual: no recovered conductivity");
  // fill the remaining background nodes layer by layer from known neighbours
  for (bool grew = true; grew;) {
    grew = false;
    std::vector<std::pair<std::size_t, double>> add;
    for (auto k : (geo.background() - known).nodes()) {
      int i = g.col(k), j = g.row(k);
      double s = 0.0;
      int c = 0;
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di)
          if (known.at(i + di, j + dj)) {
            s += q.sigma[g.index(i + di, j + dj)];
            ++c;
          }
      if (c) add.emplace_back(k, s / c);
    }
    for (auto [k, s] : add) {
      q.sigma[k] = s;
      known.set(k);
      grew = true;
    }
  }
  for (auto k : geo.background().nodes())
    if (!known[k]) q.sigma[k] = 1.0;  // background pockets with no recovered neighbour
  auto sol = solve_limit(q);
  ScalarField cur = forward_current_norm(q.nodal_conductivity(kInfiniteContrast), sol.u, geo.conducting());
  double num = 0.0, den = 0.0;
  for (auto k : sigma_rec.defined_mask().nodes()) {
    if (!geo.background()[k]) continue;
    num += std::pow(cur[k] - pair.a[k], 2);
    den += pair.a[k] * pair.a[k];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

/// Field of zone codes on Omega: 0 outside the zero set, 1 + label index on a
/// component, -1 on the residual set.
inline ScalarField zone_codes(const AdmissiblePair& pair, const ZeroSetDecomposition& d) {
  ScalarField z(pair.geometry.grid(), pair.geometry.omega(), 0.0);
  for (const auto& c : d.components)
    for (auto k : c.nodes.nodes) z[k] = 1.0 + double(int(c.label));
  for (auto k : d.gamma_nodes.nodes()) z[k] = -1.0;
  return z;
}

namespace detail {

inline std::string need(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("--") + flag + " is required");
  return value;
}

/// Load an input file, turning unreadable or malformed files into usage errors.
template <class Fn>
auto load_input(const std::string& path, const char* flag, Fn&& fn) {
  if (!std::filesystem::exists(path)) throw UsageError(std::string("--") + flag + ": no such file '" + path + "'");
  try {
    return fn(path);
  } catch (const FormatError& e) {
    throw UsageError(std::string("--") + flag + ": " + e.what());
  }
}

inline std::string in_dir(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

inline RunConfig read_sidecar(const std::string& path) {
  RunConfig c;
  if (!std::filesystem::exists(path)) return c;
  std::ifstream is(path);
  for (const auto& [k, v] : read_config_lines(is, path)) apply_setting(c, k, v);
  return c;
}

}  // namespace detail

/// Forward problem from --phantom DIR or from --geometry/--sigma/--sigma1/--f.
inline ForwardProblem load_problem(const RunConfig& c) {
  std::string geo_p = c.geometry, sig_p = c.sigma, sig1_p = c.sigma1, f_p = c.f;
  ForwardProblem p;
  if (!c.phantom.empty()) {
    geo_p = detail::in_dir(c.phantom, "geometry.cdf");
    sig_p = detail::in_dir(c.phantom, "sigma.cdf");
    sig1_p = detail::in_dir(c.phantom, "sigma1.cdf");
    f_p = detail::in_dir(c.phantom, "f.csv");
    p.preset = detail::read_sidecar(detail::in_dir(c.phantom, "phantom.txt")).preset;
    if (!std::filesystem::exists(sig1_p)) sig1_p.clear();
  }
  p.geometry = detail::load_input(detail::need(geo_p, "geometry"), "geometry", load_geometry);
  const Grid& g = p.geometry.grid();
  p.sigma = detail::load_input(detail::need(sig_p, "sigma"), "sigma", load_cdf);
  if (!sig1_p.empty()) p.sigma1 = detail::load_input(sig1_p, "sigma1", load_cdf);
  else p.sigma1 = ScalarField::sample(g, p.geometry.u_mask(), [](double, double) { return 1.0; });
  p.f = detail::load_input(detail::need(f_p, "f"), "f", [&](const std::string& s) { return load_trace(s, g); });
  p.contrast = c.K;
  try {
    p.validate();
  } catch (const InvalidProblemError& e) {
    throw UsageError(std::string("inputs: ") + e.what());
  }
  return p;
}

/// Pair from --pair DIR or from --geometry/--a/--f; the preset recorded with
/// the pair (if any) is returned too.
inline std::pair<AdmissiblePair, std::string> load_pair(const RunConfig& c) {
  std::string geo_p = c.geometry, a_p = c.a, f_p = c.f, preset;
  if (!c.pair.empty()) {
    geo_p = detail::in_dir(c.pair, "geometry.cdf");
    a_p = detail::in_dir(c.pair, "a.cdf");
    f_p = detail::in_dir(c.pair, "f.csv");
    preset = detail::read_sidecar(detail::in_dir(c.pair, "pair.txt")).preset;
  }
  AdmissiblePair pair;
  pair.provenance = Provenance::loaded;
  pair.geometry = detail::load_input(detail::need(geo_p, "pair"), "geometry", load_geometry);
  const Grid& g = pair.geometry.grid();
  pair.a = detail::load_input(detail::need(a_p, "a"), "a", load_cdf);
  pair.f = detail::load_input(detail::need(f_p, "f"), "f", [&](const std::string& s) { return load_trace(s, g); });
  if (!(pair.a.grid() == g)) throw UsageError("--a: grid differs from the geometry");
  for (auto k : pair.geometry.omega().nodes())
    if (!pair.a.defined(k) || !(pair.a[k] >= 0.0)) throw UsageError("--a: must be defined and non-negative on Omega");
  for (auto k : pair.geometry.boundary().nodes())
    if (!pair.f.defined(k)) throw UsageError("--f: trace missing at a boundary node");
  return {pair, preset};
}

inline ScalarField load_potential(const std::string& path, const Grid& g, const char* flag = "u") {
  auto u = detail::load_input(detail::need(path, flag), flag, load_cdf);
  if (!(u.grid() == g)) throw UsageError(std::string("--") + flag + ": grid differs from the geometry");
  return u;
}

namespace commands {

inline int phantom(const RunConfig& c) {
  auto pr = make_preset(detail::need(c.preset, "preset"), c.n);
  Artifacts art(c.out);
  const auto& p = pr.problem;
  art.geometry("geometry.cdf", p.geometry);
  art.field("sigma.cdf", p.sigma);
  if (p.geometry.u_mask().any()) art.field("sigma1.cdf", p.sigma1);
  art.trace("f.csv", p.f);
  if (pr.u_exact) art.field("u_exact.cdf", *pr.u_exact);
  if (pr.sigma_exact) art.field("sigma_exact.cdf", *pr.sigma_exact);
  art.text("phantom.txt", "preset = " + pr.name + "\nn = " + std::to_string(std::max(p.geometry.grid().nx, p.geometry.grid().ny)) + "\n");
  art.commit();
  std::cout << "phantom " << pr.name << " written to " << c.out << "\n";
  return 0;
}

inline int forward(const RunConfig& c) {
  auto p = load_problem(c);
  auto sol = solve(p);
  Artifacts art(c.out);
  art.field("u.cdf", sol.u);
  Report r;
  r.info("contrast", sol.contrast);
  r.info("energy", sol.energy);
  r.info("iterations", double(sol.iterations));
  r.info("residual", sol.residual);
  for (auto [id, fl] : sol.per_component_flux) r.info("component_flux_" + std::to_string(id), fl);
  r.check("max_principle_violation", max_principle_violation(sol.u, p.f), "<=", 1e-10, "1e-10");
  art.text("forward.txt", r.str());
  art.commit();
  std::cout << r.str();
  return 0;
}

inline int synthesize(const RunConfig& c) {
  auto p = load_problem(c);
  auto sol = solve_limit(p);
  std::string ext_name = c.extension.empty() ? (p.preset == kDiskExamplePreset ? "analytic" : "finite") : c.extension;
  auto pair = synthesize_magnitude(sol, p, extension_named(ext_name, c.k_ext));
  auto adm = check_admissibility(pair, p.sigma, sol.u);
  Artifacts art(c.out);
  art.geometry("geometry.cdf", pair.geometry);
  art.field("a.cdf", pair.a);
  art.trace("f.csv", pair.f);
  art.field("u_forward.cdf", sol.u);
  std::string side = "extension = " + ext_name + "\n";
  if (!p.preset.empty()) side = "preset = " + p.preset + "\n" + side;
  art.text("pair.txt", side);
  Report r;
  r.info("verdict", to_string(adm.verdict));
  r.info("reason", adm.reason.empty() ? "-" : adm.reason);
  r.info("cond_i_residual", adm.cond_i_residual);
  r.info("cond_ii_slack", adm.cond_ii_slack);
  r.info("cond_ii_threshold", adm.cond_ii_threshold);
  for (auto [id, fl] : adm.per_component_net_flux) r.info("net_flux_" + std::to_string(id), fl);
  r.info("open_zero_components", double(adm.cond_iii.open_components));
  art.text("admissibility.txt", r.str());
  art.commit();
  std::cout << r.str();
  return 0;
}

inline int invert(const RunConfig& c) {
  auto [pair, preset] = load_pair(c);
  auto params = solver_params(c, preset_solver(preset));
  auto res = minimize_weighted_gradient(pair, params);
  Artifacts art(c.out);
  art.field("u.cdf", res.u);
  std::ostringstream hist;
  hist << "iteration,energy\n";
  for (std::size_t i = 0; i < res.energy_history.size(); ++i)
    hist << i + 1 << ',' << detail::format_real(res.energy_history[i]) << '\n';
  art.text("energy_history.csv", hist.str());
  std::ostringstream gaps;
  gaps << "iteration,gap\n";
  for (std::size_t i = 0; i < res.gap_history.size(); ++i)
    gaps << (i + 1) * res.check_every << ',' << detail::format_real(res.gap_history[i]) << '\n';
  art.text("gap_history.csv", gaps.str());
  Report r;
  r.info("energy", res.energy);
  r.info("iterations", double(res.iterations));
  r.info("tau", res.tau);
  r.info("s", res.s);
  r.check("final_gap", res.final_gap, "<=", params.gap_tol);
  art.text("invert.txt", r.str());
  std::cout << r.str();
  if (!res.converged) {
    std::cerr << "cdii: invert: gap " << res.final_gap << " above " << params.gap_tol << " after " << res.iterations
              << " iterations; artifacts left as .partial\n";
    return 1;
  }
  art.commit();
  return 0;
}

inline int classify(const RunConfig& c) {
  auto [pair, preset] = load_pair(c);
  auto u = load_potential(c.u, pair.geometry.grid());
  auto t = thresholds(c, pair);
  auto d = classify_inclusions(pair, u, zero_set_decomposition(pair, u, t), t);
  auto rec = recover_conductivity(pair, u, d);
  Artifacts art(c.out);
  art.field("zones.cdf", zone_codes(pair, d));
  art.field("sigma.cdf", rec.sigma);
  Report r;
  r.info("eps_a", t.eps_a);
  r.info("eps_g", t.eps_g);
  r.info("eps_u", t.eps_u);
  r.info("components", double(d.components.size()));
  for (std::size_t i = 0; i < d.components.size(); ++i) {
    r.info("component_" + std::to_string(i) + "_label", to_string(d.components[i].label));
    r.info("component_" + std::to_string(i) + "_nodes", double(d.components[i].nodes.nodes.size()));
  }
  r.info("gamma_nodes", double(d.gamma_nodes.count()));
  r.info("sigma_clipped_low", double(rec.clipped_low));
  r.info("sigma_clipped_high", double(rec.clipped_high));
  art.text("classify.txt", r.str());
  art.commit();
  std::cout << r.str();
  return 0;
}

inline int verify(const RunConfig& c) {
  Artifacts art(c.out);
  Report r;
  if (c.verify_kind == "coarea") {
    auto u = detail::load_input(detail::need(c.u, "u"), "u", load_cdf);
    auto a = detail::load_input(detail::need(c.a, "a"), "a", load_cdf);
    if (!(a.grid() == u.grid())) throw UsageError("--a: grid differs from --u");
    auto rep = coarea_check(a, u, c.levels, c.seed);
    r.info("coarea_residual", rep.residual);
    r.info("coarea_lhs", rep.lhs);
    r.info("coarea_rhs", rep.rhs);
    for (std::size_t i = 0; i < rep.truncation.size(); ++i) {
      const auto& t = rep.truncation[i];
      std::string pre = "truncation_" + std::to_string(i) + "_";
      r.info(pre + "lambda", t.lambda);
      for (int e = 0; e < 3; ++e) r.info(pre + "error_" + std::to_string(1 << (2 - e)) + "h", t.error[e]);
      r.info(pre + "decreasing", t.decreasing ? 1.0 : 0.0);
    }
    art.text("coarea.txt", r.str());
  } else if (c.verify_kind == "minimality") {
    auto [pair, preset] = load_pair(c);
    auto u = load_potential(c.u, pair.geometry.grid());
    auto t = thresholds(c, pair);
    auto d = zero_set_decomposition(pair, u, t);
    if (!c.v.empty()) {
      auto v = load_potential(c.v, pair.geometry.grid(), "v");
      MinimalityOptions opt;
      opt.flat_values = flat_values(d, u);
      opt.skip_width = t.eps_u;
      opt.eps_a = t.eps_a;
      opt.eps_g = t.eps_g;
      MinimalityReport rep;
      try {
        rep = minimality_test(pair.geometry, pair.a, u, v, sample_levels(pair.f.min(), pair.f.max(), c.lambdas), opt);
      } catch (const TraceMismatchError& e) {
        throw UsageError(std::string("--v: ") + e.what());
      }
      save_file(art.path("minimality.csv"), rep, write_minimality_csv);
      r.info("minimality_fraction", rep.fraction_holding());
      r.info("hypothesis_holds", rep.hypothesis_holds ? 1.0 : 0.0);
    } else {
      auto sweep = minimality_sweep(pair, u, d, t, c.perturbations, c.lambdas, c.seed);
      art.text("minimality.csv", sweep.csv);
      r.info("minimality_worst_fraction", sweep.worst_fraction);
    }
    art.text("minimality.txt", r.str());
  } else {
    auto p = load_problem(c);
    auto rep = convergence_study(p, c.contrasts);
    save_file(art.path("convergence.csv"), rep, [](std::ostream& os, const ConvergenceReport& x) { x.write_csv(os); });
    r.info("bound", rep.bound);
    for (const auto& row : rep.rows) {
      std::string pre = "K_" + Report::fmt(row.contrast) + "_";
      r.info(pre + "distance", row.distance);
      r.info(pre + "grad_norm_ratio", row.grad_norm_ratio);
      r.info(pre + "max_flux", row.max_flux);
    }
    art.text("convergence.txt", r.str());
  }
  art.commit();
  std::cout << r.str();
  return 0;
}

/// phantom -> forward (limit) -> synthesize -> invert -> classify -> verify,
/// with every check written to report.txt. Returns 0 iff all checks pass.
inline int pipeline(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  auto pr = make_preset(detail::need(c.preset, "preset"), c.n);
  const auto& p = pr.problem;
  const auto& geo = p.geometry;
  Artifacts art(c.out);
  Report r;
  r.info("preset", pr.name);
  r.info("n", double(std::max(geo.grid().nx, geo.grid().ny)));
  art.geometry("geometry.cdf", geo);
  art.field("sigma_true.cdf", p.sigma);
  art.trace("f.csv", p.f);

  // forward, limit problem
  auto sol = solve_limit(p);
  art.field("u_forward.cdf", sol.u);
  double flux = 0.0;
  for (auto [id, fl] : sol.per_component_flux) flux = std::max(flux, std::abs(fl));
  r.check("forward_max_component_flux", flux, "<=", 1e-10, "1e-10");
  r.check("forward_max_principle_violation", max_principle_violation(sol.u, p.f), "<=", 1e-10, "1e-10");

  // synthesis and admissibility
  auto ext = c.extension.empty() ? pr.extension : extension_named(c.extension, c.k_ext);
  auto pair = synthesize_magnitude(sol, p, ext);
  art.field("a.cdf", pair.a);
  auto adm = check_admissibility(pair, p.sigma, sol.u);
  r.info("admissibility_verdict", to_string(adm.verdict));
  r.info("cond_ii_slack", adm.cond_ii_slack);
  r.flag("admissible", adm.verdict == Verdict::admissible);

  // inversion and classification
  auto params = solver_params(c, pr.solver);
  auto t = thresholds(c, pair);
  auto t_inv = std::chrono::steady_clock::now();
  auto res = reconstruct(pair, params, t);
  double inv_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_inv).count();
  art.field("u.cdf", res.u);
  art.field("sigma.cdf", res.sigma);
  art.field("zones.cdf", zone_codes(pair, res.decomposition));
  r.info("solver_iterations", double(res.iterations));
  r.info("solver_seconds", inv_seconds);
  r.check("solver_final_gap", res.final_gap, "<=", params.gap_tol);
  r.check("inverse_max_principle_violation", max_principle_violation(res.u, pair.f), "<=", 1e-10, "1e-10");
  const auto& d = res.decomposition;
  r.info("zero_components", double(d.components.size()));
  for (std::size_t i = 0; i < d.components.size(); ++i)
    r.info("component_" + std::to_string(i) + "_label", to_string(d.components[i].label));

  // verification
  auto co = coarea_check(pair.a, res.u, c.levels, c.seed);
  r.check("coarea_residual", co.residual, "<=", 0.02, "0.02");
  if (c.perturbations > 0) {
    auto sweep = minimality_sweep(pair, res.u, d, t, c.perturbations, c.lambdas, c.seed);
    art.text("minimality.csv", sweep.csv);
    // with a vanishing only near stagnation points the discrete level sets
    // miss the 1e-3 margin at a few levels; reported there, checked otherwise
    if (pr.name == kDiskExamplePreset || pr.name == "no-inclusion")
      r.check("minimality_worst_fraction", sweep.worst_fraction, ">=", 0.95, "0.95");
    else
      r.info("minimality_worst_fraction", sweep.worst_fraction);
  }
  if (res.sigma.defined_mask().any())
    r.check("closed_loop_a_rel_err", closed_loop_residual(p, pair, res.sigma), "<=", 0.05, "0.05");

  if (pr.name == kDiskExamplePreset) {
    NodeMask off_collar = geo.omega() - dilate(geo.u_mask(), 2);
    double num = 0.0, den = 0.0;
    for (auto k : off_collar.nodes()) {
      num += std::pow(res.u[k] - (*pr.u_exact)[k], 2);
      den += std::pow((*pr.u_exact)[k], 2);
    }
    r.check("u_rel_l2", std::sqrt(num / den), "<=", 0.05, "0.05");
    NodeMask near_z = dilate(d.z_mask | d.gamma_nodes, 2);
    double worst = 0.0;
    for (auto k : res.sigma.defined_mask().nodes())
      if (!near_z[k] && pr.sigma_exact->defined(k))
        worst = std::max(worst, std::abs(res.sigma[k] - (*pr.sigma_exact)[k]) / (*pr.sigma_exact)[k]);
    r.check("sigma_rel_err", worst, "<=", 0.10, "0.10");
    r.check("zero_component_count", double(d.components.size()), "==", 1.0, "1");
    r.flag("component_labelled_perfect", d.components.size() == 1 && d.components[0].label == ZoneLabel::perfect);
    r.check("u_jaccard", jaccard(d.z_mask, geo.u_mask()), ">=", 0.9, "0.9");

    auto conv = convergence_study(p, c.contrasts);
    save_file(art.path("convergence.csv"), conv, [](std::ostream& os, const ConvergenceReport& x) { x.write_csv(os); });
    bool decreasing = true, bounded = true;
    double C = 0.0;
    for (std::size_t i = 0; i < conv.rows.size(); ++i) {
      if (i && !(conv.rows[i].distance < conv.rows[i - 1].distance)) decreasing = false;
      bounded = bounded && conv.rows[i].bound_holds;
      C = std::max(C, conv.rows[i].contrast * conv.rows[i].max_flux);
    }
    r.flag("contrast_distance_decreasing", decreasing);
    r.check("contrast_distance_ratio", conv.rows.back().distance / conv.rows.front().distance, "<=", 0.1, "0.1");
    r.flag("contrast_gradient_bound", bounded);
    r.check("finite_flux_C", C, "<=", 1.0, "1");
  } else if (pr.name == "no-inclusion") {
    double worst = 0.0;
    for (auto k : res.sigma.defined_mask().nodes()) worst = std::max(worst, std::abs(res.sigma[k] - 1.0));
    r.check("sigma_rel_err", worst, "<=", 0.02, "0.02");
    r.check("zero_component_count", double(d.components.size()), "==", 0.0, "0");
  } else {
    std::size_t insulating = 0;
    for (const auto& comp : d.components) insulating += comp.label == ZoneLabel::insulating;
    r.check("insulating_components", double(insulating), ">=", 1.0, "1");
    std::vector<double> err;
    NodeMask near_z = dilate(d.z_mask | d.gamma_nodes, 2);
    for (auto k : res.sigma.defined_mask().nodes())
      if (!near_z[k] && geo.background()[k]) err.push_back(std::abs(res.sigma[k] - p.sigma[k]) / p.sigma[k]);
    if (!err.empty()) {
      std::sort(err.begin(), err.end());
      r.info("sigma_rel_err_median", err[err.size() / 2]);
      r.info("sigma_rel_err_p90", err[err.size() * 9 / 10]);
      r.info("sigma_rel_err_max", err.back());
    }
  }
  r.info("runtime_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  art.text("report.txt", r.str());
  art.commit();
  std::cout << r.str();
  return r.all_pass() ? 0 : 1;
}

}  // namespace commands

/// Dispatch a parsed configuration. Exit status: 0 success, 1 computation
/// failure, 2 usage error.
inline int run(const RunConfig& c) {
  try {
    if (c.command == "phantom") return commands::phantom(c);
    if (c.command == "forward") return commands::forward(c);
    if (c.command == "synthesize") return commands::synthesize(c);
    if (c.command == "invert") return commands::invert(c);
    if (c.command == "classify") return commands::classify(c);
    if (c.command == "verify") return commands::verify(c);
    if (c.command == "pipeline") return commands::pipeline(c);
    throw UsageError("unknown command '" + c.command + "'");
  } catch (const UsageError& e) {
    std::cerr << "cdii: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "cdii: " << c.command << ": " << e.what() << "\n";
    return 1;
  }
}

inline int main_entry(int argc, const char* const* argv) {
  ParsedArgs parsed;
  try {
    parsed = parse_command_line(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "cdii: " << e.what() << "\n";
    return 2;
  }
  if (!parsed.help.empty()) {
    std::cout << parsed.help;
    return 0;
  }
  return run(parsed.config);
}

}  // namespace cdii
