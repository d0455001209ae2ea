#pragma once

// Run configuration for the command-line front end. Values come from, in
// increasing priority: built-in defaults, a `key = value` config file, flags.

#include <cdii/cdf_io.hpp>
#include <cdii/errors.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace cdii {

struct RunConfig {
  std::string command;      ///< phantom, forward, synthesize, invert, classify, verify, pipeline
  std::string verify_kind;  ///< coarea, minimality or convergence
  std::string preset;
  int n = 0;  ///< 0: the preset's default
  std::string out = ".";

  // inputs
  std::string geometry, sigma, sigma1, f, u, a, v, pair, phantom;

  double K = std::numeric_limits<double>::infinity();
  std::string extension;  ///< finite, analytic or zero; empty: the preset's choice
  double k_ext = 1e4;
  std::vector<double> contrasts{10.0, 100.0, 1000.0};

  std::optional<double> gap_tol, theta, tau, s, step_ratio;
  std::optional<long> max_iters, check_every;
  std::optional<double> eps_a, eps_g, eps_u;

  int levels = 200;
  int lambdas = 50;
  int perturbations = 20;
  std::uint64_t seed = 1;
  double alpha = 0.1, beta = 0.9;
  int threads = 1;
};

namespace detail {

inline double number_arg(const std::string& key, const std::string& v) {
  try {
    return parse_real(v);
  } catch (const FormatError&) {
    throw UsageError("--" + key + ": expected a number, got '" + v + "'");
  }
}

inline long integer_arg(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long r = 0;
  try {
    r = std::stol(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw UsageError("--" + key + ": expected an integer, got '" + v + "'");
  return r;
}

inline void require(bool ok, const std::string& key, const std::string& v, const char* range) {
  if (!ok) throw UsageError("--" + key + ": " + v + " is outside " + range);
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

inline Setter path_setter(std::string RunConfig::*field) {
  return [field](RunConfig& c, const std::string&, const std::string& v) { c.*field = v; };
}

inline Setter real_setter(std::optional<double> RunConfig::*field, double lo, double hi, const char* range) {
  return [=](RunConfig& c, const std::string& k, const std::string& v) {
    double x = number_arg(k, v);
    require(x > lo && x <= hi, k, v, range);
    c.*field = x;
  };
}

inline const std::map<std::string, Setter>& settings() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["preset"] = path_setter(&RunConfig::preset);
    t["out"] = path_setter(&RunConfig::out);
    t["geometry"] = path_setter(&RunConfig::geometry);
    t["sigma"] = path_setter(&RunConfig::sigma);
    t["sigma1"] = path_setter(&RunConfig::sigma1);
    t["f"] = path_setter(&RunConfig::f);
    t["u"] = path_setter(&RunConfig::u);
    t["a"] = path_setter(&RunConfig::a);
    t["v"] = path_setter(&RunConfig::v);
    t["pair"] = path_setter(&RunConfig::pair);
    t["phantom"] = path_setter(&RunConfig::phantom);
    t["n"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      long x = integer_arg(k, v);
      require(x >= 5 && x <= 4001, k, v, "[5, 4001]");
      c.n = int(x);
    };
    t["K"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      double x = number_arg(k, v);
      require(x > 1.0, k, v, "(1, inf]");
      c.K = x;
    };
    t["extension"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      require(v == "finite" || v == "analytic" || v == "zero", k, v, "{finite, analytic, zero}");
      c.extension = v;
    };
    t["K-ext"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      double x = number_arg(k, v);
      require(x > 1.0 && std::isfinite(x), k, v, "(1, inf)");
      c.k_ext = x;
    };
    t["contrasts"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      std::vector<double> out;
      std::stringstream ss(v);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        double x = number_arg(k, tok);
        require(x > 1.0 && std::isfinite(x), k, tok, "(1, inf)");
        if (!out.empty() && !(x > out.back())) throw UsageError("--" + k + ": values must be ascending");
        out.push_back(x);
      }
      if (out.empty()) throw UsageError("--" + k + ": empty list");
      c.contrasts = out;
    };
    t["gap-tol"] = real_setter(&RunConfig::gap_tol, 0.0, 1.0, "(0, 1]");
    t["theta"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      double x = number_arg(k, v);
      require(x >= 0.0 && x <= 1.0, k, v, "[0, 1]");
      c.theta = x;
    };
    t["tau"] = real_setter(&RunConfig::tau, 0.0, 1e12, "(0, 1e12]");
    t["s"] = real_setter(&RunConfig::s, 0.0, 1e12, "(0, 1e12]");
    t["step-ratio"] = real_setter(&RunConfig::step_ratio, 0.0, 1e6, "(0, 1e6]");
    t["max-iters"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      long x = integer_arg(k, v);
      require(x >= 1, k, v, "[1, inf)");
      c.max_iters = x;
    };
    t["check-every"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      long x = integer_arg(k, v);
      require(x >= 1, k, v, "[1, inf)");
      c.check_every = x;
    };
    t["eps-a"] = real_setter(&RunConfig::eps_a, -1e-300, 1e12, "[0, 1e12]");
    t["eps-g"] = real_setter(&RunConfig::eps_g, -1e-300, 1e12, "[0, 1e12]");
    t["eps-u"] = real_setter(&RunConfig::eps_u, -1e-300, 1e12, "[0, 1e12]");
    t["levels"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      long x = integer_arg(k, v);
      require(x >= 2 && x <= 100000, k, v, "[2, 100000]");
      c.levels = int(x);
    };
    t["lambdas"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      long x = integer_arg(k, v);
      require(x >= 1 && x <= 100000, k, v, "[1, 100000]");
      c.lambdas = int(x);
    };
    t["perturbations"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      long x = integer_arg(k, v);
      require(x >= 0 && x <= 10000, k, v, "[0, 10000]");
      c.perturbations = int(x);
    };
    t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      long x = integer_arg(k, v);
      require(x >= 0, k, v, "[0, inf)");
      c.seed = std::uint64_t(x);
    };
    t["alpha"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.alpha = number_arg(k, v); };
    t["beta"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.beta = number_arg(k, v); };
    t["threads"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      long x = integer_arg(k, v);
      require(x >= 1 && x <= 1024, k, v, "[1, 1024]");
      c.threads = int(x);
    };
    return t;
  }();
  return table;
}

inline const std::map<std::string, std::string>& setting_help() {
  static const std::map<std::string, std::string> h{
      {"preset", "disk-example | no-inclusion | insulator-disc | two-inclusions"},
      {"out", "output directory"},
      {"geometry", "geometry file (.cdf)"},
      {"sigma", "background conductivity (.cdf)"},
      {"sigma1", "second conductivity for synthesize (.cdf)"},
      {"f", "boundary trace (.csv)"},
      {"u", "potential (.cdf)"},
      {"a", "current magnitude (.cdf)"},
      {"v", "second potential for verify (.cdf)"},
      {"pair", "directory written by synthesize"},
      {"phantom", "directory written by phantom"},
      {"n", "grid nodes per side"},
      {"K", "inclusion contrast; inf for the limit problem"},
      {"extension", "finite | analytic | zero, for a inside perfect conductors"},
      {"K-ext", "contrast used by the finite extension"},
      {"contrasts", "comma-separated ascending contrasts for verify convergence"},
      {"gap-tol", "relative primal-dual gap to stop at"},
      {"theta", "over-relaxation parameter in [0, 1]"},
      {"tau", "primal step size"},
      {"s", "dual step size"},
      {"step-ratio", "tau/s when steps are derived from the operator norm"},
      {"max-iters", "iteration cap"},
      {"check-every", "gap evaluation period"},
      {"eps-a", "threshold on a for the zero set"},
      {"eps-g", "threshold on |grad u| for the zero set"},
      {"eps-u", "tolerance for constant u on a component"},
      {"levels", "level count for verify coarea"},
      {"lambdas", "level count for verify minimality"},
      {"perturbations", "bump perturbations for verify minimality"},
      {"seed", "random seed"},
      {"alpha", "lower level fraction for full-current reconstruction"},
      {"beta", "upper level fraction for full-current reconstruction"},
      {"threads", "worker threads"},
  };
  return h;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Apply one setting by its flag name (without dashes). Underscores in the
/// key are read as dashes.
inline void apply_setting(RunConfig& c, std::string key, const std::string& value) {
  for (auto& ch : key)
    if (ch == '_') ch = '-';
  const auto& t = detail::settings();
  auto it = t.find(key);
  if (it == t.end()) throw UsageError("unknown key '" + key + "'");
  it->second(c, key, value);
}

/// `key = value` lines; `#` starts a comment.
inline std::vector<std::pair<std::string, std::string>> read_config_lines(std::istream& is,
                                                                          const std::string& origin = "config") {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(origin + ":" + std::to_string(no) + ": expected 'key = value'");
    auto key = detail::trim(line.substr(0, eq));
    auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(origin + ":" + std::to_string(no) + ": missing key");
    if (!detail::settings().count([&] {
          auto k = key;
          for (auto& ch : k)
            if (ch == '_') ch = '-';
          return k;
        }()))
      throw UsageError(origin + ":" + std::to_string(no) + ": unknown key '" + key + "'");
    out.emplace_back(key, value);
  }
  return out;
}

struct ParsedArgs {
  RunConfig config;
  std::string help;  ///< non-empty when --help was requested
};

/// Parse argv (argv[0] is the program name). Throws UsageError.
inline ParsedArgs parse_command_line(int argc, const char* const* argv) {
  CLI::App app{"Conductivity imaging from interior current magnitude", "cdii"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> flags;

  struct Cmd {
    const char* name;
    const char* help;
  };
  const Cmd cmds[] = {
      {"phantom", "write a preset phantom (geometry, conductivity, boundary trace)"},
      {"forward", "solve the conductivity equation"},
      {"synthesize", "build (f, a) from a limit solve and check admissibility"},
      {"invert", "minimize the weighted gradient functional"},
      {"classify", "decompose and label the zero set, recover sigma"},
      {"verify", "coarea | minimality | convergence"},
      {"pipeline", "phantom to report in one run"},
  };
  std::string verify_kind;
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->fallthrough();
    if (std::string(c.name) == "verify")
      sub->add_option("kind", verify_kind, "coarea, minimality or convergence")
          ->required()
          ->check(CLI::IsMember({"coarea", "minimality", "convergence"}));
  }
  app.add_option("--config", config_path, "key = value file; flags override it");
  for (const auto& [key, setter] : detail::settings()) {
    (void)setter;
    std::string k = key;
    auto h = detail::setting_help().find(k);
    app.add_option_function<std::string>(
        "--" + k, [&flags, k](const std::string& v) { flags.emplace_back(k, v); },
        h == detail::setting_help().end() ? std::string() : h->second);
  }

  ParsedArgs out;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out.help = app.help();
    return out;
  } catch (const CLI::CallForAllHelp&) {
    out.help = app.help("", CLI::AppFormatMode::All);
    return out;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  RunConfig& cfg = out.config;
  for (auto* sub : app.get_subcommands()) cfg.command = sub->get_name();
  cfg.verify_kind = verify_kind;
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw UsageError("--config: cannot open '" + config_path + "'");
    for (const auto& [k, v] : read_config_lines(is, config_path)) apply_setting(cfg, k, v);
  }
  for (const auto& [k, v] : flags) apply_setting(cfg, k, v);
  if (!(cfg.alpha < cfg.beta)) throw UsageError("--alpha/--beta: need alpha < beta");
  return out;
}

inline ParsedArgs parse_command_line(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"cdii"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return parse_command_line(int(argv.size()), argv.data());
}

}  // namespace cdii
