#pragma once

// CDF-1 text rasters:
//   cdf1 <nx> <ny> <h> <ox> <oy>
//   one line per grid row (j = 0 first), nx whitespace-separated values, `nan` = undefined
// Geometry files use the same raster with integer codes {0 exterior, 1 Omega, 2 U, 3 V}.
// Boundary traces are CSV `node_index,x,y,f`.

#include <cdii/errors.hpp>
#include <cdii/geometry.hpp>
#include <cdii/grid.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace cdii {

namespace detail {

inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_real(const std::string& tok) {
  if (tok == "nan" || tok == "NaN") return std::nan("");
  if (tok == "inf") return std::numeric_limits<double>::infinity();
  if (tok == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw FormatError("not a number: '" + tok + "'");
  }
  if (used != tok.size()) throw FormatError("trailing characters in number: '" + tok + "'");
  return v;
}

inline void write_header(std::ostream& os, const Grid& g) {
  os << "cdf1 " << g.nx << ' ' << g.ny << ' ' << format_real(g.h) << ' ' << format_real(g.ox) << ' '
     << format_real(g.oy) << '\n';
}

inline Grid read_header(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("cdf1: missing header");
  std::istringstream hs(line);
  std::string magic, snx, sny, sh, sox, soy, extra;
  if (!(hs >> magic >> snx >> sny >> sh >> sox >> soy) || magic != "cdf1" || (hs >> extra))
    throw FormatError("cdf1: malformed header '" + line + "'");
  int nx = 0, ny = 0;
  try {
    nx = std::stoi(snx);
    ny = std::stoi(sny);
  } catch (const std::exception&) {
    throw FormatError("cdf1: bad dimensions");
  }
  double h = parse_real(sh);
  if (nx < 3 || ny < 3 || !(h > 0.0) || !std::isfinite(h)) throw FormatError("cdf1: invalid grid");
  return Grid(nx, ny, h, parse_real(sox), parse_real(soy));
}

}  // namespace detail

inline void write_cdf(std::ostream& os, const ScalarField& f) {
  const Grid& g = f.grid();
  detail::write_header(os, g);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      auto k = g.index(i, j);
      if (i) os << ' ';
      os << (f.defined(k) ? detail::format_real(f[k]) : std::string("nan"));
    }
    os << '\n';
  }
}

inline ScalarField read_cdf(std::istream& is) {
  Grid g = detail::read_header(is);
  ScalarField f(g, NodeMask(g), 0.0);
  std::string line;
  for (int j = 0; j < g.ny; ++j) {
    if (!std::getline(is, line)) throw FormatError("cdf1: truncated raster");
    std::istringstream ls(line);
    std::string tok;
    for (int i = 0; i < g.nx; ++i) {
      if (!(ls >> tok)) throw FormatError("cdf1: short row " + std::to_string(j));
      double v = detail::parse_real(tok);
      auto k = g.index(i, j);
      if (std::isnan(v)) continue;
      if (!std::isfinite(v)) throw FormatError("cdf1: infinite value");
      f[k] = v;
      f.set_defined(k, true);
    }
    if (ls >> tok) throw FormatError("cdf1: long row " + std::to_string(j));
  }
  return f;
}

inline void write_geometry(std::ostream& os, const InclusionGeometry& geo) {
  const Grid& g = geo.grid();
  detail::write_header(os, g);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      if (i) os << ' ';
      os << int(geo.code(g.index(i, j)));
    }
    os << '\n';
  }
}

/// Parses a code raster and validates it as an InclusionGeometry.
inline InclusionGeometry read_geometry(std::istream& is) {
  ScalarField codes = read_cdf(is);
  const Grid& g = codes.grid();
  NodeMask omega(g), u(g), v(g);
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!codes.defined(k)) throw FormatError("geometry: undefined code");
    double c = codes[k];
    if (c != std::floor(c) || c < 0 || c > 3) throw FormatError("geometry: invalid code");
    int code = int(c);
    if (code >= 1) omega.set(k);
    if (code == 2) u.set(k);
    if (code == 3) v.set(k);
  }
  return InclusionGeometry(std::move(omega), std::move(u), std::move(v));
}

/// Boundary trace: a ScalarField defined on the Dirichlet nodes.
inline void write_trace_csv(std::ostream& os, const ScalarField& f) {
  const Grid& g = f.grid();
  os << "node_index,x,y,f\n";
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!f.defined(k)) continue;
    os << k << ',' << detail::format_real(g.x(g.col(k))) << ',' << detail::format_real(g.y(g.row(k))) << ','
       << detail::format_real(f[k]) << '\n';
  }
}

inline ScalarField read_trace_csv(std::istream& is, const Grid& g) {
  ScalarField f(g, NodeMask(g), 0.0);
  std::string line;
  if (!std::getline(is, line) || line.rfind("node_index,x,y,f", 0) != 0)
    throw FormatError("trace: missing header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string idx, x, y, v;
    if (!std::getline(ls, idx, ',') || !std::getline(ls, x, ',') || !std::getline(ls, y, ',') ||
        !std::getline(ls, v))
      throw FormatError("trace: malformed line '" + line + "'");
    std::size_t k = 0;
    try {
      k = std::stoull(idx);
    } catch (const std::exception&) {
      throw FormatError("trace: bad node index");
    }
    if (k >= g.size()) throw FormatError("trace: node index out of range");
    double val = detail::parse_real(v);
    if (!std::isfinite(val)) throw FormatError("trace: non-finite value");
    f[k] = val;
    f.set_defined(k, true);
  }
  return f;
}

template <class T, class Fn>
void save_file(const std::string& path, const T& obj, Fn&& writer) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  writer(os, obj);
  if (!os) throw Error("write failed: " + path);
}

inline ScalarField load_cdf(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return read_cdf(is);
}

inline InclusionGeometry load_geometry(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return read_geometry(is);
}

inline ScalarField load_trace(const std::string& path, const Grid& g) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return read_trace_csv(is, g);
}

}  // namespace cdii
