#pragma once

#include <cdii/errors.hpp>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace cdii {

/// Symmetric sparse matrix assembled from (row, col, value) triples; duplicates are summed.
class CsrMatrix {
public:
  CsrMatrix() = default;

  struct Entry {
    std::size_t row, col;
    double value;
  };

  CsrMatrix(std::size_t n, const std::vector<Entry>& entries) : m_(Eigen::Index(n), Eigen::Index(n)) {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(entries.size());
    for (const auto& e : entries) t.emplace_back(Eigen::Index(e.row), Eigen::Index(e.col), e.value);
    m_.setFromTriplets(t.begin(), t.end());
    m_.makeCompressed();
  }

  [[nodiscard]] std::size_t rows() const { return std::size_t(m_.rows()); }
  [[nodiscard]] const Eigen::SparseMatrix<double>& matrix() const { return m_; }

private:
  Eigen::SparseMatrix<double> m_;
};

struct CgResult {
  std::size_t iterations = 0;
  double residual = 0.0;  ///< ||b - Ax||_2 / ||b||_2
  bool converged = false;
};

/// Jacobi-preconditioned conjugate gradients to ||b - Ax|| <= tol ||b|| (or the
/// rounding floor, whichever is larger). `x` holds the initial guess on entry.
inline CgResult pcg(const CsrMatrix& A, std::span<const double> b, std::span<double> x, double tol,
                    std::size_t max_iter) {
  CgResult res;
  const auto n = Eigen::Index(A.rows());
  if (n == 0) {
    res.converged = true;
    return res;
  }
  Eigen::Map<const Eigen::VectorXd> bv(b.data(), n);
  Eigen::Map<Eigen::VectorXd> xv(x.data(), n);
  const double bnorm = bv.norm();
  if (bnorm == 0.0) {
    xv.setZero();
    res.converged = true;
    return res;
  }
  const auto& M = A.matrix();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(M.coeff(i, i) > 0.0)) throw SingularSystemError("pcg: non-positive diagonal entry");

  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(tol);
  cg.setMaxIterations(Eigen::Index(max_iter));
  cg.compute(M);
  // Rounding floor of the residual: 64 eps || |A| |x| ||. High-contrast rows
  // make it exceed tol * ||b||, in which case reaching the floor counts.
  Eigen::SparseMatrix<double> absM = M.cwiseAbs();
  auto floor_of = [&](const Eigen::VectorXd& v) {
    return 64.0 * std::numeric_limits<double>::epsilon() * (absM * v.cwiseAbs()).norm();
  };
  double rnorm = 0.0;
  // restart from the current iterate when the recursive residual has drifted
  // below the true one
  for (int restart = 0; restart < 8 && res.iterations < max_iter; ++restart) {
    cg.setMaxIterations(Eigen::Index(max_iter - res.iterations));
    Eigen::VectorXd guess = xv;
    xv = cg.solveWithGuess(bv, guess);
    res.iterations += std::size_t(cg.iterations());
    rnorm = (bv - M * xv).norm();
    if (rnorm <= tol * bnorm || rnorm <= floor_of(xv)) {
      res.converged = true;
      break;
    }
  }
  res.residual = rnorm / bnorm;
  return res;
}

}  // namespace cdii
