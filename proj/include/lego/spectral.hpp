#pragma once

// Smallest eigenpairs of the random-walk Laplacian via its symmetric
// similarity transform: dense solve at desk scale, shift-invert Lanczos with
// full reorthogonalization beyond the dense cutoff.

#include "lego/common.hpp"
#include "lego/graph.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace lego {

struct SpectralBasis {
  Vector eigenvalues;  // m0 values, ascending
  Matrix phi;          // n x m0 right eigenvectors of the random-walk Laplacian
  Matrix u_phi;        // n x m0, orthonormal columns spanning range(phi)
  int m0 = 0;
};

enum class SolverPolicy { automatic, dense, sparse };

struct EigensolverOptions {
  SolverPolicy policy = SolverPolicy::automatic;
  Index dense_cutoff = 4000;
  double tol = 1e-10;   // Ritz residual tolerance on the symmetric operator
  double shift = 1e-3;  // shift-invert regularization
};

namespace detail {

// Sign convention: the entry of largest magnitude is positive; the lowest
// index wins ties. Keeps eigenvectors reproducible across solver paths.
inline void fix_sign(Eigen::Ref<Vector> v) {
  Index best = 0;
  double best_abs = std::abs(v(0));
  for (Index i = 1; i < v.size(); ++i) {
    if (std::abs(v(i)) > best_abs) {
      best_abs = std::abs(v(i));
      best = i;
    }
  }
  if (v(best) < 0.0) v = -v;
}

inline Matrix thin_q(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
}

// Shift-invert block Krylov iteration with Rayleigh-Ritz extraction.
// A block start (width 4) is essential: the closed curves and tori produce
// near-degenerate eigenvalue pairs, and a single-vector Krylov space can
// silently miss one copy of such a pair.
inline std::pair<Vector, Matrix> lanczos_smallest(const SparseMatrix& l_sym, int m0,
                                                  double tol, double shift) {
  const Index n = l_sym.rows();
  SparseMatrix shifted = l_sym;
  for (Index i = 0; i < n; ++i) shifted.coeffRef(i, i) += shift;
  Eigen::SimplicialLDLT<SparseMatrix> solver(shifted);
  if (solver.info() != Eigen::Success)
    throw ConvergenceError("lanczos: factorization failed", 0.0);

  const Index block = std::min<Index>({4, static_cast<Index>(m0), n});
  const Index max_cols = std::min<Index>(n, 6 * m0 + 120);
  Matrix basis(n, max_cols + block);     // orthonormal columns
  Matrix mapped(n, max_cols + block);    // (L_sym + shift)^{-1} basis
  Index cols = 0;
  Rng rng(0x5eedbead);

  // Orthonormalizes w against the current basis and internally; columns that
  // collapse are replaced with fresh random directions.
  auto append_block = [&](Matrix w) {
    for (int pass = 0; pass < 2; ++pass)
      if (cols > 0)
        w -= basis.leftCols(cols) * (basis.leftCols(cols).transpose() * w);
    for (Index c = 0; c < w.cols(); ++c) {
      for (int attempt = 0;; ++attempt) {
        for (Index c2 = 0; c2 < c; ++c2)
          w.col(c) -= w.col(c2).dot(w.col(c)) * w.col(c2);
        const double norm = w.col(c).norm();
        if (norm > 1e-12 || attempt > 4) {
          w.col(c) /= std::max(norm, 1e-300);
          break;
        }
        for (Index i = 0; i < n; ++i) w(i, c) = rng.normal();
        if (cols > 0)
          w.col(c) -= basis.leftCols(cols) * (basis.leftCols(cols).transpose() * w.col(c));
      }
    }
    basis.middleCols(cols, w.cols()) = w;
    mapped.middleCols(cols, w.cols()) = solver.solve(w);
    cols += w.cols();
  };

  Matrix seed(n, block);
  for (Index c = 0; c < block; ++c)
    for (Index i = 0; i < n; ++i) seed(i, c) = rng.normal();
  append_block(seed);

  Vector evals;
  Matrix evecs;
  double worst = std::numeric_limits<double>::infinity();
  Index checkpoint = std::min<Index>(max_cols, std::max<Index>(2 * m0 + 40, 60));
  while (true) {
    while (cols < checkpoint) append_block(mapped.middleCols(cols - block, block));

    // Rayleigh-Ritz on span(basis) for the inverse operator.
    Matrix t = basis.leftCols(cols).transpose() * mapped.leftCols(cols);
    t = 0.5 * (t + t.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> es(t);

    evals.resize(m0);
    evecs.resize(n, m0);
    worst = 0.0;
    for (int i = 0; i < m0; ++i) {
      const Index col = cols - 1 - i;  // largest Ritz values of the inverse
      Vector x = basis.leftCols(cols) * es.eigenvectors().col(col);
      x.normalize();
      const double lambda = 1.0 / es.eigenvalues()(col) - shift;
      evals(i) = lambda;
      evecs.col(i) = x;
      const double res = (l_sym * x - lambda * x).norm() / std::max(1.0, std::abs(lambda));
      worst = std::max(worst, res);
    }
    if (worst <= tol) break;
    if (checkpoint >= max_cols)
      throw ConvergenceError("lanczos: residual above tolerance", worst);
    checkpoint = std::min<Index>(max_cols, 2 * checkpoint);
  }
  return {evals, evecs};
}

}  // namespace detail

inline SpectralBasis smallest_eigenpairs(const LaplacianOperator& lap, int m0,
                                         const EigensolverOptions& opts = {}) {
  const Index n = lap.n();
  if (m0 <= 0) throw InvalidArgumentError("smallest_eigenpairs: m0 must be positive");
  if (m0 > n) throw InvalidArgumentError("smallest_eigenpairs: m0 exceeds n");

  bool use_dense = false;
  switch (opts.policy) {
    case SolverPolicy::dense:
      use_dense = true;
      break;
    case SolverPolicy::sparse:
      use_dense = false;
      break;
    case SolverPolicy::automatic:
      use_dense = n <= opts.dense_cutoff;
      break;
  }

  Vector evals;
  Matrix sym_vecs;
  if (use_dense) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(lap.sym_dense());
    if (es.info() != Eigen::Success)
      throw ConvergenceError("smallest_eigenpairs: dense solver failed", 0.0);
    evals = es.eigenvalues().head(m0);
    sym_vecs = es.eigenvectors().leftCols(m0);
  } else {
    std::tie(evals, sym_vecs) = detail::lanczos_smallest(lap.sym_sparse(), m0, opts.tol, opts.shift);
  }

  SpectralBasis basis;
  basis.m0 = m0;
  basis.eigenvalues = evals;
  // Back-transform the symmetric eigenvectors to right eigenvectors of the
  // random-walk operator, unit-normalized with a fixed sign.
  const Vector inv_sqrt = lap.norm_degrees.cwiseSqrt().cwiseInverse();
  basis.phi.resize(n, m0);
  for (int i = 0; i < m0; ++i) {
    Vector col = inv_sqrt.cwiseProduct(sym_vecs.col(i));
    col /= col.norm();
    detail::fix_sign(col);
    basis.phi.col(i) = col;
  }
  basis.u_phi = detail::thin_q(basis.phi);
  return basis;
}

}  // namespace lego
