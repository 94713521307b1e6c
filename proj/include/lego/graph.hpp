#pragma once

// Neighborhood graphs, Gaussian-kernel affinities, the random-walk graph
// Laplacian, and Sinkhorn scaling to a doubly stochastic kernel.

#include "lego/common.hpp"
#include "lego/dataset.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace lego {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

struct NeighborhoodGraph {
  std::vector<std::vector<Index>> neighbors;   // ascending (distance, index)
  std::vector<std::vector<double>> distances;  // matching Euclidean distances
  int k_nn = 0;
  bool includes_self = false;

  Index n() const { return static_cast<Index>(neighbors.size()); }
};

enum class AffinityMode { knn_truncated, dense };

// Dense mode stores the full kernel matrix; knn_truncated keeps only the
// symmetrized kNN support (plus the diagonal) in a sparse matrix.
struct Affinity {
  AffinityMode mode = AffinityMode::knn_truncated;
  double bandwidth = 0.0;
  SparseMatrix sparse;
  Matrix dense;

  bool is_dense() const { return mode == AffinityMode::dense; }
  Index n() const { return is_dense() ? dense.rows() : sparse.rows(); }

  Vector row_sums() const {
    if (is_dense()) return dense.rowwise().sum();
    Vector s = Vector::Zero(sparse.rows());
    for (int k = 0; k < sparse.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(sparse, k); it; ++it) s(it.row()) += it.value();
    return s;
  }

  Matrix to_dense() const { return is_dense() ? dense : Matrix(sparse); }
};

struct LaplacianOperator {
  bool dense_storage = false;
  SparseMatrix lap_sparse;       // I - Dn^{-1} K
  Matrix lap_dense;
  SparseMatrix norm_adj_sparse;  // K = D^{-1} A D^{-1}
  Matrix norm_adj_dense;
  Vector degrees;                // d_i, row sums of A
  Vector norm_degrees;           // row sums of K

  Index n() const { return degrees.size(); }

  Matrix laplacian_dense() const { return dense_storage ? lap_dense : Matrix(lap_sparse); }

  Vector apply(const Vector& x) const {
    return dense_storage ? Vector(lap_dense * x) : Vector(lap_sparse * x);
  }

  // Symmetric similarity transform I - Dn^{-1/2} K Dn^{-1/2}; shares the
  // spectrum of the random-walk Laplacian.
  Matrix sym_dense() const {
    const Vector inv_sqrt = norm_degrees.cwiseSqrt().cwiseInverse();
    Matrix s = dense_storage ? norm_adj_dense : Matrix(norm_adj_sparse);
    s = inv_sqrt.asDiagonal() * s * inv_sqrt.asDiagonal();
    return Matrix::Identity(n(), n()) - s;
  }

  SparseMatrix sym_sparse() const {
    const Vector inv_sqrt = norm_degrees.cwiseSqrt().cwiseInverse();
    SparseMatrix s =
        dense_storage ? SparseMatrix(norm_adj_dense.sparseView()) : norm_adj_sparse;
    s = inv_sqrt.asDiagonal() * s * inv_sqrt.asDiagonal();
    SparseMatrix id(n(), n());
    id.setIdentity();
    return SparseMatrix(id - s);
  }
};

// ---------------------------------------------------------------------------
// kNN graph
// ---------------------------------------------------------------------------

// Exact Euclidean kNN by blocked brute force; ties broken by smaller index.
inline NeighborhoodGraph knn_graph(const PointCloud& cloud, int k_nn,
                                   bool includes_self = false) {
  const Index n = cloud.n();
  if (k_nn <= 0) throw InvalidArgumentError("knn_graph: k_nn must be positive");
  if (k_nn >= n) throw InvalidArgumentError("knn_graph: k_nn must be < n");

  NeighborhoodGraph graph;
  graph.k_nn = k_nn;
  graph.includes_self = includes_self;
  graph.neighbors.resize(n);
  graph.distances.resize(n);

  const Matrix& pts = cloud.points;
  const Vector sq_norms = pts.colwise().squaredNorm();
  const Index block = 256;
  for (Index start = 0; start < n; start += block) {
    const Index cols = std::min(block, n - start);
    // Squared distances of the block against everything via one GEMM.
    Matrix gram = pts.transpose() * pts.middleCols(start, cols);  // n x cols
    parallel_for(0, cols, [&](Index c) {
      const Index j = start + c;
      std::vector<std::pair<double, Index>> cand;
      cand.reserve(n);
      for (Index i = 0; i < n; ++i) {
        if (!includes_self && i == j) continue;
        const double d2 = std::max(0.0, sq_norms(i) + sq_norms(j) - 2.0 * gram(i, c));
        cand.emplace_back(d2, i);
      }
      std::partial_sort(cand.begin(), cand.begin() + k_nn, cand.end());
      auto& nbr = graph.neighbors[j];
      auto& dst = graph.distances[j];
      nbr.resize(k_nn);
      dst.resize(k_nn);
      for (int s = 0; s < k_nn; ++s) {
        nbr[s] = cand[s].second;
        dst[s] = std::sqrt(cand[s].first);
      }
    });
  }
  return graph;
}

// ---------------------------------------------------------------------------
// Bandwidth heuristic
// ---------------------------------------------------------------------------

// sqrt(2) times the median (over points) of the distance to the
// ceil(k_nn/2)-th neighbor, with any self entry skipped.
inline double bandwidth_heuristic(const NeighborhoodGraph& graph) {
  const Index n = graph.n();
  if (n == 0) throw InvalidArgumentError("bandwidth_heuristic: empty graph");
  const int rank = (graph.k_nn + 1) / 2;
  std::vector<double> vals;
  vals.reserve(n);
  for (Index j = 0; j < n; ++j) {
    int seen = 0;
    for (std::size_t s = 0; s < graph.neighbors[j].size(); ++s) {
      if (graph.neighbors[j][s] == j) continue;
      if (++seen == rank) {
        vals.push_back(graph.distances[j][s]);
        break;
      }
    }
  }
  if (vals.empty()) throw DegenerateGraphError("bandwidth_heuristic: no usable neighbors");
  return std::sqrt(2.0) * quantile(vals, 0.5);
}

// ---------------------------------------------------------------------------
// Affinity
// ---------------------------------------------------------------------------

inline double gaussian_kernel(double dist, double s) {
  return std::exp(-dist * dist / (s * s));
}

// W_ij = exp(-|x_i - x_j|^2 / s^2) on the symmetrized kNN support (union of
// directed edges, diagonal retained) or on all pairs in dense mode.
inline Affinity gaussian_affinity(const PointCloud& cloud, const NeighborhoodGraph* graph,
                                  double s, AffinityMode mode) {
  if (!(s > 0.0)) throw InvalidArgumentError("gaussian_affinity: bandwidth must be positive");
  const Index n = cloud.n();
  Affinity aff;
  aff.mode = mode;
  aff.bandwidth = s;
  if (mode == AffinityMode::dense) {
    aff.dense.resize(n, n);
    const Matrix& pts = cloud.points;
    for (Index j = 0; j < n; ++j) {
      aff.dense.col(j) =
          (-(pts.colwise() - pts.col(j)).colwise().squaredNorm() / (s * s)).array().exp();
    }
    // Symmetrize exactly against floating-point asymmetry in the column sweep.
    aff.dense = ((aff.dense + aff.dense.transpose()) * 0.5).eval();
    return aff;
  }
  if (graph == nullptr)
    throw InvalidArgumentError("gaussian_affinity: knn_truncated mode needs a graph");
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(n) * (2 * graph->k_nn + 1));
  for (Index j = 0; j < n; ++j) trips.emplace_back(j, j, 1.0);
  for (Index j = 0; j < n; ++j) {
    for (std::size_t sidx = 0; sidx < graph->neighbors[j].size(); ++sidx) {
      const Index i = graph->neighbors[j][sidx];
      if (i == j) continue;
      const double w = gaussian_kernel(graph->distances[j][sidx], s);
      trips.emplace_back(i, j, w);
      trips.emplace_back(j, i, w);
    }
  }
  aff.sparse.resize(n, n);
  // Duplicate edges (i in N_j and j in N_i) collapse to one weight.
  aff.sparse.setFromTriplets(trips.begin(), trips.end(),
                             [](const double& a, const double&) { return a; });
  return aff;
}

// Wraps an explicit symmetric weight matrix (used by tests and by Sinkhorn).
inline Affinity make_affinity(const Matrix& w, double s, AffinityMode mode) {
  Affinity aff;
  aff.mode = mode;
  aff.bandwidth = s;
  if (mode == AffinityMode::dense)
    aff.dense = w;
  else
    aff.sparse = w.sparseView();
  return aff;
}

// ---------------------------------------------------------------------------
// Normalization and Laplacian
// ---------------------------------------------------------------------------

// K = D^{-1} A D^{-1} with d_i the row sums of A.
inline Affinity normalized_affinity(const Affinity& aff) {
  const Vector d = aff.row_sums();
  if (d.minCoeff() <= 0.0)
    throw DegenerateGraphError("normalized_affinity: zero degree");
  const Vector inv = d.cwiseInverse();
  Affinity out;
  out.mode = aff.mode;
  out.bandwidth = aff.bandwidth;
  if (aff.is_dense())
    out.dense = inv.asDiagonal() * aff.dense * inv.asDiagonal();
  else
    out.sparse = inv.asDiagonal() * aff.sparse * inv.asDiagonal();
  return out;
}

// Random-walk Laplacian I - Dn^{-1} K of the input affinity A.
inline LaplacianOperator random_walk_laplacian(const Affinity& aff) {
  LaplacianOperator lap;
  lap.dense_storage = aff.is_dense();
  lap.degrees = aff.row_sums();
  if (lap.degrees.minCoeff() <= 0.0)
    throw DegenerateGraphError("random_walk_laplacian: zero degree");
  const Affinity norm = normalized_affinity(aff);
  lap.norm_degrees = norm.row_sums();
  if (lap.norm_degrees.minCoeff() <= 0.0)
    throw DegenerateGraphError("random_walk_laplacian: zero normalized degree");
  const Vector inv = lap.norm_degrees.cwiseInverse();
  const Index n = lap.degrees.size();
  if (lap.dense_storage) {
    lap.norm_adj_dense = norm.dense;
    lap.lap_dense = Matrix::Identity(n, n) - inv.asDiagonal() * norm.dense;
  } else {
    lap.norm_adj_sparse = norm.sparse;
    SparseMatrix id(n, n);
    id.setIdentity();
    lap.lap_sparse = id - SparseMatrix(inv.asDiagonal() * norm.sparse);
  }
  return lap;
}

inline double laplacian_deviation(const LaplacianOperator& a, const LaplacianOperator& b) {
  if (a.n() != b.n())
    throw InvalidArgumentError("laplacian_deviation: size mismatch");
  if (!a.dense_storage && !b.dense_storage)
    return SparseMatrix(a.lap_sparse - b.lap_sparse).norm();
  return (a.laplacian_dense() - b.laplacian_dense()).norm();
}

// ---------------------------------------------------------------------------
// Sinkhorn scaling
// ---------------------------------------------------------------------------

// Symmetric Sinkhorn: finds v > 0 with diag(v) A diag(v) doubly stochastic;
// iterates v <- sqrt(v / (A v)). Residual is max_i |v_i (A v)_i - 1|.
inline Affinity sinkhorn_doubly_stochastic(const Affinity& aff, double tol = 1e-8,
                                           int max_iter = 2000) {
  if (!(tol > 0.0)) throw InvalidArgumentError("sinkhorn: tol must be positive");
  const Index n = aff.n();
  if (aff.row_sums().minCoeff() <= 0.0)
    throw DegenerateGraphError("sinkhorn: zero row in support");
  Vector v = Vector::Ones(n);
  auto apply = [&](const Vector& x) -> Vector {
    return aff.is_dense() ? Vector(aff.dense * x) : Vector(aff.sparse * x);
  };
  double residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it <= max_iter; ++it) {
    const Vector av = apply(v);
    residual = (v.cwiseProduct(av) - Vector::Ones(n)).cwiseAbs().maxCoeff();
    if (residual <= tol || it == max_iter) break;
    v = (v.cwiseQuotient(av)).cwiseSqrt();
  }
  if (residual > tol)
    throw ConvergenceError("sinkhorn: not converged", residual);
  Affinity out;
  out.mode = aff.mode;
  out.bandwidth = aff.bandwidth;
  if (aff.is_dense())
    out.dense = v.asDiagonal() * aff.dense * v.asDiagonal();
  else
    out.sparse = v.asDiagonal() * aff.sparse * v.asDiagonal();
  return out;
}

}  // namespace lego
