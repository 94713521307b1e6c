#include "lego/graph.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace lego;

namespace {

PointCloud cloud_from(const Matrix& pts) {
  PointCloud c;
  c.points = pts;
  return c;
}

PointCloud random_cloud(Index p, Index n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix pts(p, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < p; ++i) pts(i, j) = rng.uniform(-1.0, 1.0);
  return cloud_from(pts);
}

// Plain O(n^2) scan with the same (distance, index) ordering.
std::vector<Index> brute_force_knn(const Matrix& pts, Index j, int k, bool self) {
  std::vector<std::pair<double, Index>> cand;
  for (Index i = 0; i < pts.cols(); ++i) {
    if (!self && i == j) continue;
    cand.emplace_back((pts.col(i) - pts.col(j)).squaredNorm(), i);
  }
  std::sort(cand.begin(), cand.end());
  std::vector<Index> out(k);
  for (int s = 0; s < k; ++s) out[s] = cand[s].second;
  return out;
}

}  // namespace

TEST(KnnGraph, CollinearTriple) {
  Matrix pts(1, 3);
  pts << 0.0, 1.0, 2.0;
  auto graph = knn_graph(cloud_from(pts), 1, false);
  EXPECT_EQ(graph.neighbors[0][0], 1);
  EXPECT_EQ(graph.neighbors[2][0], 1);
  const Index mid = graph.neighbors[1][0];
  EXPECT_TRUE(mid == 0 || mid == 2);
  EXPECT_EQ(mid, 0);  // tie broken by smaller index
}

TEST(KnnGraph, MatchesBruteForce) {
  auto cloud = random_cloud(3, 200, 5);
  for (int k : {1, 4, 9}) {
    auto graph = knn_graph(cloud, k, false);
    for (Index j = 0; j < cloud.n(); ++j) {
      EXPECT_EQ(graph.neighbors[j], brute_force_knn(cloud.points, j, k, false));
      EXPECT_TRUE(std::is_sorted(graph.distances[j].begin(), graph.distances[j].end()));
    }
  }
}

TEST(KnnGraph, IncludesSelfWhenAsked) {
  auto cloud = random_cloud(2, 50, 9);
  auto graph = knn_graph(cloud, 3, true);
  for (Index j = 0; j < cloud.n(); ++j) {
    EXPECT_EQ(graph.neighbors[j][0], j);
    EXPECT_EQ(graph.distances[j][0], 0.0);
  }
}

TEST(KnnGraph, DuplicatePointRanksFirst) {
  Matrix pts(2, 4);
  pts << 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0;
  auto graph = knn_graph(cloud_from(pts), 2, false);
  EXPECT_EQ(graph.neighbors[0][0], 1);  // duplicate at distance 0
  EXPECT_EQ(graph.distances[0][0], 0.0);
  EXPECT_EQ(graph.neighbors[1][0], 0);
}

TEST(KnnGraph, RejectsKTooLarge) {
  auto cloud = random_cloud(2, 10, 1);
  EXPECT_THROW(knn_graph(cloud, 10, false), InvalidArgumentError);
}

TEST(Bandwidth, EquidistantCloud) {
  // Unit simplex vertices: all pairwise distances sqrt(2).
  Matrix pts = Matrix::Identity(4, 4);
  auto graph = knn_graph(cloud_from(pts), 3, false);
  EXPECT_NEAR(bandwidth_heuristic(graph), std::sqrt(2.0) * std::sqrt(2.0), 1e-12);
}

TEST(Bandwidth, RegularGrid) {
  const Index side = 8;
  Matrix pts(2, side * side);
  const double h = 0.25;
  Index j = 0;
  for (Index a = 0; a < side; ++a)
    for (Index b = 0; b < side; ++b, ++j) pts.col(j) << h * a, h * b;
  auto graph = knn_graph(cloud_from(pts), 4, false);
  // Interior points see four axis neighbors at distance h; the 2nd neighbor
  // distance is h for every point on the grid.
  EXPECT_NEAR(bandwidth_heuristic(graph), std::sqrt(2.0) * h, 1e-12);
}

TEST(Bandwidth, ScalesWithCloud) {
  auto cloud = random_cloud(3, 120, 17);
  auto graph = knn_graph(cloud, 6, false);
  const double s1 = bandwidth_heuristic(graph);
  PointCloud scaled = cloud;
  scaled.points *= 3.5;
  const double s2 = bandwidth_heuristic(knn_graph(scaled, 6, false));
  EXPECT_NEAR(s2, 3.5 * s1, 1e-9);
}

TEST(Affinity, KernelValues) {
  EXPECT_EQ(gaussian_kernel(0.0, 0.7), 1.0);
  EXPECT_NEAR(gaussian_kernel(0.7, 0.7), std::exp(-1.0), 1e-15);
}

TEST(Affinity, LipschitzBoundOnSampledPairs) {
  // |K_s(z1) - K_s(z2)| <= sqrt(2/e)/s * ||z1 - z2|| for scalar arguments.
  const double s = 0.42;
  const double lip = std::sqrt(2.0 / M_E) / s;
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    const double a = rng.uniform(0.0, 3.0);
    const double b = rng.uniform(0.0, 3.0);
    EXPECT_LE(std::abs(gaussian_kernel(a, s) - gaussian_kernel(b, s)),
              lip * std::abs(a - b) + 1e-12);
  }
}

TEST(Affinity, SymmetricPositiveWithUnitDiagonal) {
  auto cloud = random_cloud(3, 80, 23);
  auto graph = knn_graph(cloud, 5, false);
  auto aff = gaussian_affinity(cloud, &graph, 0.5, AffinityMode::knn_truncated);
  Matrix w = aff.to_dense();
  EXPECT_LT((w - w.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  for (Index j = 0; j < cloud.n(); ++j) EXPECT_EQ(w(j, j), 1.0);
  EXPECT_LE(w.maxCoeff(), 1.0);
  EXPECT_GE(w.minCoeff(), 0.0);

  auto dense = gaussian_affinity(cloud, nullptr, 0.5, AffinityMode::dense);
  EXPECT_LT((dense.dense - dense.dense.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  // On the shared support the truncated and dense kernels agree.
  for (Index j = 0; j < cloud.n(); ++j)
    for (Index i : graph.neighbors[j]) EXPECT_NEAR(w(i, j), dense.dense(i, j), 1e-12);
}

TEST(Affinity, DenseDegreeLowerBound) {
  // Points inside a ball of radius R give min degree >= n exp(-4 R^2 / s^2).
  auto cloud = random_cloud(2, 150, 31);
  const double R = cloud.points.colwise().norm().maxCoeff();
  const double s = 0.8;
  auto aff = gaussian_affinity(cloud, nullptr, s, AffinityMode::dense);
  const double bound = cloud.n() * std::exp(-4.0 * R * R / (s * s));
  EXPECT_GE(aff.row_sums().minCoeff(), bound);
}

TEST(NormalizedAffinity, TwoNodeClosedForm) {
  const double a = 0.3;
  Matrix w(2, 2);
  w << 1.0, a, a, 1.0;
  auto norm = normalized_affinity(make_affinity(w, 1.0, AffinityMode::dense));
  EXPECT_NEAR(norm.dense(0, 1), a / ((1.0 + a) * (1.0 + a)), 1e-15);
}

TEST(NormalizedAffinity, MatchesDirectProduct) {
  Rng rng(7);
  Matrix w(5, 5);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j <= i; ++j) w(i, j) = w(j, i) = rng.uniform(0.1, 1.0);
  auto norm = normalized_affinity(make_affinity(w, 1.0, AffinityMode::dense));
  const Vector d = w.rowwise().sum();
  const Matrix expect = d.cwiseInverse().asDiagonal() * w * d.cwiseInverse().asDiagonal();
  EXPECT_LT((norm.dense - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(NormalizedAffinity, ZeroDegreeIsDegenerate) {
  Matrix w = Matrix::Zero(3, 3);
  w(0, 1) = w(1, 0) = 1.0;  // node 2 isolated
  EXPECT_THROW(normalized_affinity(make_affinity(w, 1.0, AffinityMode::dense)),
               DegenerateGraphError);
}

TEST(Laplacian, ConstantVectorInKernel) {
  auto cloud = random_cloud(3, 60, 41);
  auto graph = knn_graph(cloud, 6, false);
  auto lap = random_walk_laplacian(gaussian_affinity(cloud, &graph, 0.6, AffinityMode::knn_truncated));
  EXPECT_LT(lap.apply(Vector::Ones(cloud.n())).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(lap.laplacian_dense().rowwise().sum().cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Laplacian, ThreeNodePathHandComputed) {
  const double w = 0.4;
  Matrix a(3, 3);
  a << 1.0, w, 0.0, w, 1.0, w, 0.0, w, 1.0;
  auto lap = random_walk_laplacian(make_affinity(a, 1.0, AffinityMode::dense));

  // Independent scalar assembly of I - Dn^{-1} D^{-1} A D^{-1}.
  double d[3] = {1.0 + w, 1.0 + 2.0 * w, 1.0 + w};
  double k[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) k[i][j] = a(i, j) / (d[i] * d[j]);
  double nd[3];
  for (int i = 0; i < 3; ++i) nd[i] = k[i][0] + k[i][1] + k[i][2];
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(lap.degrees(i), d[i], 1e-14);
    EXPECT_NEAR(lap.norm_degrees(i), nd[i], 1e-14);
    for (int j = 0; j < 3; ++j) {
      const double expect = (i == j ? 1.0 : 0.0) - k[i][j] / nd[i];
      EXPECT_NEAR(lap.lap_dense(i, j), expect, 1e-14);
    }
  }
}

TEST(Laplacian, CompleteGraphSpectrum) {
  // Equal-weight complete graph with self loops: Dn^{-1} K is the uniform
  // averaging matrix, so the Laplacian spectrum is {0, 1, 1, 1, 1}.
  const Index n = 5;
  Matrix a = Matrix::Constant(n, n, 0.7);
  auto lap = random_walk_laplacian(make_affinity(a, 1.0, AffinityMode::dense));
  Eigen::SelfAdjointEigenSolver<Matrix> es(lap.sym_dense());
  EXPECT_NEAR(es.eigenvalues()(0), 0.0, 1e-12);
  for (Index i = 1; i < n; ++i) EXPECT_NEAR(es.eigenvalues()(i), 1.0, 1e-12);
}

TEST(Laplacian, SymmetricSpectrumWithinZeroTwo) {
  auto cloud = random_cloud(2, 90, 53);
  auto graph = knn_graph(cloud, 5, false);
  auto lap = random_walk_laplacian(gaussian_affinity(cloud, &graph, 0.4, AffinityMode::knn_truncated));
  Eigen::SelfAdjointEigenSolver<Matrix> es(lap.sym_dense());
  EXPECT_GE(es.eigenvalues()(0), -1e-10);
  EXPECT_LE(es.eigenvalues()(cloud.n() - 1), 2.0 + 1e-10);
}

TEST(LaplacianDeviation, BasicCases) {
  Matrix a(2, 2), b(2, 2);
  a << 1.0, 0.3, 0.3, 1.0;
  auto la = random_walk_laplacian(make_affinity(a, 1.0, AffinityMode::dense));
  EXPECT_EQ(laplacian_deviation(la, la), 0.0);

  LaplacianOperator shifted = la;
  shifted.lap_dense(0, 1) += 0.25;
  EXPECT_NEAR(laplacian_deviation(la, shifted), 0.25, 1e-15);

  LaplacianOperator random_b = la;
  Rng rng(2);
  Matrix delta(2, 2);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) delta(i, j) = rng.uniform(-1.0, 1.0);
  random_b.lap_dense = la.lap_dense + delta;
  double expect = 0.0;
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) expect += delta(i, j) * delta(i, j);
  EXPECT_NEAR(laplacian_deviation(la, random_b), std::sqrt(expect), 1e-14);

  Matrix c = Matrix::Identity(3, 3);
  auto lc = random_walk_laplacian(make_affinity(c, 1.0, AffinityMode::dense));
  EXPECT_THROW(laplacian_deviation(la, lc), InvalidArgumentError);
}

TEST(Sinkhorn, DoublyStochasticInputUnchanged) {
  Matrix w(3, 3);
  w << 0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5;
  auto out = sinkhorn_doubly_stochastic(make_affinity(w, 1.0, AffinityMode::dense), 1e-10, 100);
  EXPECT_LT((out.dense - w).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sinkhorn, TwoByTwoRowSums) {
  Matrix w(2, 2);
  w << 0.9, 0.2, 0.2, 0.4;
  auto out = sinkhorn_doubly_stochastic(make_affinity(w, 1.0, AffinityMode::dense), 1e-10, 500);
  EXPECT_LT((out.dense.rowwise().sum() - Vector::Ones(2)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((out.dense - out.dense.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sinkhorn, MatchesAlternatingNormalizationOracle) {
  Rng rng(11);
  const Index n = 10;
  Matrix w(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j <= i; ++j) w(i, j) = w(j, i) = rng.uniform(0.05, 1.0);

  auto out = sinkhorn_doubly_stochastic(make_affinity(w, 1.0, AffinityMode::dense), 1e-13, 5000);

  // Oracle: alternate exact row and column normalizations until stationary.
  Matrix m = w;
  for (int it = 0; it < 20000; ++it) {
    Vector r = m.rowwise().sum();
    m = r.cwiseInverse().asDiagonal() * m;
    Vector c = m.colwise().sum();
    m = m * c.cwiseInverse().asDiagonal();
    if ((m.rowwise().sum() - Vector::Ones(n)).cwiseAbs().maxCoeff() < 1e-14) break;
  }
  EXPECT_LT((out.dense - m).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Sinkhorn, ReportsResidualOnFailure) {
  Matrix w(2, 2);
  w << 0.9, 0.2, 0.2, 0.4;
  try {
    sinkhorn_doubly_stochastic(make_affinity(w, 1.0, AffinityMode::dense), 1e-12, 1);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.residual, 1e-12);
  }
}

TEST(Sinkhorn, SparseModeAgreesWithDense) {
  auto cloud = random_cloud(2, 40, 71);
  auto graph = knn_graph(cloud, 6, false);
  auto aff = gaussian_affinity(cloud, &graph, 0.6, AffinityMode::knn_truncated);
  auto ds_sparse = sinkhorn_doubly_stochastic(aff, 1e-10, 5000);
  auto ds_dense = sinkhorn_doubly_stochastic(
      make_affinity(aff.to_dense(), 0.6, AffinityMode::dense), 1e-10, 5000);
  EXPECT_LT((ds_sparse.to_dense() - ds_dense.dense).cwiseAbs().maxCoeff(), 1e-8);
}
