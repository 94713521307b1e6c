#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "lego/gradients.hpp"

using namespace lego;

namespace {

NeighborhoodGraph manual_graph(const Matrix& points,
                               std::vector<std::vector<Index>> neighbors) {
  NeighborhoodGraph g;
  g.k_nn = static_cast<Index>(neighbors.front().size());
  g.includes_self = false;
  g.neighbors = std::move(neighbors);
  g.distances.resize(g.neighbors.size());
  for (size_t j = 0; j < g.neighbors.size(); ++j)
    for (Index s : g.neighbors[j])
      g.distances[j].push_back((points.col(s) - points.col(j)).norm());
  return g;
}

PointCloud cloud_from(const Matrix& points) {
  PointCloud c;
  c.points = points;
  return c;
}

SpectralBasis strip_basis(const PointCloud& cloud, const NeighborhoodGraph& graph, int m0) {
  const double s = bandwidth_heuristic(graph);
  auto aff = gaussian_affinity(cloud, &graph, s, AffinityMode::knn_truncated);
  auto lap = random_walk_laplacian(aff);
  EigensolverOptions opts;
  opts.policy = SolverPolicy::dense;
  return smallest_eigenpairs(lap, m0, opts);
}

// Objective of the patch-weighted least squares for eigenvector i, evaluated
// at an arbitrary gradient field (p x n).
double weighted_objective(const std::vector<CenteredPatch>& patches,
                          const SpectralBasis& basis, const Matrix& grads, int i) {
  double acc = 0.0;
  for (const CenteredPatch& patch : patches) {
    const Index k = static_cast<Index>(patch.neighbors.size());
    Vector target(k);
    for (Index s = 0; s < k; ++s)
      target(s) = basis.phi(patch.neighbors[s], i) - basis.phi(patch.point, i);
    acc += (patch.offsets * grads.col(patch.point) - target).squaredNorm();
  }
  return acc;
}

Matrix field_slice(const GradientField& field, int i) {
  Matrix out(field.p(), field.n());
  for (Index j = 0; j < field.n(); ++j) out.col(j) = field.field[j].col(i);
  return out;
}

}  // namespace

TEST(Patches, HandComputedOneDimensional) {
  Matrix pts(1, 3);
  pts << 0.0, 1.0, 2.0;
  PointCloud cloud = cloud_from(pts);
  auto graph = manual_graph(pts, {{1, 2}, {0, 2}, {1, 0}});
  auto patches = center_patches(cloud, graph);
  Matrix expected(2, 1);
  expected << -1.0, 1.0;
  EXPECT_LT((patches[1].offsets - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(patches[1].pinv(0, 0), -0.5, 1e-15);
  EXPECT_NEAR(patches[1].pinv(0, 1), 0.5, 1e-15);
  EXPECT_EQ(patches[1].rank, 1);
}

TEST(Patches, OrthogonalRowsMatchNormalEquations) {
  Rng rng(7);
  Matrix raw(4, 3);
  for (Index i = 0; i < raw.size(); ++i) raw(i) = rng.normal();
  const Matrix q = lego::detail::thin_q(raw);  // 4x3 orthonormal columns
  const Vector scales = (Vector(3) << 2.0, 1.3, 0.7).finished();
  const Matrix xbar = scales.asDiagonal() * q.transpose();  // rows orthogonal

  Matrix pts = Matrix::Zero(4, 4);
  for (Index s = 0; s < 3; ++s) pts.col(s + 1) = xbar.row(s).transpose();
  PointCloud cloud = cloud_from(pts);
  auto graph = manual_graph(pts, {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}});
  auto patches = center_patches(cloud, graph);

  EXPECT_LT((patches[0].offsets - xbar).cwiseAbs().maxCoeff(), 1e-14);
  const Matrix oracle = xbar.transpose() * (xbar * xbar.transpose()).inverse();
  EXPECT_LT((patches[0].pinv - oracle).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Patches, CollinearNeighborsTruncateRank) {
  Matrix pts(2, 4);
  pts << 0.0, 1.0, 2.0, -1.0,
         0.0, 1.0, 2.0, -1.0;
  PointCloud cloud = cloud_from(pts);
  auto graph = manual_graph(pts, {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}});
  auto patches = center_patches(cloud, graph);
  EXPECT_EQ(patches[0].rank, 1);
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Vector y(3);
    for (Index s = 0; s < 3; ++s) y(s) = rng.normal();
    const Vector g = patches[0].pinv * y;
    EXPECT_LT(std::abs(g(0) - g(1)), 1e-12);  // image is span{(1,1)}
  }
  const Matrix& x = patches[0].offsets;
  EXPECT_LT((x * patches[0].pinv * x - x).norm(), 1e-8 * x.norm());
}

TEST(Patches, MoorePenroseIdentityOnStrip) {
  PointCloud cloud = gen_rectangle_strip(20, 5, 2.0, 0.4);
  auto graph = knn_graph(cloud, 6, false);
  auto patches = center_patches(cloud, graph);
  for (const CenteredPatch& patch : patches) {
    const Matrix& x = patch.offsets;
    EXPECT_LE(patch.rank, std::min<Index>(x.rows(), x.cols()));
    EXPECT_LT((x * patch.pinv * x - x).norm(), 1e-8 * x.norm());
  }
}

TEST(Patches, AllZeroPatchThrows) {
  Matrix pts(2, 5);
  pts << 0.0, 0.0, 0.0, 1.0, 2.0,
         0.0, 0.0, 0.0, 0.0, 0.0;
  PointCloud cloud = cloud_from(pts);
  auto graph = knn_graph(cloud, 2, false);
  try {
    center_patches(cloud, graph);
    FAIL() << "expected DegeneratePatchError";
  } catch (const DegeneratePatchError& e) {
    EXPECT_LE(e.point, 2);
  }
}

TEST(Patches, RejectsBadRcond) {
  PointCloud cloud = gen_rectangle_strip(10, 4, 1.0, 0.2);
  auto graph = knn_graph(cloud, 4, false);
  EXPECT_THROW(center_patches(cloud, graph, 0.0), InvalidArgumentError);
  EXPECT_THROW(center_patches(cloud, graph, 1.0), InvalidArgumentError);
}

TEST(Gradients, LinearFunctionOnFlatStrip) {
  PointCloud cloud = gen_rectangle_strip(30, 8, 3.0, 0.35);
  auto graph = knn_graph(cloud, 8, false);
  SpectralBasis basis = strip_basis(cloud, graph, 10);

  // Append a known linear function as an extra basis column.
  const Vector a = (Vector(2) << 0.7, -0.4).finished();
  SpectralBasis aug;
  aug.m0 = basis.m0 + 1;
  aug.phi.resize(cloud.n(), aug.m0);
  aug.phi.leftCols(basis.m0) = basis.phi;
  aug.phi.col(basis.m0) = cloud.points.transpose() * a;
  aug.u_phi = lego::detail::thin_q(aug.phi);
  aug.eigenvalues = Vector::Zero(aug.m0);

  auto patches = center_patches(cloud, graph);
  auto field = estimate_gradients(patches, aug, aug.m0);

  const double dx = 3.0 / 29.0;
  const double dy = 0.7 / 7.0;
  int interior = 0;
  for (Index j = 0; j < cloud.n(); ++j) {
    const Vector& xy = cloud.clean[j].params;
    if (xy(0) < 2 * dx || xy(0) > 3.0 - 2 * dx) continue;
    if (std::abs(xy(1)) > 0.35 - 2 * dy) continue;
    ++interior;
    const Vector got = field.field[j].col(basis.m0);
    EXPECT_LT((got - a).norm(), 0.05 * a.norm()) << "point " << j;
  }
  EXPECT_GT(interior, 50);
}

TEST(Gradients, ConstantEigenvectorHasZeroGradient) {
  PointCloud cloud = gen_rectangle_strip(16, 5, 2.0, 0.4);
  auto graph = knn_graph(cloud, 6, false);
  SpectralBasis basis = strip_basis(cloud, graph, 6);
  auto patches = center_patches(cloud, graph);
  auto field = estimate_gradients(patches, basis, 1);
  const double scale = basis.phi.col(0).cwiseAbs().maxCoeff();
  for (Index j = 0; j < cloud.n(); ++j)
    EXPECT_LT(field.field[j].norm(), 1e-6 * scale);
}

TEST(Gradients, ProjectionIdempotentAndFinite) {
  PointCloud cloud = gen_wave_on_circle(200, 0.1, 8, 5);
  auto graph = knn_graph(cloud, 6, false);
  SpectralBasis basis = strip_basis(cloud, graph, 8);
  auto patches = center_patches(cloud, graph);
  auto field = estimate_gradients(patches, basis, 5);
  for (int i = 0; i < 5; ++i) {
    const Matrix d = field_slice(field, i);
    EXPECT_TRUE(d.allFinite());
    const Matrix reproj = (d * basis.u_phi) * basis.u_phi.transpose();
    EXPECT_LT((reproj - d).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Gradients, CoefficientsMatchLeastSquaresOracle) {
  PointCloud cloud = gen_wave_on_circle(200, 0.1, 8, 5);
  auto graph = knn_graph(cloud, 6, false);
  SpectralBasis basis = strip_basis(cloud, graph, 8);
  auto patches = center_patches(cloud, graph);
  const int m = 4;
  auto field = estimate_gradients(patches, basis, m);

  // Raw solves recomputed here, then the projection coefficients resolved by
  // an independent QR least-squares route.
  for (int i = 0; i < m; ++i) {
    Matrix raw(cloud.p(), cloud.n());
    for (Index j = 0; j < cloud.n(); ++j) {
      const CenteredPatch& patch = patches[j];
      Vector centered(patch.neighbors.size());
      for (size_t s = 0; s < patch.neighbors.size(); ++s)
        centered(s) = basis.phi(patch.neighbors[s], i) - basis.phi(j, i);
      raw.col(j) = patch.pinv * centered;
    }
    const Matrix theta = field_slice(field, i) * basis.u_phi;
    Matrix oracle(theta.rows(), theta.cols());
    Eigen::ColPivHouseholderQR<Matrix> qr(basis.u_phi);
    for (Index r = 0; r < raw.rows(); ++r)
      oracle.row(r) = qr.solve(raw.row(r).transpose()).transpose();
    EXPECT_LT((theta - oracle).cwiseAbs().maxCoeff(), 1e-10 * (1.0 + theta.cwiseAbs().maxCoeff()));
  }
}

TEST(Gradients, NoDescentDirectionOnUniformPatches) {
  // With identical well-conditioned offset matrices across points, the closed
  // form minimizes the patch-weighted objective exactly, so no coordinate
  // perturbation of the coefficients may lower it.
  const Index n = 40, k = 5, p = 3;
  const int m0 = 8;
  Rng rng(11);
  Matrix xbar(k, p);
  for (Index i = 0; i < xbar.size(); ++i) xbar(i) = rng.normal();
  Eigen::JacobiSVD<Matrix> svd(xbar, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector sv = (Vector(3) << 2.0, 1.5, 1.0).finished();
  xbar = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
  const Matrix pinv =
      svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();

  std::vector<CenteredPatch> patches(n);
  for (Index j = 0; j < n; ++j) {
    patches[j].offsets = xbar;
    patches[j].pinv = pinv;
    patches[j].rank = p;
    patches[j].point = j;
    for (Index s = 0; s < k; ++s) patches[j].neighbors.push_back((j + 1 + s) % n);
  }

  SpectralBasis basis;
  basis.m0 = m0;
  basis.phi.resize(n, m0);
  for (Index i = 0; i < basis.phi.size(); ++i) basis.phi(i) = rng.normal();
  basis.u_phi = lego::detail::thin_q(basis.phi);
  basis.eigenvalues = Vector::Zero(m0);

  auto field = estimate_gradients(patches, basis, m0);
  for (int i : {0, 3, 7}) {
    const Matrix grads = field_slice(field, i);
    const Matrix theta = grads * basis.u_phi;
    const double base = weighted_objective(patches, basis, grads, i);
    const double delta = 1e-3 * (theta.norm() + 1.0);
    for (Index r = 0; r < theta.rows(); ++r) {
      for (Index c = 0; c < theta.cols(); ++c) {
        for (double sign : {1.0, -1.0}) {
          Matrix pert = theta;
          pert(r, c) += sign * delta;
          const double j_pert =
              weighted_objective(patches, basis, pert * basis.u_phi.transpose(), i);
          EXPECT_GE(j_pert, base - 1e-6 * base);
        }
      }
    }
    for (int trial = 0; trial < 10; ++trial) {
      Matrix dir(theta.rows(), theta.cols());
      for (Index q = 0; q < dir.size(); ++q) dir(q) = rng.normal();
      dir *= delta / dir.norm();
      const double j_pert =
          weighted_objective(patches, basis, (theta + dir) * basis.u_phi.transpose(), i);
      EXPECT_GE(j_pert, base - 1e-6 * base);
    }
  }
}

TEST(Gradients, RotationEquivariance) {
  PointCloud cloud = gen_wave_on_circle(300, 0.1, 8, 9);
  auto graph = knn_graph(cloud, 6, false);
  SpectralBasis basis = strip_basis(cloud, graph, 8);
  auto patches = center_patches(cloud, graph);
  auto field = estimate_gradients(patches, basis, 5);

  const double angle = 0.83;
  Matrix rot(2, 2);
  rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  PointCloud rotated = cloud;
  rotated.points = rot * cloud.points;
  auto patches_rot = center_patches(rotated, graph);
  auto field_rot = estimate_gradients(patches_rot, basis, 5);

  double scale = 0.0, diff = 0.0;
  for (Index j = 0; j < cloud.n(); ++j) {
    scale = std::max(scale, field.field[j].cwiseAbs().maxCoeff());
    diff = std::max(diff, (field_rot.field[j] - rot * field.field[j]).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(diff, 1e-8 * scale);
}

TEST(Gradients, ScaleCovariance) {
  PointCloud cloud = gen_wave_on_circle(250, 0.1, 8, 21);
  auto graph = knn_graph(cloud, 6, false);
  SpectralBasis basis = strip_basis(cloud, graph, 8);
  auto patches = center_patches(cloud, graph);
  auto field = estimate_gradients(patches, basis, 5);

  const double alpha = 3.7;
  PointCloud scaled = cloud;
  scaled.points = alpha * cloud.points;
  auto patches_scaled = center_patches(scaled, graph);
  auto field_scaled = estimate_gradients(patches_scaled, basis, 5);

  double scale = 0.0, diff = 0.0;
  for (Index j = 0; j < cloud.n(); ++j) {
    scale = std::max(scale, field.field[j].cwiseAbs().maxCoeff());
    diff = std::max(diff,
                    (alpha * field_scaled.field[j] - field.field[j]).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(diff, 1e-10 * scale);
}

TEST(Gradients, DeepEigenvectorsLeakIntoNormalDirections) {
  PointCloud clean = gen_wave_on_circle(600, 0.1, 8, 31);
  NoiseSpec spec;
  spec.kind = NoiseKind::uniform_normal_interval;
  spec.level = 0.02;
  spec.seed = 77;
  PointCloud cloud = apply_noise(clean, spec);
  auto graph = knn_graph(cloud, 14, false);
  SpectralBasis basis = strip_basis(cloud, graph, 35);
  auto patches = center_patches(cloud, graph);
  auto field = estimate_gradients(patches, basis, 35);

  double frac_low = 0.0, frac_deep = 0.0;
  for (Index j = 0; j < cloud.n(); ++j) {
    const Matrix low = field.field[j].leftCols(5);
    const Matrix deep = field.field[j].middleCols(30, 5);
    const Vector& nu = cloud.clean[j].normal_frame;
    frac_low += (nu.transpose() * low).norm() / std::max(low.norm(), 1e-300);
    frac_deep += (nu.transpose() * deep).norm() / std::max(deep.norm(), 1e-300);
  }
  frac_low /= double(cloud.n());
  frac_deep /= double(cloud.n());
  EXPECT_LT(frac_low, frac_deep);
}

TEST(Gradients, RejectsBadM) {
  PointCloud cloud = gen_rectangle_strip(10, 4, 1.0, 0.2);
  auto graph = knn_graph(cloud, 4, false);
  SpectralBasis basis = strip_basis(cloud, graph, 6);
  auto patches = center_patches(cloud, graph);
  EXPECT_THROW(estimate_gradients(patches, basis, 7), InvalidArgumentError);
  EXPECT_THROW(estimate_gradients(patches, basis, 0), InvalidArgumentError);
}
