#pragma once

// Gradient estimation for the low-frequency eigenvectors: per-point local
// least squares against centered neighbor offsets, followed by a global
// projection of the coefficient matrices onto span(U_Phi).

#include <Eigen/Dense>
#include <algorithm>
#include <utility>
#include <vector>

#include "lego/common.hpp"
#include "lego/dataset.hpp"
#include "lego/graph.hpp"
#include "lego/spectral.hpp"

namespace lego {

struct CenteredPatch {
  Matrix offsets;                // k_nn x p, row s holds x_{j_s} - x_j
  Matrix pinv;                   // p x k_nn truncated pseudoinverse
  std::vector<Index> neighbors;  // patch member indices, same order as rows
  Index rank = 0;
  Index point = 0;
};

struct GradientField {
  std::vector<Matrix> field;  // per point p x m, column i = estimated grad of phi_i
  Index m = 0;
  Index m0 = 0;

  Index n() const { return static_cast<Index>(field.size()); }
  Index p() const { return field.empty() ? 0 : field.front().rows(); }
};

inline std::vector<CenteredPatch> center_patches(const PointCloud& cloud,
                                                 const NeighborhoodGraph& graph,
                                                 double rcond = 1e-8) {
  if (!(rcond > 0.0 && rcond < 1.0))
    throw InvalidArgumentError("center_patches: rcond must lie in (0,1)");
  if (graph.n() != cloud.n())
    throw InvalidArgumentError("center_patches: graph size does not match cloud");

  const Index n = cloud.n();
  const Index p = cloud.p();
  std::vector<CenteredPatch> patches(n);
  parallel_for(0, n, [&](Index j) {
    CenteredPatch& patch = patches[j];
    patch.point = j;
    patch.neighbors = graph.neighbors[j];
    const Index k = static_cast<Index>(patch.neighbors.size());
    patch.offsets.resize(k, p);
    for (Index s = 0; s < k; ++s)
      patch.offsets.row(s) = (cloud.points.col(patch.neighbors[s]) - cloud.points.col(j)).transpose();

    Eigen::JacobiSVD<Matrix> svd(patch.offsets, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sing = svd.singularValues();
    const double smax = sing.size() > 0 ? sing(0) : 0.0;
    if (smax <= 0.0)
      throw DegeneratePatchError("center_patches: all neighbor offsets vanish", j);
    Vector inv = Vector::Zero(sing.size());
    patch.rank = 0;
    for (Index i = 0; i < sing.size(); ++i) {
      if (sing(i) > rcond * smax) {
        inv(i) = 1.0 / sing(i);
        ++patch.rank;
      }
    }
    patch.pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  });
  return patches;
}

inline GradientField estimate_gradients(const std::vector<CenteredPatch>& patches,
                                        const SpectralBasis& basis, int m) {
  const Index n = static_cast<Index>(patches.size());
  if (n == 0) throw InvalidArgumentError("estimate_gradients: no patches");
  if (m < 1) throw InvalidArgumentError("estimate_gradients: m must be positive");
  if (m > basis.m0)
    throw InvalidArgumentError("estimate_gradients: m exceeds the basis size m0");
  if (basis.phi.rows() != n)
    throw InvalidArgumentError("estimate_gradients: basis does not match patches");

  const Index p = patches.front().pinv.rows();
  GradientField out;
  out.m = m;
  out.m0 = basis.m0;
  out.field.assign(n, Matrix());

  // Raw per-point solves, all m eigenvectors at once.
  std::vector<Matrix> raw(n);
  parallel_for(0, n, [&](Index j) {
    const CenteredPatch& patch = patches[j];
    const Index k = static_cast<Index>(patch.neighbors.size());
    Matrix centered(k, m);  // phi_i(N_j) - phi_i(j)
    for (Index s = 0; s < k; ++s)
      centered.row(s) =
          basis.phi.row(patch.neighbors[s]).head(m) - basis.phi.row(patch.point).head(m);
    raw[j] = patch.pinv * centered;  // p x m
    out.field[j].resize(p, m);
  });

  // Global projection: Theta_i = R_i U_Phi, grad_i = Theta_i U_Phi^T.
  Matrix r_i(p, n);
  for (int i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) r_i.col(j) = raw[j].col(i);
    const Matrix theta = r_i * basis.u_phi;
    const Matrix projected = theta * basis.u_phi.transpose();
    for (Index j = 0; j < n; ++j) out.field[j].col(i) = projected.col(j);
  }
  return out;
}

}  // namespace lego
