#pragma once

// Tangent frame extraction: the gradient-based estimator and the local-PCA
// baseline, each with either a fixed dimension or a variance-threshold rule.

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "lego/common.hpp"
#include "lego/dataset.hpp"
#include "lego/gradients.hpp"
#include "lego/graph.hpp"
#include "lego/spectral.hpp"

namespace lego {

enum class FrameMethod { lego, lpca };

struct DimPolicy {
  enum class Kind { fixed, threshold };
  Kind kind = Kind::fixed;
  int d = 2;
  double f_var = 0.95;

  static DimPolicy fixed(int d) {
    DimPolicy p;
    p.kind = Kind::fixed;
    p.d = d;
    return p;
  }
  static DimPolicy threshold(double f_var) {
    DimPolicy p;
    p.kind = Kind::threshold;
    p.f_var = f_var;
    return p;
  }
};

struct FrameHyperparams {
  Index k_nn = 0;
  int m = 0;
  int m0 = 0;
  DimPolicy policy;
};

struct TangentFrameSet {
  std::vector<Matrix> frames;            // per point p x d_j, orthonormal columns
  std::vector<Index> dims;               // d_j
  std::vector<Vector> singular_profiles; // length p, descending, sums to 1
  FrameMethod method = FrameMethod::lego;
  FrameHyperparams hyperparams;

  Index n() const { return static_cast<Index>(frames.size()); }
};

namespace detail {

inline void validate_policy(const DimPolicy& policy, Index p) {
  if (policy.kind == DimPolicy::Kind::fixed) {
    if (policy.d < 1 || policy.d > p)
      throw InvalidArgumentError("dim policy: fixed d must lie in [1, p]");
  } else if (!(policy.f_var > 0.0 && policy.f_var < 1.0)) {
    throw InvalidArgumentError("dim policy: f_var must lie in (0,1)");
  }
}

// Shared tail of both methods: given descending direction columns and their
// squared weights, record the normalized profile and cut the frame.
inline void finish_frame(TangentFrameSet& out, Index j, const Matrix& directions,
                         const Vector& squared, const DimPolicy& policy) {
  const Index p = directions.rows();
  Vector profile = Vector::Zero(p);
  profile.head(squared.size()) = squared.cwiseMax(0.0);
  const double total = profile.sum();
  if (!(total > 0.0))
    throw DegenerateFrameError("frames: all singular values vanish", j);
  profile /= total;

  Index d = 0;
  if (policy.kind == DimPolicy::Kind::fixed) {
    d = policy.d;
  } else {
    double cum = 0.0;
    for (Index s = 0; s < p; ++s) {
      cum += profile(s);
      if (cum >= policy.f_var) {
        d = s + 1;
        break;
      }
    }
    if (d == 0) d = p;  // guard against accumulated rounding
  }

  Matrix frame = directions.leftCols(d);
  for (Index c = 0; c < frame.cols(); ++c) fix_sign(frame.col(c));
  out.frames[j] = std::move(frame);
  out.dims[j] = d;
  out.singular_profiles[j] = std::move(profile);
}

}  // namespace detail

inline TangentFrameSet lego_frames(const PointCloud& cloud, const NeighborhoodGraph& graph,
                                   const SpectralBasis& basis, int m,
                                   const DimPolicy& policy) {
  detail::validate_policy(policy, cloud.p());
  auto patches = center_patches(cloud, graph);
  auto field = estimate_gradients(patches, basis, m);

  const Index n = cloud.n();
  TangentFrameSet out;
  out.method = FrameMethod::lego;
  out.hyperparams = {graph.k_nn, m, static_cast<int>(basis.m0), policy};
  out.frames.resize(n);
  out.dims.resize(n);
  out.singular_profiles.resize(n);
  parallel_for(0, n, [&](Index j) {
    Eigen::JacobiSVD<Matrix> svd(field.field[j], Eigen::ComputeFullU);
    detail::finish_frame(out, j, svd.matrixU(), svd.singularValues().cwiseAbs2(), policy);
  });
  return out;
}

inline TangentFrameSet lpca_frames(const PointCloud& cloud, const NeighborhoodGraph& graph,
                                   const DimPolicy& policy) {
  detail::validate_policy(policy, cloud.p());
  if (graph.n() != cloud.n())
    throw InvalidArgumentError("lpca_frames: graph size does not match cloud");

  const Index n = cloud.n();
  const Index p = cloud.p();
  TangentFrameSet out;
  out.method = FrameMethod::lpca;
  out.hyperparams = {graph.k_nn, 0, 0, policy};
  out.frames.resize(n);
  out.dims.resize(n);
  out.singular_profiles.resize(n);
  parallel_for(0, n, [&](Index j) {
    const auto& nbrs = graph.neighbors[j];
    const Index k = static_cast<Index>(nbrs.size());
    Vector mu = Vector::Zero(p);
    for (Index s : nbrs) mu += cloud.points.col(s);
    mu /= double(k);
    Matrix cov = Matrix::Zero(p, p);
    for (Index s : nbrs) {
      const Vector off = cloud.points.col(s) - mu;
      cov += off * off.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    Matrix directions(p, p);
    Vector weights(p);
    for (Index s = 0; s < p; ++s) {  // flip to descending order
      directions.col(s) = es.eigenvectors().col(p - 1 - s);
      weights(s) = es.eigenvalues()(p - 1 - s);
    }
    detail::finish_frame(out, j, directions, weights, policy);
  });
  return out;
}

inline Vector functional_variance_profile(const TangentFrameSet& frames) {
  if (frames.n() == 0)
    throw InvalidArgumentError("functional_variance_profile: empty frame set");
  const Index p = frames.singular_profiles.front().size();
  for (Index j = 0; j < frames.n(); ++j)
    if (frames.dims[j] != p)
      throw InvalidArgumentError("functional_variance_profile: frames must use d = p");
  Vector mean = Vector::Zero(p);
  for (const Vector& prof : frames.singular_profiles) mean += prof;
  return mean / double(frames.n());
}

}  // namespace lego
