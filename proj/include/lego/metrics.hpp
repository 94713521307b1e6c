#pragma once

// Evaluation metrics: principal-angle discrepancy against ground-truth
// frames, horizontal/vertical gradient-energy splits on tube-like data, and
// the closed-form rectangle modes used as oracles for both.

#include "lego/gradients.hpp"
#include "lego/tangent.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace lego {

struct DiscrepancyReport {
  Vector per_point;  // D_j >= 0, one entry per point
  double mean = 0.0;
  double median = 0.0;
  double p90 = 0.0;
  FrameMethod method = FrameMethod::lego;
  FrameHyperparams hyperparams;
};

struct EnergySplit {
  // (horizontal_fraction, vertical_fraction) per measured eigenvector; the
  // two entries of each pair sum to 1.
  std::vector<std::pair<double, double>> per_eigenvector;
  std::vector<Index> indices;
};

namespace detail {

inline void require_orthonormal(const Matrix& q, const char* who) {
  if (q.cols() == 0 || q.cols() > q.rows())
    throw InvalidArgumentError(std::string(who) + ": frame shape is not p x d with 1 <= d <= p");
  const Matrix gram = q.transpose() * q - Matrix::Identity(q.cols(), q.cols());
  if (gram.cwiseAbs().maxCoeff() > 1e-6)
    throw InvalidArgumentError(std::string(who) + ": columns are not orthonormal");
}

}  // namespace detail

// Principal angles between the column spans of q1 and q2, in radians,
// ascending, length min(d1, d2). Cosines are the singular values of q1' q2,
// clamped to [0, 1] before arccos to absorb floating-point overshoot.
inline Vector principal_angles(const Matrix& q1, const Matrix& q2) {
  if (q1.rows() != q2.rows())
    throw InvalidArgumentError("principal_angles: ambient dimensions differ");
  detail::require_orthonormal(q1, "principal_angles");
  detail::require_orthonormal(q2, "principal_angles");
  Eigen::JacobiSVD<Matrix> svd(q1.transpose() * q2);
  Vector angles = svd.singularValues();
  for (Index i = 0; i < angles.size(); ++i)
    angles(i) = std::acos(std::clamp(angles(i), 0.0, 1.0));
  return angles;
}

// D_j = sum_i (1 - cos(theta_{j,i})) over the min(d_est, d_true) principal
// angles, plus a unit penalty for every true tangent dimension the estimate
// fails to provide, so 0 <= D_j <= d_true always holds.
inline DiscrepancyReport discrepancy(const TangentFrameSet& est,
                                     const std::vector<CleanSample>& truth) {
  const Index n = est.n();
  if (static_cast<Index>(truth.size()) != n)
    throw InvalidArgumentError("discrepancy: estimate and truth differ in point count");
  DiscrepancyReport report;
  report.per_point = Vector::Zero(n);
  report.method = est.method;
  report.hyperparams = est.hyperparams;
  parallel_for(0, n, [&](Index j) {
    const Matrix& q = est.frames[j];
    const Matrix& t = truth[j].tangent_frame;
    const Vector angles = principal_angles(q, t);
    double score = 0.0;
    for (Index i = 0; i < angles.size(); ++i) score += 1.0 - std::cos(angles(i));
    if (t.cols() > q.cols()) score += double(t.cols() - q.cols());
    report.per_point(j) = score;
  });
  std::vector<double> scores(report.per_point.data(), report.per_point.data() + n);
  report.mean = report.per_point.mean();
  report.median = quantile(scores, 0.5);
  report.p90 = quantile(scores, 0.9);
  return report;
}

// Per eigenvector, the share of squared gradient mass falling along the true
// normal directions, accumulated over all points. `indices` selects which
// eigenvectors to measure; empty means all of them.
inline EnergySplit vertical_energy_split(const GradientField& field,
                                         const std::vector<CleanSample>& truth,
                                         std::vector<Index> indices = {}) {
  const Index n = field.n();
  if (n == 0) throw InvalidArgumentError("vertical_energy_split: empty gradient field");
  if (static_cast<Index>(truth.size()) != n)
    throw InvalidArgumentError("vertical_energy_split: field and truth differ in point count");
  if (indices.empty())
    for (Index i = 0; i < field.m; ++i) indices.push_back(i);
  for (Index i : indices)
    if (i < 0 || i >= field.m)
      throw InvalidArgumentError("vertical_energy_split: eigenvector index out of range");
  for (Index j = 0; j < n; ++j)
    if (truth[j].normal_frame.cols() == 0 || truth[j].normal_frame.rows() != field.p())
      throw InvalidArgumentError("vertical_energy_split: missing or mismatched normal frames");
  EnergySplit split;
  split.indices = indices;
  split.per_eigenvector.reserve(indices.size());
  for (Index i : indices) {
    double total = 0.0;
    double vertical = 0.0;
    for (Index j = 0; j < n; ++j) {
      const Vector g = field.field[j].col(i);
      total += g.squaredNorm();
      vertical += (truth[j].normal_frame.transpose() * g).squaredNorm();
    }
    if (!(total > 0.0))
      throw InvalidArgumentError("vertical_energy_split: eigenvector has zero gradient energy");
    vertical = std::min(vertical, total);
    split.per_eigenvector.emplace_back((total - vertical) / total, vertical / total);
  }
  return split;
}

// Central-difference gradients (one-sided at lattice borders) of the columns
// of `values` on the rectangle-strip lattice, packaged as a GradientField so
// the energy split can consume analytic mode samples as easily as estimated
// spectral gradients.
inline GradientField strip_finite_difference_gradients(const PointCloud& strip,
                                                       const Matrix& values) {
  for (const char* key : {"grid_x", "grid_y", "length", "halfwidth"})
    if (!strip.meta.count(key))
      throw InvalidArgumentError("strip_finite_difference_gradients: cloud lacks strip lattice metadata");
  const Index gx = static_cast<Index>(strip.meta.at("grid_x"));
  const Index gy = static_cast<Index>(strip.meta.at("grid_y"));
  if (gx * gy != strip.n() || values.rows() != strip.n())
    throw InvalidArgumentError("strip_finite_difference_gradients: lattice shape mismatch");
  const double dx = strip.meta.at("length") / double(gx - 1);
  const double dy = 2.0 * strip.meta.at("halfwidth") / double(gy - 1);
  GradientField out;
  out.m = static_cast<int>(values.cols());
  out.m0 = out.m;
  out.field.assign(strip.n(), Matrix::Zero(2, values.cols()));
  auto at = [&](Index ix, Index iy) { return ix * gy + iy; };
  for (Index ix = 0; ix < gx; ++ix) {
    for (Index iy = 0; iy < gy; ++iy) {
      const Index lo_x = std::max<Index>(ix - 1, 0), hi_x = std::min(ix + 1, gx - 1);
      const Index lo_y = std::max<Index>(iy - 1, 0), hi_y = std::min(iy + 1, gy - 1);
      out.field[at(ix, iy)].row(0) =
          (values.row(at(hi_x, iy)) - values.row(at(lo_x, iy))) / (double(hi_x - lo_x) * dx);
      out.field[at(ix, iy)].row(1) =
          (values.row(at(ix, hi_y)) - values.row(at(ix, lo_y))) / (double(hi_y - lo_y) * dy);
    }
  }
  return out;
}

struct RectangleMode {
  double eigenvalue = 0.0;
  Vector samples;  // lattice samples, y-fastest like gen_rectangle_strip
  double normalized_horizontal = 0.0;
  double normalized_vertical = 0.0;
};

// Closed-form Neumann mode cos(i pi x / l) * cos(j pi (y + h) / (2h)) of the
// rectangle [0, l] x [-h, h], with Laplacian eigenvalue
// (i pi / l)^2 + (j pi / (2h))^2, sampled on the gen_rectangle_strip lattice.
// The normalized horizontal/vertical energies of the mode are i^2 and j^2.
inline RectangleMode rectangle_mode_oracle(double l, double halfwidth, int i, int j,
                                           Index grid_x, Index grid_y) {
  if (!(l > 0.0 && halfwidth > 0.0))
    throw InvalidArgumentError("rectangle_mode_oracle: need positive extents");
  if (i < 0 || j < 0)
    throw InvalidArgumentError("rectangle_mode_oracle: mode numbers must be nonnegative");
  if (grid_x < 2 || grid_y < 2)
    throw InvalidArgumentError("rectangle_mode_oracle: need at least a 2x2 lattice");
  RectangleMode mode;
  const double ki = double(i) * M_PI / l;
  const double kj = double(j) * M_PI / (2.0 * halfwidth);
  mode.eigenvalue = ki * ki + kj * kj;
  mode.normalized_horizontal = double(i) * double(i);
  mode.normalized_vertical = double(j) * double(j);
  mode.samples.resize(grid_x * grid_y);
  Index s = 0;
  for (Index ix = 0; ix < grid_x; ++ix) {
    const double x = l * double(ix) / double(grid_x - 1);
    for (Index iy = 0; iy < grid_y; ++iy, ++s) {
      const double y = -halfwidth + 2.0 * halfwidth * double(iy) / double(grid_y - 1);
      mode.samples(s) = std::cos(ki * x) * std::cos(kj * (y + halfwidth));
    }
  }
  return mode;
}

}  // namespace lego
