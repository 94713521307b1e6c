#pragma once

// Downstream consumers of tangent frames: local tangent-space views with
// rigid alignment into a global embedding, and kernel-based boundary
// detection.

#include "lego/graph.hpp"
#include "lego/tangent.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace lego {

struct AlignmentError : std::runtime_error {
  AlignmentError(const std::string& what, std::vector<std::vector<Index>> components_)
      : std::runtime_error(what), components(std::move(components_)) {}
  std::vector<std::vector<Index>> components;
};

struct LocalViews {
  // View j covers its graph neighbors plus the center point itself; the
  // coordinate columns line up with `members`.
  std::vector<std::vector<Index>> members;
  std::vector<Matrix> coords;  // d x members[j].size()
  std::vector<std::vector<Index>> containing;  // point k -> views covering k
  Index d = 0;

  Index n() const { return static_cast<Index>(members.size()); }
};

struct RigidAlignment {
  std::vector<Matrix> rotations;  // d x d, orthogonal
  std::vector<Vector> translations;
  double error = 0.0;  // mean squared deviation from the averaged embedding
  std::vector<double> error_history;  // after initialization, then per round
  std::vector<std::string> warnings;
};

struct BoundaryReport {
  Vector norms;
  double threshold = 0.0;
  double percentile = 90.0;
  std::vector<bool> labels;  // norms(j) > threshold, exactly
};

namespace detail {

// Least-squares rigid fit of source columns onto target columns over the
// full orthogonal group (reflections allowed).
inline std::pair<Matrix, Vector> procrustes_fit(const Matrix& source, const Matrix& target) {
  const Vector sbar = source.rowwise().mean();
  const Vector tbar = target.rowwise().mean();
  const Matrix cross = (target.colwise() - tbar) * (source.colwise() - sbar).transpose();
  Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix rot = svd.matrixU() * svd.matrixV().transpose();
  return {rot, tbar - rot * sbar};
}

inline Index uniform_view_dimension(const TangentFrameSet& frames, const char* who) {
  if (frames.n() == 0) throw InvalidArgumentError(std::string(who) + ": no frames");
  const Index d = frames.frames.front().cols();
  for (const auto& q : frames.frames)
    if (q.cols() != d)
      throw InvalidArgumentError(std::string(who) + ": frames must share one dimension");
  return d;
}

}  // namespace detail

// Projects every neighborhood onto its tangent frame: column s of view j is
// Q_j' (x_{j_s} - mu_j) with mu_j the mean over the view members. The center
// point is added to its own view so every point is covered by at least one
// view.
inline LocalViews build_local_views(const PointCloud& cloud, const NeighborhoodGraph& graph,
                                    const TangentFrameSet& frames) {
  const Index n = cloud.n();
  if (graph.n() != n || frames.n() != n)
    throw InvalidArgumentError("build_local_views: cloud, graph, and frames disagree on n");
  LocalViews views;
  views.d = detail::uniform_view_dimension(frames, "build_local_views");
  views.members.resize(n);
  views.coords.resize(n);
  views.containing.resize(n);
  parallel_for(0, n, [&](Index j) {
    auto& ids = views.members[j];
    ids = graph.neighbors[j];
    if (std::find(ids.begin(), ids.end(), j) == ids.end()) ids.push_back(j);
    Matrix pts(cloud.p(), ids.size());
    for (std::size_t s = 0; s < ids.size(); ++s) pts.col(s) = cloud.points.col(ids[s]);
    const Vector mu = pts.rowwise().mean();
    views.coords[j] = frames.frames[j].transpose() * (pts.colwise() - mu);
  });
  for (Index j = 0; j < n; ++j)
    for (Index k : views.members[j]) views.containing[k].push_back(j);
  return views;
}

namespace detail {

// Connected components of the view-overlap graph (views sharing a point).
inline std::vector<std::vector<Index>> overlap_components(const LocalViews& views) {
  const Index n = views.n();
  std::vector<Index> label(n, -1);
  std::vector<std::vector<Index>> components;
  for (Index seed = 0; seed < n; ++seed) {
    if (label[seed] >= 0) continue;
    std::vector<Index> comp;
    std::queue<Index> frontier;
    label[seed] = static_cast<Index>(components.size());
    frontier.push(seed);
    while (!frontier.empty()) {
      const Index j = frontier.front();
      frontier.pop();
      comp.push_back(j);
      for (Index k : views.members[j])
        for (Index other : views.containing[k])
          if (label[other] < 0) {
            label[other] = label[seed];
            frontier.push(other);
          }
    }
    std::sort(comp.begin(), comp.end());
    components.push_back(std::move(comp));
  }
  return components;
}

}  // namespace detail

// Rigidly aligns the local views into one global embedding: breadth-first
// Procrustes initialization over the view-overlap graph rooted at the view
// overlapping the most other views, then `iters` rounds alternating between
// averaging member positions and re-fitting each view to the averages. Both
// half-steps are exact minimizers, so the recorded error never increases.
inline std::pair<RigidAlignment, Matrix> align_views(const LocalViews& views, int iters = 20) {
  const Index n = views.n();
  const Index d = views.d;
  if (n == 0) throw InvalidArgumentError("align_views: no views");
  if (iters < 0) throw InvalidArgumentError("align_views: iters must be >= 0");

  auto components = detail::overlap_components(views);
  if (components.size() > 1) {
    std::ostringstream msg;
    msg << "align_views: overlap graph splits into " << components.size() << " components;"
        << " sizes";
    for (const auto& comp : components) msg << ' ' << comp.size();
    throw AlignmentError(msg.str(), std::move(components));
  }

  // Overlapping views per view with shared-point counts; degree picks the
  // root. Fits through overlaps of at least d+1 points determine the rigid
  // transform; smaller overlaps are kept only as a fallback.
  std::vector<std::vector<std::pair<Index, Index>>> adjacent(n);  // (other, count)
  for (Index j = 0; j < n; ++j) {
    std::vector<Index> hits;
    for (Index k : views.members[j])
      hits.insert(hits.end(), views.containing[k].begin(), views.containing[k].end());
    std::sort(hits.begin(), hits.end());
    auto& adj = adjacent[j];
    for (std::size_t s = 0; s < hits.size();) {
      std::size_t e = s;
      while (e < hits.size() && hits[e] == hits[s]) ++e;
      if (hits[s] != j) adj.emplace_back(hits[s], static_cast<Index>(e - s));
      s = e;
    }
  }
  Index root = 0;
  for (Index j = 1; j < n; ++j)
    if (adjacent[j].size() > adjacent[root].size()) root = j;

  RigidAlignment alignment;
  alignment.rotations.assign(n, Matrix::Identity(d, d));
  alignment.translations.assign(n, Vector::Zero(d));

  // Column index of each point inside a view, for overlap extraction.
  auto column_of = [&](Index view, Index point) -> Index {
    const auto& ids = views.members[view];
    return static_cast<Index>(std::find(ids.begin(), ids.end(), point) - ids.begin());
  };

  std::vector<char> placed(n, 0);
  auto place_child = [&](Index child, Index parent) {
    std::vector<Index> shared;
    for (Index k : views.members[child])
      if (column_of(parent, k) < static_cast<Index>(views.members[parent].size()))
        shared.push_back(k);
    Matrix source(d, shared.size()), target(d, shared.size());
    for (std::size_t s = 0; s < shared.size(); ++s) {
      source.col(s) = views.coords[child].col(column_of(child, shared[s]));
      target.col(s) = alignment.rotations[parent] *
                          views.coords[parent].col(column_of(parent, shared[s])) +
                      alignment.translations[parent];
    }
    if (static_cast<Index>(shared.size()) < d + 1) {
      std::ostringstream warn;
      warn << "align_views: views " << child << " and " << parent << " share only "
           << shared.size() << " points; rotation under-determined";
      alignment.warnings.push_back(warn.str());
    }
    auto [rot, shift] = detail::procrustes_fit(source, target);
    alignment.rotations[child] = rot;
    alignment.translations[child] = shift;
    placed[child] = 1;
  };

  placed[root] = 1;
  std::queue<Index> frontier;
  frontier.push(root);
  std::vector<std::pair<Index, Index>> ordered;  // (count, child), per parent
  while (!frontier.empty()) {
    const Index parent = frontier.front();
    frontier.pop();
    ordered.clear();
    for (const auto& [child, count] : adjacent[parent])
      if (!placed[child] && count >= d + 1) ordered.emplace_back(count, child);
    std::sort(ordered.begin(), ordered.end(),
              [](const auto& a, const auto& b) {
                return a.first != b.first ? a.first > b.first : a.second < b.second;
              });
    for (const auto& [count, child] : ordered) {
      place_child(child, parent);
      frontier.push(child);
    }
  }

  // Views reachable only through overlaps too small to pin down a rotation:
  // attach each through the largest overlap available, best first.
  while (true) {
    Index best_child = -1, best_parent = -1, best_count = 0;
    for (Index parent = 0; parent < n; ++parent) {
      if (!placed[parent]) continue;
      for (const auto& [child, count] : adjacent[parent])
        if (!placed[child] && count > best_count) {
          best_child = child;
          best_parent = parent;
          best_count = count;
        }
    }
    if (best_child < 0) break;
    place_child(best_child, best_parent);
    // The weakly attached view may unlock strong overlaps again.
    std::queue<Index> rescue;
    rescue.push(best_child);
    while (!rescue.empty()) {
      const Index parent = rescue.front();
      rescue.pop();
      ordered.clear();
      for (const auto& [child, count] : adjacent[parent])
        if (!placed[child] && count >= d + 1) ordered.emplace_back(count, child);
      std::sort(ordered.begin(), ordered.end(),
                [](const auto& a, const auto& b) {
                  return a.first != b.first ? a.first > b.first : a.second < b.second;
                });
      for (const auto& [count, child] : ordered) {
        place_child(child, parent);
        rescue.push(child);
      }
    }
  }

  const Index npoints = static_cast<Index>(views.containing.size());
  Matrix embedding = Matrix::Zero(npoints, d);
  auto average_positions = [&]() {
    embedding.setZero();
    for (Index j = 0; j < n; ++j) {
      const auto& ids = views.members[j];
      for (std::size_t s = 0; s < ids.size(); ++s)
        embedding.row(ids[s]) +=
            (alignment.rotations[j] * views.coords[j].col(s) + alignment.translations[j])
                .transpose();
    }
    for (Index k = 0; k < npoints; ++k)
      if (!views.containing[k].empty()) embedding.row(k) /= double(views.containing[k].size());
  };
  auto alignment_error = [&]() {
    double err = 0.0;
    std::size_t count = 0;
    for (Index j = 0; j < n; ++j) {
      const auto& ids = views.members[j];
      for (std::size_t s = 0; s < ids.size(); ++s) {
        const Vector placed_pt =
            alignment.rotations[j] * views.coords[j].col(s) + alignment.translations[j];
        err += (placed_pt - embedding.row(ids[s]).transpose()).squaredNorm();
      }
      count += ids.size();
    }
    return err / double(count);
  };

  average_positions();
  alignment.error_history.push_back(alignment_error());
  for (int round = 0; round < iters; ++round) {
    parallel_for(0, n, [&](Index j) {
      const auto& ids = views.members[j];
      Matrix target(d, ids.size());
      for (std::size_t s = 0; s < ids.size(); ++s)
        target.col(s) = embedding.row(ids[s]).transpose();
      auto [rot, shift] = detail::procrustes_fit(views.coords[j], target);
      alignment.rotations[j] = rot;
      alignment.translations[j] = shift;
    });
    average_positions();
    alignment.error_history.push_back(alignment_error());
  }
  alignment.error = alignment.error_history.back();
  return {std::move(alignment), std::move(embedding)};
}

// Boundary statistic v_j = (1/(n-1)) sum_i K_ij Q_j' (x_i - x_j) under a
// doubly stochastic kernel: interior points cancel by symmetry, boundary
// points see a one-sided neighborhood and a large norm. Labels mark norms
// strictly above the requested percentile.
inline BoundaryReport detect_boundary(const PointCloud& cloud, const TangentFrameSet& frames,
                                      const Affinity& ds_kernel, double percentile = 90.0) {
  const Index n = cloud.n();
  if (frames.n() != n || ds_kernel.n() != n)
    throw InvalidArgumentError("detect_boundary: cloud, frames, and kernel disagree on n");
  if (!(percentile > 0.0 && percentile < 100.0))
    throw InvalidArgumentError("detect_boundary: percentile must lie in (0, 100)");
  if (n < 2) throw InvalidArgumentError("detect_boundary: need at least two points");
  detail::uniform_view_dimension(frames, "detect_boundary");
  const Vector sums = ds_kernel.row_sums();
  if ((sums - Vector::Ones(n)).cwiseAbs().maxCoeff() > 1e-4)
    throw InvalidArgumentError("detect_boundary: kernel is not doubly stochastic");

  BoundaryReport report;
  report.percentile = percentile;
  report.norms = Vector::Zero(n);
  parallel_for(0, n, [&](Index j) {
    Vector weighted = Vector::Zero(cloud.p());
    if (ds_kernel.is_dense()) {
      for (Index i = 0; i < n; ++i)
        weighted += ds_kernel.dense(i, j) * (cloud.points.col(i) - cloud.points.col(j));
    } else {
      for (SparseMatrix::InnerIterator it(ds_kernel.sparse, j); it; ++it)
        weighted += it.value() * (cloud.points.col(it.row()) - cloud.points.col(j));
    }
    weighted /= double(n - 1);
    report.norms(j) = (frames.frames[j].transpose() * weighted).norm();
  });
  std::vector<double> vals(report.norms.data(), report.norms.data() + n);
  report.threshold = quantile(vals, percentile / 100.0);
  report.labels.resize(n);
  for (Index j = 0; j < n; ++j) report.labels[j] = report.norms(j) > report.threshold;
  return report;
}

}  // namespace lego
