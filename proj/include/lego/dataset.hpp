#pragma once

// Synthetic manifold generators with analytic tangent/normal frames, plus the
// normal-direction noise models applied on top of them.

#include "lego/common.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace lego {

struct InvalidStateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CleanSample {
  Vector point;          // length p
  Matrix tangent_frame;  // p x d, orthonormal columns
  Matrix normal_frame;   // p x (p-d), orthonormal columns
  Vector params;         // intrinsic coordinates of the sample
};

struct PointCloud {
  Matrix points;  // p x n, one column per point
  std::vector<CleanSample> clean;
  std::uint64_t seed = 0;
  std::string name;
  std::map<std::string, double> meta;

  Index n() const { return points.cols(); }
  Index p() const { return points.rows(); }
  bool has_clean() const { return !clean.empty(); }
  Index intrinsic_dim() const {
    if (!has_clean()) throw InvalidStateError("intrinsic_dim: no clean samples attached");
    return clean.front().tangent_frame.cols();
  }
};

enum class NoiseKind {
  uniform_normal_interval,
  heteroskedastic_normal_interval,
  uniform_ball_normal,
  isotropic_gaussian,
};

// `level` is the global noise scale. For the heteroskedastic kind the
// per-point bound is level * level_fn(params), so sweeping `level` in [0,1]
// with level_fn fixed at the nominal profile scans noise from zero to the
// nominal amplitude without changing the underlying random draws.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::uniform_normal_interval;
  double level = 0.0;
  std::function<double(const Vector&)> level_fn;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Closed-form parametrizations (exposed so tests can finite-difference them)
// ---------------------------------------------------------------------------

inline Vector wave_on_circle_point(double t, double wave_amp, int wave_freq) {
  const double r = 1.0 + wave_amp * std::cos(wave_freq * t);
  Vector x(2);
  x << r * std::cos(t), r * std::sin(t);
  return x;
}

namespace detail {

// Arclength of the spiral r(theta) = theta/(4*pi) measured from theta0.
// ds/dtheta = sqrt(r'^2 + r^2) = sqrt(1 + theta^2)/(4*pi).
inline double spiral_arclength_antiderivative(double theta) {
  return (theta * std::sqrt(1.0 + theta * theta) + std::asinh(theta)) / (8.0 * M_PI);
}

constexpr double kSpiralThetaMin = M_PI;
constexpr double kSpiralThetaMax = 5.0 * M_PI;

inline double spiral_arclength(double theta) {
  return spiral_arclength_antiderivative(theta) -
         spiral_arclength_antiderivative(kSpiralThetaMin);
}

// Inverts spiral_arclength by safeguarded Newton iteration.
inline double spiral_theta_at_arclength(double s) {
  double lo = kSpiralThetaMin, hi = kSpiralThetaMax;
  const double total = spiral_arclength(hi);
  double theta = lo + (hi - lo) * std::min(1.0, std::max(0.0, s / total));
  for (int it = 0; it < 100; ++it) {
    const double f = spiral_arclength(theta) - s;
    if (f > 0)
      hi = theta;
    else
      lo = theta;
    const double deriv = std::sqrt(1.0 + theta * theta) / (4.0 * M_PI);
    double next = theta - f / deriv;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - theta) < 1e-15 * (1.0 + std::abs(theta))) return next;
    theta = next;
  }
  return theta;
}

// Inverse CDF of the wave-on-circle sampling density 1 + 0.5*sin(t) on
// [0, 2*pi); F(t) = (t + 0.5*(1 - cos t)) / (2*pi).
inline double wave_parameter_at_quantile(double u) {
  double lo = 0.0, hi = 2.0 * M_PI;
  double t = 2.0 * M_PI * u;
  for (int it = 0; it < 100; ++it) {
    const double f = (t + 0.5 * (1.0 - std::cos(t))) / (2.0 * M_PI) - u;
    if (f > 0)
      hi = t;
    else
      lo = t;
    const double deriv = (1.0 + 0.5 * std::sin(t)) / (2.0 * M_PI);
    double next = t - f / deriv;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) < 1e-15 * (1.0 + std::abs(t))) return next;
    t = next;
  }
  return t;
}

}  // namespace detail

inline double swiss_roll_total_arclength() {
  return detail::spiral_arclength(detail::kSpiralThetaMax);
}

// Point on the roll addressed by the isometric chart (s, y): s is arclength
// along the spiral, y the height.
inline Vector swiss_roll_point(double s, double y) {
  const double theta = detail::spiral_theta_at_arclength(s);
  const double r = theta / (4.0 * M_PI);
  Vector x(3);
  x << r * std::cos(theta), r * std::sin(theta), y;
  return x;
}

inline Vector torus_point(double u, double v, double R, double r_minor) {
  Vector x(3);
  x << (R + r_minor * std::cos(v)) * std::cos(u),
      (R + r_minor * std::cos(v)) * std::sin(u), r_minor * std::sin(v);
  return x;
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

// Closed curve r(t) = 1 + wave_amp*cos(wave_freq*t) sampled with density
// proportional to 1 + 0.5*sin(t).
inline PointCloud gen_wave_on_circle(Index n, double wave_amp, int wave_freq,
                                     std::uint64_t seed) {
  if (n < 8) throw InvalidArgumentError("gen_wave_on_circle: need n >= 8");
  PointCloud cloud;
  cloud.name = "wave_on_circle";
  cloud.seed = seed;
  cloud.meta = {{"n", double(n)}, {"wave_amp", wave_amp}, {"wave_freq", double(wave_freq)}};
  cloud.points.resize(2, n);
  cloud.clean.resize(n);
  Rng rng(seed);
  for (Index j = 0; j < n; ++j) {
    const double t = detail::wave_parameter_at_quantile(rng.uniform());
    const double r = 1.0 + wave_amp * std::cos(wave_freq * t);
    const double rp = -wave_amp * wave_freq * std::sin(wave_freq * t);
    Vector x = wave_on_circle_point(t, wave_amp, wave_freq);
    Vector tan(2);
    tan << rp * std::cos(t) - r * std::sin(t), rp * std::sin(t) + r * std::cos(t);
    tan.normalize();
    Vector nor(2);
    nor << tan(1), -tan(0);
    CleanSample& cs = cloud.clean[j];
    cs.point = x;
    cs.tangent_frame = tan;
    cs.normal_frame = nor;
    cs.params = Vector::Constant(1, t);
    cloud.points.col(j) = x;
  }
  return cloud;
}

// Spiral r(theta) = theta/(4*pi), theta in [pi, 5*pi], extruded to height
// aspect * arclength; sampling is area-uniform via the arclength chart.  The
// default aspect keeps the sheet much longer than it is tall, which is the
// regime where truncated spectral bases interact non-trivially with the
// second intrinsic direction.
inline PointCloud gen_swiss_roll(Index n, double aspect = 0.04, std::uint64_t seed = 0) {
  if (n < 16) throw InvalidArgumentError("gen_swiss_roll: need n >= 16");
  if (aspect <= 0.0) throw InvalidArgumentError("gen_swiss_roll: aspect must be positive");
  const double length = swiss_roll_total_arclength();
  const double height = aspect * length;
  PointCloud cloud;
  cloud.name = "swiss_roll";
  cloud.seed = seed;
  cloud.meta = {{"n", double(n)}, {"aspect", aspect}, {"arclength", length}, {"height", height}};
  cloud.points.resize(3, n);
  cloud.clean.resize(n);
  Rng rng(seed);
  for (Index j = 0; j < n; ++j) {
    const double s = length * rng.uniform();
    const double y = height * rng.uniform();
    const double theta = detail::spiral_theta_at_arclength(s);
    const double r = theta / (4.0 * M_PI);
    const double rp = 1.0 / (4.0 * M_PI);
    Vector x(3);
    x << r * std::cos(theta), r * std::sin(theta), y;
    Vector t1(3);
    t1 << rp * std::cos(theta) - r * std::sin(theta),
        rp * std::sin(theta) + r * std::cos(theta), 0.0;
    t1.normalize();
    Matrix tan(3, 2);
    tan.col(0) = t1;
    tan.col(1) = Vector::Unit(3, 2);
    Vector nor(3);
    nor << t1(1), -t1(0), 0.0;
    CleanSample& cs = cloud.clean[j];
    cs.point = x;
    cs.tangent_frame = tan;
    cs.normal_frame = nor;
    cs.params = (Vector(2) << s, y).finished();
    cloud.points.col(j) = x;
  }
  return cloud;
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Area-uniform sampling of the torus patch u in u_range, v in [0, 2*pi);
// v is drawn by rejection with acceptance (R + r*cos v)/(R + r).
inline PointCloud gen_truncated_torus(Index n, double R, double r_minor,
                                      Interval u_range, std::uint64_t seed) {
  if (!(r_minor > 0.0 && r_minor < R))
    throw InvalidArgumentError("gen_truncated_torus: need 0 < r_minor < R");
  if (!(u_range.hi > u_range.lo))
    throw InvalidArgumentError("gen_truncated_torus: empty u_range");
  PointCloud cloud;
  cloud.name = "truncated_torus";
  cloud.seed = seed;
  cloud.meta = {{"n", double(n)},     {"R", R},
                {"r_minor", r_minor}, {"u_lo", u_range.lo},
                {"u_hi", u_range.hi}};
  cloud.points.resize(3, n);
  cloud.clean.resize(n);
  Rng rng(seed);
  for (Index j = 0; j < n; ++j) {
    const double u = rng.uniform(u_range.lo, u_range.hi);
    double v = 0.0;
    do {
      v = rng.uniform(0.0, 2.0 * M_PI);
    } while (rng.uniform() * (R + r_minor) > R + r_minor * std::cos(v));
    Vector x = torus_point(u, v, R, r_minor);
    Matrix tan(3, 2);
    tan.col(0) << -std::sin(u), std::cos(u), 0.0;
    tan.col(1) << -std::cos(u) * std::sin(v), -std::sin(u) * std::sin(v), std::cos(v);
    Vector nor(3);
    nor << std::cos(u) * std::cos(v), std::sin(u) * std::cos(v), std::sin(v);
    CleanSample& cs = cloud.clean[j];
    cs.point = x;
    cs.tangent_frame = tan;
    cs.normal_frame = nor;
    cs.params = (Vector(2) << u, v).finished();
    cloud.points.col(j) = x;
  }
  return cloud;
}

// Regular lattice on [0, length] x [-halfwidth, halfwidth]; the flat strip
// used as the analytic spectral oracle.
inline PointCloud gen_rectangle_strip(Index grid_x, Index grid_y, double length,
                                      double halfwidth) {
  if (grid_x < 4) throw InvalidArgumentError("gen_rectangle_strip: need grid_x >= 4");
  if (grid_y < 2) throw InvalidArgumentError("gen_rectangle_strip: need grid_y >= 2");
  if (!(length > 0.0 && halfwidth > 0.0))
    throw InvalidArgumentError("gen_rectangle_strip: need positive extents");
  const Index n = grid_x * grid_y;
  PointCloud cloud;
  cloud.name = "rectangle_strip";
  cloud.meta = {{"grid_x", double(grid_x)},
                {"grid_y", double(grid_y)},
                {"length", length},
                {"halfwidth", halfwidth}};
  cloud.points.resize(2, n);
  cloud.clean.resize(n);
  Index j = 0;
  for (Index ix = 0; ix < grid_x; ++ix) {
    for (Index iy = 0; iy < grid_y; ++iy, ++j) {
      const double x = length * double(ix) / double(grid_x - 1);
      const double y = -halfwidth + 2.0 * halfwidth * double(iy) / double(grid_y - 1);
      CleanSample& cs = cloud.clean[j];
      cs.point = (Vector(2) << x, y).finished();
      cs.tangent_frame = Vector::Unit(2, 0);
      cs.normal_frame = Vector::Unit(2, 1);
      cs.params = cs.point;
      cloud.points.col(j) = cs.point;
    }
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

inline PointCloud apply_noise(const PointCloud& cloud, const NoiseSpec& spec) {
  const bool normal_kind = spec.kind != NoiseKind::isotropic_gaussian;
  if (normal_kind && !cloud.has_clean())
    throw InvalidStateError("apply_noise: normal-direction noise requires clean frames");
  if (spec.kind == NoiseKind::heteroskedastic_normal_interval && !spec.level_fn)
    throw InvalidArgumentError("apply_noise: heteroskedastic kind requires level_fn");
  if (spec.level < 0.0) throw InvalidArgumentError("apply_noise: negative level");

  PointCloud out = cloud;
  out.meta["noise_kind"] = double(int(spec.kind));
  out.meta["noise_level"] = spec.level;
  out.meta["noise_seed"] = double(spec.seed);
  Rng rng(spec.seed);
  const Index n = cloud.n(), p = cloud.p();
  for (Index j = 0; j < n; ++j) {
    switch (spec.kind) {
      case NoiseKind::uniform_normal_interval:
      case NoiseKind::heteroskedastic_normal_interval: {
        const CleanSample& cs = cloud.clean[j];
        double bound = spec.level;
        if (spec.kind == NoiseKind::heteroskedastic_normal_interval)
          bound *= spec.level_fn(cs.params);
        const Index k = cs.normal_frame.cols();
        Vector eta(k);
        for (Index c = 0; c < k; ++c) eta(c) = bound * (2.0 * rng.uniform() - 1.0);
        out.points.col(j) = cs.point + cs.normal_frame * eta;
        break;
      }
      case NoiseKind::uniform_ball_normal: {
        const CleanSample& cs = cloud.clean[j];
        const Index k = cs.normal_frame.cols();
        Vector z(k);
        double norm = 0.0;
        do {
          for (Index c = 0; c < k; ++c) z(c) = rng.normal();
          norm = z.norm();
        } while (norm < 1e-300);
        const double radius = spec.level * std::pow(rng.uniform(), 1.0 / double(k));
        out.points.col(j) = cs.point + cs.normal_frame * (z * (radius / norm));
        break;
      }
      case NoiseKind::isotropic_gaussian: {
        Vector g(p);
        for (Index c = 0; c < p; ++c) g(c) = rng.normal();
        out.points.col(j) = cloud.points.col(j) + spec.level * g;
        break;
      }
    }
  }
  return out;
}

}  // namespace lego
