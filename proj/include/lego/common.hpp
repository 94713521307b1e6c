#pragma once

// Shared utilities: error types, deterministic RNG, thread pool helpers.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lego {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct InvalidArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Graph construction produced an unusable object (disconnected, zero degree).
struct DegenerateGraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Iterative solver failed to reach its tolerance within the iteration budget.
struct ConvergenceError : std::runtime_error {
  ConvergenceError(const std::string& what, double residual_)
      : std::runtime_error(what), residual(residual_) {}
  double residual = 0.0;
};

// A local patch is unusable (too few neighbors, rank collapse).
struct DegeneratePatchError : std::runtime_error {
  DegeneratePatchError(const std::string& what, Index point_)
      : std::runtime_error(what), point(point_) {}
  Index point = -1;
};

struct DegenerateFrameError : std::runtime_error {
  DegenerateFrameError(const std::string& what, Index point_)
      : std::runtime_error(what), point(point_) {}
  Index point = -1;
};

// ---------------------------------------------------------------------------
// Deterministic RNG
// ---------------------------------------------------------------------------
//
// A thin wrapper over a fixed 64-bit generator with explicit conversion to
// doubles, so streams are reproducible across platforms and standard library
// versions (std::uniform_real_distribution is not pinned by the standard).

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    // xorshift* variant (Vigna); passes BigCrush, trivially portable.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; caches the second draw.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Parallel loop
// ---------------------------------------------------------------------------

namespace detail {
inline int& thread_count_ref() {
  static int count = [] {
    if (const char* env = std::getenv("LEGO_THREADS")) {
      const int v = std::atoi(env);
      if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
  }();
  return count;
}
}  // namespace detail

inline void set_thread_count(int n) {
  detail::thread_count_ref() = std::max(1, n);
}

inline int thread_count() { return detail::thread_count_ref(); }

// Runs fn(i) for i in [begin, end). Iterations must be independent; results
// must not depend on execution order. Falls back to a plain loop when a
// single thread is configured so exceptions propagate with their own type.
inline void parallel_for(Index begin, Index end, const std::function<void(Index)>& fn) {
  const Index total = end - begin;
  const int threads = std::min<Index>(thread_count(), std::max<Index>(total, 1));
  if (threads <= 1 || total <= 1) {
    for (Index i = begin; i < end; ++i) fn(i);
    return;
  }
  std::atomic<Index> cursor{begin};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const Index i = cursor.fetch_add(1);
        if (i >= end || failed.load()) break;
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
          break;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Small numeric helpers
// ---------------------------------------------------------------------------

// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgumentError("quantile: empty sample");
  if (q < 0.0 || q > 1.0) throw InvalidArgumentError("quantile: q outside [0,1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace lego
