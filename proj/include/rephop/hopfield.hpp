#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "rephop/common.hpp"
#include "rephop/linalg.hpp"
#include "rephop/rng.hpp"
#include "rephop/threads.hpp"

namespace rephop {

// Continuous-state associative memory over a finite pattern set. The update
// rule is softmax-weighted retrieval, which is the same computation as
// single-query dot-product attention.

struct PatternSet {
  Matrix patterns;  // one pattern per row, N x d

  std::size_t count() const { return patterns.rows; }
  std::size_t dim() const { return patterns.cols; }

  void validate() const {
    if (patterns.rows < 1 || patterns.cols < 1)
      throw std::invalid_argument("PatternSet: need at least one pattern and one dimension");
    if (!all_finite(patterns.data))
      throw std::invalid_argument("PatternSet: non-finite entry");
  }

  // Largest pattern norm M.
  double max_norm() const {
    double m = 0.0;
    for (std::size_t i = 0; i < patterns.rows; ++i)
      m = std::max(m, norm2(patterns.row(i), patterns.cols));
    return m;
  }
};

inline PatternSet make_pattern_set(const std::vector<std::vector<double>>& columns) {
  if (columns.empty()) throw std::invalid_argument("make_pattern_set: empty");
  PatternSet set;
  set.patterns = Matrix(columns.size(), columns[0].size());
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].size() != set.patterns.cols)
      throw std::invalid_argument("make_pattern_set: ragged patterns");
    for (std::size_t j = 0; j < set.patterns.cols; ++j)
      set.patterns(i, j) = columns[i][j];
  }
  set.validate();
  return set;
}

struct HopfieldQuery {
  std::vector<double> state;  // xi
  double beta = 1.0;

  void validate(std::size_t dim) const {
    if (state.size() != dim)
      throw std::invalid_argument("HopfieldQuery: state dimension mismatch");
    if (!(beta >= 0.0) || !std::isfinite(beta))
      throw std::invalid_argument("HopfieldQuery: beta must be finite and >= 0");
    if (!all_finite(state))
      throw std::invalid_argument("HopfieldQuery: non-finite state");
  }
};

struct RetrievalResult {
  std::vector<double> fixed_point;
  std::size_t iterations = 0;
  bool converged = false;
  double final_energy = 0.0;
};

struct CapacityBound {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double n_bound = 0.0;
  bool feasible = false;
};

// E = -1/beta log sum_i exp(beta x_i' xi) + 1/beta log N + xi'xi/2 + M^2/2.
// For a single pattern this reduces exactly to ||xi - x_1||^2 / 2.
inline double energy(const PatternSet& set, const HopfieldQuery& query) {
  set.validate();
  query.validate(set.dim());
  if (!(query.beta > 0.0))
    throw std::invalid_argument("energy: beta must be positive");
  const std::size_t n = set.count();
  const std::size_t d = set.dim();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i)
    scores[i] = query.beta * dot(set.patterns.row(i), query.state.data(), d);
  const double m = set.max_norm();
  const double lse = log_sum_exp(scores.data(), n);
  const double self = dot(query.state.data(), query.state.data(), d);
  return -lse / query.beta + std::log(static_cast<double>(n)) / query.beta +
         0.5 * self + 0.5 * m * m;
}

// One retrieval step: weights = softmax(beta X' xi), result = weighted mean of
// the patterns. The result always lies in their convex hull.
inline std::vector<double> update(const PatternSet& set, const HopfieldQuery& query) {
  set.validate();
  query.validate(set.dim());
  const std::size_t n = set.count();
  const std::size_t d = set.dim();
  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i)
    weights[i] = query.beta * dot(set.patterns.row(i), query.state.data(), d);
  softmax_inplace(weights);
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights[i];
    const double* p = set.patterns.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] += w * p[j];
  }
  return out;
}

inline RetrievalResult iterate_to_fixed_point(const PatternSet& set,
                                              const HopfieldQuery& query,
                                              double tol = 1e-8,
                                              std::size_t max_iter = 100) {
  if (!(tol > 0.0)) throw std::invalid_argument("iterate_to_fixed_point: tol must be positive");
  RetrievalResult result;
  std::vector<double> current = query.state;
  HopfieldQuery moving = query;
  while (result.iterations <= max_iter) {
    moving.state = current;
    std::vector<double> next = update(set, moving);
    double diff = 0.0;
    for (std::size_t j = 0; j < next.size(); ++j) {
      const double e = next[j] - current[j];
      diff += e * e;
    }
    if (std::sqrt(diff) <= tol) {
      result.converged = true;
      break;
    }
    current = std::move(next);
    if (++result.iterations == max_iter) break;
  }
  result.fixed_point = std::move(current);
  moving.state = result.fixed_point;
  result.final_energy =
      query.beta > 0.0 ? energy(set, moving) : std::numeric_limits<double>::quiet_NaN();
  return result;
}

// Separation of pattern i: min over j != i of (x_i'x_i - x_i'x_j).
inline double separation(const PatternSet& set, std::size_t i) {
  set.validate();
  const std::size_t n = set.count();
  if (n < 2) throw std::invalid_argument("separation: undefined for fewer than two patterns");
  if (i >= n) throw std::invalid_argument("separation: index out of range");
  const std::size_t d = set.dim();
  const double* xi = set.patterns.row(i);
  const double self = dot(xi, xi, d);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    best = std::min(best, self - dot(xi, set.patterns.row(j), d));
  }
  return best;
}

// Pattern i is well separated if its margin clears
// 2/(beta N) + log(2 (N-1) N beta M^2) / beta.
inline bool is_well_separated(const PatternSet& set, std::size_t i, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("is_well_separated: beta must be positive");
  const double delta = separation(set, i);
  const double n = static_cast<double>(set.count());
  const double m = set.max_norm();
  const double threshold =
      2.0 / (beta * n) + std::log(2.0 * (n - 1.0) * n * beta * m * m) / beta;
  return delta >= threshold;
}

// Upper branch of the Lambert W function: w with w e^w = x for x >= -1/e.
// Halley iteration with a bisection fallback; residual <= 1e-12.
inline double lambert_w0(double x) {
  constexpr double kInvE = 0.36787944117144232159552377016146;
  if (!(x >= -kInvE))
    throw std::invalid_argument("lambert_w0: argument below -1/e");
  if (x == 0.0) return 0.0;
  // 1e-12 absolute is achievable up to |x| ~ 1e2..1e3; beyond that the
  // rounding of x itself dominates and the target scales with |x|.
  const double kResidual = std::max(1e-12, std::abs(x) * 1e-14);

  double w;
  if (x < -0.25) {
    const double p = std::sqrt(2.0 * (2.7182818284590452354 * x + 1.0));
    w = -1.0 + p - p * p / 3.0;
  } else if (x < 2.7182818284590452354) {
    w = x / (1.0 + x);
  } else {
    const double lx = std::log(x);
    w = lx - std::log(lx);
  }

  bool ok = false;
  for (int it = 0; it < 60; ++it) {
    const double ew = std::exp(w);
    const double f = w * ew - x;
    if (std::abs(f) <= kResidual) {
      ok = true;
      break;
    }
    const double wp1 = w + 1.0;
    const double denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
    if (denom == 0.0 || !std::isfinite(denom)) break;
    const double next = w - f / denom;
    if (!std::isfinite(next) || next <= -1.0) break;
    w = next;
  }
  if (!ok || std::abs(w * std::exp(w) - x) > kResidual) {
    // Bisection on a bracket around the upper branch.
    double lo = -1.0;
    double hi = x > 0.0 ? std::max(1.0, std::log(x + 1.0) + 1.0) : 0.0;
    while (hi * std::exp(hi) < x) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid * std::exp(mid) < x)
        lo = mid;
      else
        hi = mid;
    }
    w = 0.5 * (lo + hi);
    if (std::abs(w * std::exp(w) - x) > kResidual)
      throw NumericError("lambert_w0: residual target not reached");
  }
  return w;
}

// Storage-capacity constants for patterns drawn on the sphere of radius
// M = K sqrt(d-1): a, b, c, and the pattern-count bound sqrt(p) c^((d-1)/4).
inline CapacityBound capacity_bound(double beta, double k, long d, double p) {
  if (!(beta > 0.0) || !(k > 0.0))
    throw std::invalid_argument("capacity_bound: beta and K must be positive");
  if (d < 2) throw std::invalid_argument("capacity_bound: d must be at least 2");
  if (!(p > 0.0 && p <= 1.0))
    throw std::invalid_argument("capacity_bound: p must lie in (0, 1]");
  CapacityBound out;
  const double dm1 = static_cast<double>(d - 1);
  out.a = 2.0 / dm1 * (1.0 + std::log(2.0 * beta * k * k * p * dm1));
  out.b = 2.0 * k * k * beta / 5.0;
  out.c = out.b / lambert_w0(std::exp(out.a + std::log(out.b)));
  out.n_bound = std::sqrt(p) * std::pow(out.c, dm1 / 4.0);
  out.feasible = out.c >= std::pow(2.0 / std::sqrt(p), 4.0 / dm1);
  return out;
}

// Generic row-wise softmax attention: softmax(beta Q K') V. Each output row is
// a convex combination of the rows of V.
inline Matrix attention(const Matrix& queries, const Matrix& keys,
                        const Matrix& values, double beta) {
  if (queries.cols != keys.cols)
    throw std::invalid_argument("attention: query/key width mismatch");
  if (keys.rows != values.rows)
    throw std::invalid_argument("attention: key/value count mismatch");
  if (!(beta >= 0.0)) throw std::invalid_argument("attention: beta must be >= 0");
  Matrix out(queries.rows, values.cols);
  std::vector<double> weights(keys.rows);
  for (std::size_t qi = 0; qi < queries.rows; ++qi) {
    for (std::size_t i = 0; i < keys.rows; ++i)
      weights[i] = beta * dot(keys.row(i), queries.row(qi), keys.cols);
    softmax_inplace(weights);
    double* dst = out.row(qi);
    for (std::size_t i = 0; i < keys.rows; ++i) {
      const double w = weights[i];
      const double* v = values.row(i);
      for (std::size_t j = 0; j < values.cols; ++j) dst[j] += w * v[j];
    }
  }
  return out;
}

// Uniform point on the sphere of radius `radius` (normalized Gaussian).
inline std::vector<double> sample_on_sphere(std::size_t dim, double radius,
                                            RandomStream& rng) {
  std::vector<double> v(dim);
  double n = 0.0;
  do {
    for (auto& x : v) x = rng.normal();
    n = norm2(v);
  } while (n == 0.0);
  for (auto& x : v) x *= radius / n;
  return v;
}

// Monte-Carlo retrieval experiment. Per trial: N fresh patterns on the sphere
// of radius M = K sqrt(d-1), a start point x_i + noise with noise norm
// noise_scale * M, and a run of the fixed-point iteration. A trial succeeds if
// the fixed point lands inside the ball of radius noise_scale * M around x_i
// and that ball is disjoint from every other pattern's ball. The reported rate
// is a trial-success frequency over random pattern draws, not the bound's
// failure probability itself.
inline double empirical_capacity_experiment(long d, std::size_t n_patterns,
                                            double k, double beta,
                                            double noise_scale,
                                            std::size_t trials,
                                            std::uint64_t seed) {
  if (d < 2) throw std::invalid_argument("empirical_capacity_experiment: d must be at least 2");
  if (n_patterns < 1 || trials < 1)
    throw std::invalid_argument("empirical_capacity_experiment: need patterns and trials");
  const double radius = k * std::sqrt(static_cast<double>(d - 1));
  const double ball = noise_scale * radius;
  std::vector<unsigned char> success(trials, 0);
  parallel_for(trials, [&](std::size_t t) {
    RandomStream rng(stream_seed(seed, "capacity-trial", t));
    PatternSet set;
    set.patterns = Matrix(n_patterns, static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < n_patterns; ++i) {
      auto p = sample_on_sphere(static_cast<std::size_t>(d), radius, rng);
      for (std::size_t j = 0; j < p.size(); ++j) set.patterns(i, j) = p[j];
    }
    const std::size_t target = rng.below(n_patterns);
    const double* x = set.patterns.row(target);

    bool disjoint = true;
    for (std::size_t j = 0; j < n_patterns && disjoint; ++j) {
      if (j == target) continue;
      double dist2 = 0.0;
      for (std::size_t c = 0; c < set.patterns.cols; ++c) {
        const double e = x[c] - set.patterns(j, c);
        dist2 += e * e;
      }
      if (std::sqrt(dist2) <= 2.0 * ball) disjoint = false;
    }
    if (!disjoint) return;

    HopfieldQuery query;
    query.beta = beta;
    auto noise = sample_on_sphere(static_cast<std::size_t>(d), ball, rng);
    query.state.resize(set.patterns.cols);
    for (std::size_t c = 0; c < set.patterns.cols; ++c)
      query.state[c] = x[c] + noise[c];
    const RetrievalResult r = iterate_to_fixed_point(set, query, 1e-8, 100);
    double dist2 = 0.0;
    for (std::size_t c = 0; c < set.patterns.cols; ++c) {
      const double e = r.fixed_point[c] - x[c];
      dist2 += e * e;
    }
    if (r.converged && std::sqrt(dist2) <= ball) success[t] = 1;
  });
  std::size_t hits = 0;
  for (auto s : success) hits += s;
  return static_cast<double>(hits) / static_cast<double>(trials);
}

}  // namespace rephop
