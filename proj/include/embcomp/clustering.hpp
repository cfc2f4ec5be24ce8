#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embcomp/matrix.hpp"
#include "embcomp/parallel.hpp"
#include "embcomp/random.hpp"
#include "embcomp/types.hpp"

namespace embcomp {

enum class InitMethod { Random, KMeansPP, TopK };

inline std::string_view to_string(InitMethod m) {
  switch (m) {
    case InitMethod::Random: return "random";
    case InitMethod::KMeansPP: return "kmeanspp";
    case InitMethod::TopK: return "topk";
  }
  return "?";
}

inline std::optional<InitMethod> parse_init_method(std::string_view s) {
  if (s == "random") return InitMethod::Random;
  if (s == "kmeanspp") return InitMethod::KMeansPP;
  if (s == "topk") return InitMethod::TopK;
  return std::nullopt;
}

struct ClusterConfig {
  std::size_t k = 100;
  std::size_t max_iters = 50;
  double rel_tolerance = 1e-4;
  std::uint64_t seed = 0;
  InitMethod init_method = InitMethod::KMeansPP;
  unsigned threads = 1;

  void validate() const {
    if (k < 1) throw ConfigError("cluster k must be >= 1");
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
    if (!(rel_tolerance >= 0.0)) throw ConfigError("rel_tolerance must be >= 0");
  }
};

template <std::floating_point Real>
struct ClusteringResult {
  Matrix<Real> centroids;
  std::vector<std::uint32_t> assignments;
  double objective = 0.0;
  std::size_t iterations_run = 0;
  /// True when the last Lloyd step left every assignment unchanged.
  bool converged = false;
  /// Objective after the initial assignment, then after each Lloyd iteration.
  std::vector<double> objective_history;

  friend bool operator==(const ClusteringResult&, const ClusteringResult&) = default;
};

namespace detail {

template <std::floating_point Real>
void require_rows(const Matrix<Real>& vectors, std::size_t k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (vectors.rows() < k)
    throw InsufficientInputError("need at least k=" + std::to_string(k) + " rows, got " +
                                 std::to_string(vectors.rows()));
}

template <std::floating_point Real>
Matrix<Real> gather_rows(const Matrix<Real>& vectors, std::span<const std::size_t> rows) {
  Matrix<Real> out(0, vectors.cols());
  for (auto r : rows) out.push_row(vectors.row(r));
  return out;
}

/// Nearest centroid per row plus the squared distance to it.
template <std::floating_point Real>
void assign_with_distances(const Matrix<Real>& vectors, const Matrix<Real>& centroids,
                           std::vector<std::uint32_t>& assignments, std::vector<double>& distances,
                           unsigned threads) {
  const std::size_t n = vectors.rows();
  const std::size_t k = centroids.rows();
  assignments.resize(n);
  distances.resize(n);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = vectors.row(i);
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t best_c = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(row, centroids.row(c));
        if (d < best) {  // strict: ties keep the smaller index
          best = d;
          best_c = static_cast<std::uint32_t>(c);
        }
      }
      assignments[i] = best_c;
      distances[i] = best;
    }
  });
}

inline double ordered_sum(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

}  // namespace detail

template <std::floating_point Real>
Matrix<Real> init_random(const Matrix<Real>& vectors,
                         [[maybe_unused]] std::span<const std::uint64_t> frequencies,
                         const ClusterConfig& config) {
  detail::require_rows(vectors, config.k);
  Rng rng(config.seed);
  std::vector<std::size_t> idx(vectors.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first k slots become a uniform sample without replacement.
  for (std::size_t i = 0; i < config.k; ++i) {
    const std::size_t j = i + rng.uniform_index(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  return detail::gather_rows(vectors, std::span<const std::size_t>(idx.data(), config.k));
}

template <std::floating_point Real>
Matrix<Real> init_kmeanspp(const Matrix<Real>& vectors,
                           [[maybe_unused]] std::span<const std::uint64_t> frequencies,
                           const ClusterConfig& config) {
  detail::require_rows(vectors, config.k);
  const std::size_t n = vectors.rows();
  Rng rng(config.seed);

  std::vector<std::size_t> chosen;
  chosen.reserve(config.k);
  std::vector<char> taken(n, 0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());

  auto pick = [&](std::size_t r) {
    chosen.push_back(r);
    taken[r] = 1;
    const auto c = vectors.row(r);
    parallel_for(n, config.threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) d2[i] = std::min(d2[i], squared_distance(vectors.row(i), c));
    });
  };

  pick(rng.uniform_index(n));
  while (chosen.size() < config.k) {
    const double total = detail::ordered_sum(d2);
    if (!(total > 0.0)) {
      // Every remaining row coincides with a chosen centroid.
      std::vector<std::size_t> free_rows;
      for (std::size_t i = 0; i < n; ++i)
        if (!taken[i]) free_rows.push_back(i);
      pick(free_rows[rng.uniform_index(free_rows.size())]);
      continue;
    }
    const double target = rng.uniform01() * total;
    double cum = 0.0;
    std::size_t sel = n;
    std::size_t last_positive = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      last_positive = i;
      cum += d2[i];
      if (cum > target) {
        sel = i;
        break;
      }
    }
    pick(sel < n ? sel : last_positive);
  }
  return detail::gather_rows(vectors, std::span<const std::size_t>(chosen));
}

/// Row indices of the k largest frequencies, descending, ties to the smaller index.
inline std::vector<std::size_t> top_frequent(std::span<const std::uint64_t> frequencies,
                                             std::size_t count) {
  std::vector<std::size_t> idx(frequencies.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  count = std::min(count, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (frequencies[a] != frequencies[b]) return frequencies[a] > frequencies[b];
                      return a < b;
                    });
  idx.resize(count);
  return idx;
}

template <std::floating_point Real>
Matrix<Real> init_topk(const Matrix<Real>& vectors, std::span<const std::uint64_t> frequencies,
                       const ClusterConfig& config) {
  detail::require_rows(vectors, config.k);
  if (frequencies.size() != vectors.rows())
    throw ConsistencyError("init_topk: frequency count does not match row count");
  const auto idx = top_frequent(frequencies, config.k);
  return detail::gather_rows(vectors, std::span<const std::size_t>(idx));
}

template <std::floating_point Real>
std::vector<std::uint32_t> assign_nearest(const Matrix<Real>& vectors, const Matrix<Real>& centroids,
                                          unsigned threads = 1) {
  if (vectors.cols() != centroids.cols() && vectors.rows() > 0)
    throw ConsistencyError("assign_nearest: dimension mismatch");
  if (centroids.rows() == 0) throw InvalidInputError("assign_nearest: no centroids");
  std::vector<std::uint32_t> assignments;
  std::vector<double> distances;
  detail::assign_with_distances(vectors, centroids, assignments, distances, threads);
  return assignments;
}

template <std::floating_point Real>
double objective(const Matrix<Real>& vectors, const Matrix<Real>& centroids,
                 std::span<const std::uint32_t> assignments) {
  if (assignments.size() != vectors.rows())
    throw ConsistencyError("objective: assignment count does not match row count");
  if (vectors.rows() > 0 && vectors.cols() != centroids.cols())
    throw ConsistencyError("objective: dimension mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < vectors.rows(); ++i) {
    if (assignments[i] >= centroids.rows()) throw RangeError("objective: assignment out of range");
    total += squared_distance(vectors.row(i), centroids.row(assignments[i]));
  }
  return total;
}

template <std::floating_point Real>
Matrix<Real> initialize(const Matrix<Real>& vectors, std::span<const std::uint64_t> frequencies,
                        const ClusterConfig& config) {
  switch (config.init_method) {
    case InitMethod::Random: return init_random(vectors, frequencies, config);
    case InitMethod::KMeansPP: return init_kmeanspp(vectors, frequencies, config);
    case InitMethod::TopK: return init_topk(vectors, frequencies, config);
  }
  throw ConfigError("unknown init method");
}

namespace detail {

/// Centroid = mean of assigned rows. Empty clusters are reseeded with the row
/// farthest from its own (updated) centroid.
template <std::floating_point Real>
void update_centroids(const Matrix<Real>& vectors, std::span<const std::uint32_t> assignments,
                      Matrix<Real>& centroids) {
  const std::size_t k = centroids.rows();
  const std::size_t l = centroids.cols();
  std::vector<double> sums(k * l, 0.0);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < vectors.rows(); ++i) {
    const auto c = assignments[i];
    ++counts[c];
    const auto row = vectors.row(i);
    for (std::size_t j = 0; j < l; ++j) sums[c * l + j] += static_cast<double>(row[j]);
  }
  std::vector<std::size_t> empty;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) {
      empty.push_back(c);
      continue;
    }
    for (std::size_t j = 0; j < l; ++j)
      centroids(c, j) = static_cast<Real>(sums[c * l + j] / static_cast<double>(counts[c]));
  }
  if (empty.empty()) return;

  std::vector<double> dist(vectors.rows());
  for (std::size_t i = 0; i < vectors.rows(); ++i)
    dist[i] = squared_distance(vectors.row(i), centroids.row(assignments[i]));
  std::vector<char> used(vectors.rows(), 0);
  for (auto c : empty) {
    std::size_t best = vectors.rows();
    for (std::size_t i = 0; i < vectors.rows(); ++i) {
      if (used[i]) continue;
      if (best == vectors.rows() || dist[i] > dist[best]) best = i;
    }
    if (best == vectors.rows()) break;
    used[best] = 1;
    const auto row = vectors.row(best);
    std::copy(row.begin(), row.end(), centroids.row(c).begin());
  }
}

}  // namespace detail

/// Lloyd's algorithm from the configured initialization. Stops after max_iters,
/// when assignments stop changing, or when the relative objective improvement
/// falls below rel_tolerance.
template <std::floating_point Real>
ClusteringResult<Real> kmeans(const Matrix<Real>& vectors, std::span<const std::uint64_t> frequencies,
                              const ClusterConfig& config) {
  config.validate();
  detail::require_rows(vectors, config.k);
  if (!vectors.all_finite()) throw InvalidInputError("kmeans: non-finite input component");

  ClusteringResult<Real> result;
  result.centroids = initialize(vectors, frequencies, config);

  std::vector<double> distances;
  detail::assign_with_distances(vectors, result.centroids, result.assignments, distances,
                                config.threads);
  double current = detail::ordered_sum(distances);
  result.objective_history.push_back(current);

  std::vector<std::uint32_t> next_assignments;
  for (std::size_t it = 1; it <= config.max_iters; ++it) {
    detail::update_centroids(vectors, result.assignments, result.centroids);
    detail::assign_with_distances(vectors, result.centroids, next_assignments, distances,
                                  config.threads);
    const double next = detail::ordered_sum(distances);
    result.objective_history.push_back(next);
    result.iterations_run = it;

    const bool changed = next_assignments != result.assignments;
    std::swap(result.assignments, next_assignments);
    const double improvement = current - next;
    current = next;
    if (!changed) {
      result.converged = true;
      break;
    }
    if (improvement < config.rel_tolerance * (current + improvement)) break;
  }
  result.objective = current;
  return result;
}

}  // namespace embcomp
