#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "embcomp/clustering.hpp"
#include "helpers.hpp"

using namespace embcomp;
using testing_util::random_matrix;
using testing_util::rel_diff;
using testing_util::to_rows;

namespace {

ClusterConfig cfg(std::size_t k, std::uint64_t seed = 1, InitMethod m = InitMethod::KMeansPP) {
  ClusterConfig c;
  c.k = k;
  c.seed = seed;
  c.init_method = m;
  return c;
}

std::multiset<std::vector<double>> row_set(const Matrix<double>& m) {
  auto rows = to_rows(m);
  return {rows.begin(), rows.end()};
}

const std::vector<std::uint64_t> kNoFreq;

}  // namespace

TEST(InitRandom, FullSampleIsPermutation) {
  const auto v = random_matrix(5, 3, 1);
  const auto c = init_random(v, kNoFreq, cfg(5, 9));
  EXPECT_EQ(row_set(c), row_set(v));
}

TEST(InitRandom, Deterministic) {
  const auto v = random_matrix(100, 3, 1);
  EXPECT_EQ(init_random(v, kNoFreq, cfg(10, 4)), init_random(v, kNoFreq, cfg(10, 4)));
  EXPECT_NE(init_random(v, kNoFreq, cfg(10, 4)), init_random(v, kNoFreq, cfg(10, 5)));
}

TEST(InitRandom, UniformOverSeeds) {
  constexpr std::size_t n = 1000, trials = 10000;
  Matrix<double> v(n, 1);
  for (std::size_t i = 0; i < n; ++i) v(i, 0) = static_cast<double>(i);
  std::vector<double> counts(n, 0);
  for (std::uint64_t s = 0; s < trials; ++s) counts[static_cast<std::size_t>(init_random(v, kNoFreq, cfg(1, s))(0, 0))] += 1;

  const double p = 1.0 / n, mean = trials * p, sigma = std::sqrt(trials * p * (1 - p));
  double chi2 = 0;
  std::size_t outside = 0;
  for (double c : counts) {
    chi2 += (c - mean) * (c - mean) / mean;
    if (std::abs(c - mean) > 3 * sigma) ++outside;
  }
  // Wilson-Hilferty upper 0.1% point of chi-square with n-1 degrees of freedom.
  const double df = n - 1, z = 3.090;
  const double crit = df * std::pow(1 - 2 / (9 * df) + z * std::sqrt(2 / (9 * df)), 3);
  EXPECT_LT(chi2, crit);
  EXPECT_LE(outside, n / 100);
}

TEST(InitRandom, InsufficientRows) {
  EXPECT_THROW(init_random(random_matrix(3, 2, 1), kNoFreq, cfg(4)), InsufficientInputError);
}

TEST(InitKMeansPP, SecondPickIsTheFarPoint) {
  Matrix<double> v(100, 2);
  v(99, 0) = v(99, 1) = 100;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto c = init_kmeanspp(v, kNoFreq, cfg(2, s));
    std::multiset<std::vector<double>> expect{{0, 0}, {100, 100}};
    EXPECT_EQ(row_set(c), expect) << "seed " << s;
  }
}

TEST(InitKMeansPP, KOneMatchesRandom) {
  const auto v = random_matrix(300, 4, 2);
  for (std::uint64_t s = 0; s < 20; ++s)
    EXPECT_EQ(init_kmeanspp(v, kNoFreq, cfg(1, s)), init_random(v, kNoFreq, cfg(1, s)));
}

TEST(InitKMeansPP, DeterministicAndDegenerateFallback) {
  const auto v = random_matrix(200, 3, 2);
  EXPECT_EQ(init_kmeanspp(v, kNoFreq, cfg(8, 3)), init_kmeanspp(v, kNoFreq, cfg(8, 3)));
  Matrix<double> same(20, 2, 1.5);
  const auto c = init_kmeanspp(same, kNoFreq, cfg(5, 3));
  EXPECT_EQ(c.rows(), 5u);
  EXPECT_TRUE(c.all_finite());
  EXPECT_THROW(init_kmeanspp(same, kNoFreq, cfg(21)), InsufficientInputError);
}

TEST(InitKMeansPP, FarPointsDominateDraws) {
  // Three tight clusters; k=3 should almost always hit all three.
  Matrix<double> v(300, 1);
  for (std::size_t i = 0; i < 300; ++i) v(i, 0) = 1000.0 * static_cast<double>(i / 100) + 0.01 * static_cast<double>(i % 100);
  int hits = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto c = init_kmeanspp(v, kNoFreq, cfg(3, s));
    std::set<int> groups;
    for (std::size_t r = 0; r < 3; ++r) groups.insert(static_cast<int>(c(r, 0) / 1000.0));
    hits += groups.size() == 3;
  }
  EXPECT_GE(hits, 99);
}

TEST(InitTopK, TieBreakBySmallerIndex) {
  Matrix<double> v{{0}, {1}, {2}, {3}};
  std::vector<std::uint64_t> f{5, 1, 9, 9};
  EXPECT_EQ(init_topk(v, f, cfg(2)), (Matrix<double>{{2}, {3}}));
  std::vector<std::uint64_t> eq{4, 4, 4, 4};
  EXPECT_EQ(init_topk(v, eq, cfg(2)), (Matrix<double>{{0}, {1}}));
}

TEST(InitTopK, MatchesFullSortOnZipfCounts) {
  constexpr std::size_t n = 1000;
  Matrix<double> v(n, 1);
  std::vector<std::uint64_t> f(n);
  Rng rng(8);
  for (std::size_t i = 0; i < n; ++i) {
    v(i, 0) = static_cast<double>(i);
    f[i] = static_cast<std::uint64_t>(1e5 / std::pow(1.0 + static_cast<double>(rng.uniform_index(n)), 1.1));
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return f[a] > f[b]; });
  const auto c = init_topk(v, f, cfg(10));
  for (std::size_t r = 0; r < 10; ++r) EXPECT_EQ(c(r, 0), static_cast<double>(idx[r]));
}

TEST(InitTopK, Errors) {
  Matrix<double> v{{0}, {1}};
  EXPECT_THROW(init_topk(v, std::vector<std::uint64_t>{1, 2}, cfg(3)), InsufficientInputError);
  EXPECT_THROW(init_topk(v, std::vector<std::uint64_t>{1}, cfg(1)), ConsistencyError);
}

TEST(AssignNearest, MidpointTieGoesToSmallerIndex) {
  EXPECT_EQ(assign_nearest(Matrix<double>{{1}, {9}, {5}}, Matrix<double>{{0}, {10}}),
            (std::vector<std::uint32_t>{0, 1, 0}));
  EXPECT_EQ(assign_nearest(random_matrix(6, 2, 1), Matrix<double>{{3, 3}}), std::vector<std::uint32_t>(6, 0));
}

TEST(AssignNearest, MatchesExhaustiveScan) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto rows = random_matrix(200, 5, s);
    const auto cents = random_matrix(7, 5, s + 1000);
    EXPECT_EQ(assign_nearest(rows, cents), oracle::nearest(to_rows(rows), to_rows(cents)));
  }
}

TEST(AssignNearest, PermutationEquivariant) {
  const auto rows = random_matrix(300, 3, 4);
  const auto cents = random_matrix(9, 3, 5);
  const auto base = assign_nearest(rows, cents);
  std::vector<std::size_t> perm(300);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(6);
  for (std::size_t i = 300; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
  Matrix<double> shuffled(0, 3);
  for (auto p : perm) shuffled.push_row(rows.row(p));
  const auto got = assign_nearest(shuffled, cents);
  for (std::size_t i = 0; i < 300; ++i) EXPECT_EQ(got[i], base[perm[i]]);
}

TEST(AssignNearest, DimensionMismatch) {
  EXPECT_THROW(assign_nearest(Matrix<double>{{1, 2}}, Matrix<double>{{1}}), ConsistencyError);
}

TEST(Objective, HandExamples) {
  EXPECT_EQ(objective(Matrix<double>{{1, 2}, {3, 4}}, Matrix<double>{{1, 2}, {3, 4}}, std::vector<std::uint32_t>{0, 1}), 0.0);
  EXPECT_EQ(objective(Matrix<double>{{0}, {2}}, Matrix<double>{{1}}, std::vector<std::uint32_t>{0, 0}), 2.0);
}

TEST(Objective, MatchesScalarLoop) {
  const auto rows = random_matrix(500, 9, 7);
  const auto cents = random_matrix(20, 9, 8);
  Rng rng(9);
  std::vector<std::uint32_t> a(500);
  for (auto& x : a) x = static_cast<std::uint32_t>(rng.uniform_index(20));
  EXPECT_LE(rel_diff(objective(rows, cents, std::span<const std::uint32_t>(a)),
                     oracle::objective(to_rows(rows), to_rows(cents), a)),
            1e-9);
}

TEST(Objective, ShapeErrors) {
  EXPECT_THROW(objective(Matrix<double>{{1}}, Matrix<double>{{1}}, std::vector<std::uint32_t>{}), ConsistencyError);
  EXPECT_THROW(objective(Matrix<double>{{1}}, Matrix<double>{{1, 2}}, std::vector<std::uint32_t>{0}), ConsistencyError);
}

TEST(KMeans, KEqualsNIsExact) {
  const auto v = random_matrix(12, 3, 1);
  for (auto m : {InitMethod::Random, InitMethod::KMeansPP, InitMethod::TopK}) {
    const auto r = kmeans(v, std::vector<std::uint64_t>(12, 1), cfg(12, 2, m));
    EXPECT_EQ(r.objective, 0.0);
    EXPECT_EQ(std::set<std::uint32_t>(r.assignments.begin(), r.assignments.end()).size(), 12u);
  }
}

TEST(KMeans, SeparatesTwoBlobs) {
  Rng rng(3);
  Matrix<double> v(400, 4);
  std::vector<int> truth(400);
  for (std::size_t i = 0; i < 400; ++i) {
    truth[i] = rng.bernoulli(0.5);
    for (auto& x : v.row(i)) x = (truth[i] ? 100.0 : -100.0) + rng.normal();
  }
  for (auto m : {InitMethod::Random, InitMethod::KMeansPP}) {
    const auto r = kmeans(v, kNoFreq, cfg(2, 5, m));
    const auto label_of_one = r.assignments[std::find(truth.begin(), truth.end(), 1) - truth.begin()];
    for (std::size_t i = 0; i < 400; ++i) EXPECT_EQ(r.assignments[i] == label_of_one, truth[i] == 1);
  }
}

TEST(KMeans, SmallInstancesAgainstBruteForce) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    const std::size_t n = 1 + rng.uniform_index(8);
    const std::size_t k = 1 + rng.uniform_index(std::min<std::size_t>(3, n));
    const auto v = random_matrix(n, 2, s + 77);
    const auto r = kmeans(v, std::vector<std::uint64_t>(n, 1), cfg(k, s));
    EXPECT_LE(r.objective, r.objective_history.front() * (1 + 1e-12));
    EXPECT_LE(rel_diff(r.objective, oracle::objective(to_rows(v), to_rows(r.centroids), r.assignments)), 1e-9);
    EXPECT_EQ(r.assignments, oracle::nearest(to_rows(v), to_rows(r.centroids)));
  }
}

TEST(KMeans, ObjectiveMonotoneAndCentroidsAreMeans) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto v = random_matrix(600, 4, s);
    auto c = cfg(15, s, static_cast<InitMethod>(s % 3));
    c.max_iters = 300;
    c.rel_tolerance = 0;
    const auto r = kmeans(v, std::vector<std::uint64_t>(600, 1), c);
    for (std::size_t i = 1; i < r.objective_history.size(); ++i)
      EXPECT_LE(r.objective_history[i], r.objective_history[i - 1] * (1 + 1e-9));
    ASSERT_TRUE(r.converged);
    std::vector<std::vector<double>> sum(15, std::vector<double>(4, 0));
    std::vector<double> cnt(15, 0);
    for (std::size_t i = 0; i < 600; ++i) {
      cnt[r.assignments[i]] += 1;
      for (std::size_t j = 0; j < 4; ++j) sum[r.assignments[i]][j] += v(i, j);
    }
    for (std::size_t c2 = 0; c2 < 15; ++c2) {
      if (cnt[c2] == 0) continue;
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r.centroids(c2, j), sum[c2][j] / cnt[c2], 1e-9 * (1 + std::abs(r.centroids(c2, j))));
    }
  }
}

TEST(KMeans, EmptyClusterReseededWithFarthestRow) {
  Matrix<double> v{{0}, {0}, {10}};
  std::vector<std::uint64_t> f{5, 4, 1};  // top-k picks the two identical rows
  const auto r = kmeans(v, f, cfg(2, 0, InitMethod::TopK));
  EXPECT_EQ(r.objective, 0.0);
  EXPECT_EQ(r.assignments, (std::vector<std::uint32_t>{0, 0, 1}));
  EXPECT_EQ(r.centroids, (Matrix<double>{{0}, {10}}));
}

TEST(KMeans, DeterministicAcrossThreadCounts) {
  const auto v = random_matrix(9000, 5, 21);
  std::vector<std::uint64_t> f(9000, 1);
  auto c = cfg(20, 4);
  const auto one = kmeans(v, f, c);
  c.threads = 4;
  EXPECT_EQ(kmeans(v, f, c), one);
  c.threads = 1;
  EXPECT_EQ(kmeans(v, f, c), one);
}

TEST(KMeans, InputValidation) {
  EXPECT_THROW(kmeans(Matrix<double>{{1}, {NAN}}, kNoFreq, cfg(1)), InvalidInputError);
  EXPECT_THROW(kmeans(Matrix<double>{{1}}, kNoFreq, cfg(2)), InsufficientInputError);
  auto bad = cfg(1);
  bad.max_iters = 0;
  EXPECT_THROW(kmeans(Matrix<double>{{1}}, kNoFreq, bad), ConfigError);
}

TEST(InitMethodNames, RoundTrip) {
  for (auto m : {InitMethod::Random, InitMethod::KMeansPP, InitMethod::TopK}) EXPECT_EQ(parse_init_method(to_string(m)), m);
  EXPECT_FALSE(parse_init_method("kmeans++"));
}
