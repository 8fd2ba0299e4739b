#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "slac/cluster.hpp"

using namespace slac;

namespace {

Matrix gaussian(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal_draw(rng);
  return m;
}

/// k blobs of m points each, centers spaced `gap` apart on the first axis.
std::pair<Matrix, std::vector<int>> blobs(Rng& rng, int k, int m, double gap, double spread = 1.0) {
  Matrix x = spread * gaussian(rng, k * m, 2);
  std::vector<int> labels;
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < m; ++i) {
      x(j * m + i, 0) += gap * j;
      labels.push_back(j);
    }
  return {x, labels};
}

}  // namespace

TEST_CASE("k-means small cases") {
  SUBCASE("n = k") {
    Matrix x(3, 2);
    x << 0, 0, 5, 1, -3, 2;
    const auto m = kmeans(x, 3, 1);
    CHECK(m.inertia == 0.0);
    std::vector<int> sorted = m.labels;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2});
  }
  SUBCASE("four points on a line") {
    Matrix x(4, 1);
    x << 0, 1, 10, 11;
    const auto m = kmeans(x, 2, 7);
    CHECK(m.inertia == doctest::Approx(1.0));
    CHECK(m.labels[0] == m.labels[1]);
    CHECK(m.labels[2] == m.labels[3]);
    CHECK(m.labels[0] != m.labels[2]);
    CHECK(oracle::exhaustive_min_inertia(x, 2) == doctest::Approx(1.0));
  }
  SUBCASE("six random points match the exhaustive minimum") {
    Rng rng(1);
    const Matrix x = gaussian(rng, 6, 2);
    CHECK(kmeans(x, 2, 3).inertia == doctest::Approx(oracle::exhaustive_min_inertia(x, 2)).epsilon(1e-12));
  }
  SUBCASE("too few points") { CHECK_THROWS_AS(kmeans(Matrix::Zero(2, 2), 3, 1), Error); }
  SUBCASE("non-finite points") {
    Matrix x = Matrix::Zero(4, 2);
    x(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(kmeans(x, 2, 1), Error);
  }
}

TEST_CASE("k-means model invariants on random data") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const int k = 2 + trial % 4;
    const Matrix x = gaussian(rng, 10 + trial, 3);
    const auto m = kmeans(x, k, static_cast<std::uint64_t>(trial));
    CHECK(m.centroids.rows() == k);
    CHECK(m.inertia == doctest::Approx(oracle::inertia(x, m.labels)).epsilon(1e-9));
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int l : m.labels) ++sizes[static_cast<std::size_t>(l)];
    CHECK(std::count(sizes.begin(), sizes.end(), 0) == 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int nearest = 0;
      for (int j = 1; j < k; ++j)
        if ((x.row(i) - m.centroids.row(j)).squaredNorm() < (x.row(i) - m.centroids.row(nearest)).squaredNorm())
          nearest = j;
      CHECK(m.labels[static_cast<std::size_t>(i)] == nearest);
    }
  }
}

TEST_CASE("k-means is deterministic and templated on the scalar") {
  Rng rng(3);
  const Matrix x = gaussian(rng, 40, 2);
  const auto a = kmeans(x, 3, 9);
  const auto b = kmeans(x, 3, 9);
  CHECK(a.labels == b.labels);
  CHECK(a.inertia == b.inertia);
  const auto f = kmeans(MatrixX<float>(x.cast<float>()), 3, 9);
  CHECK(f.inertia == doctest::Approx(a.inertia).epsilon(1e-4));
}

TEST_CASE("silhouette") {
  Rng rng(4);
  auto [x, labels] = blobs(rng, 2, 10, 100.0, 0.1);
  CHECK(silhouette_score(x, labels) > 0.9);

  Matrix pair(2, 1);
  pair << 0, 1;
  CHECK(silhouette_score(pair, std::vector<int>{0, 1}) == 0.0);

  const Matrix r = gaussian(rng, 8, 2);
  const std::vector<int> l{0, 1, 0, 1, 1, 0, 0, 1};
  CHECK(silhouette_score(r, l) == doctest::Approx(oracle::silhouette(r, l)).epsilon(1e-12));
  CHECK_THROWS_AS(silhouette_score(r, std::vector<int>(8, 0)), Error);
}

TEST_CASE("Calinski-Harabasz") {
  Rng rng(5);
  const Matrix r = gaussian(rng, 9, 3);
  const std::vector<int> l{0, 1, 2, 0, 1, 2, 0, 0, 1};
  const double ch = calinski_harabasz(r, l);
  CHECK(ch == doctest::Approx(oracle::calinski_harabasz(r, l)).epsilon(1e-9));
  const Matrix shifted = r.rowwise() + RowVector::Constant(3, 42.0);
  CHECK(calinski_harabasz(shifted, l) == doctest::Approx(ch).epsilon(1e-9));

  Matrix collapsed(4, 1);
  collapsed << 1, 1, 5, 5;
  CHECK(calinski_harabasz(collapsed, std::vector<int>{0, 0, 1, 1}) == kCalinskiHarabaszSentinel);
  CHECK_THROWS_AS(calinski_harabasz(collapsed, std::vector<int>{0, 1, 2, 3}), Error);
  CHECK_THROWS_AS(calinski_harabasz(collapsed, std::vector<int>{0, 0, 0, 0}), Error);
}

TEST_CASE("Davies-Bouldin") {
  Rng rng(6);
  auto [x, labels] = blobs(rng, 2, 10, 1000.0, 0.1);
  CHECK(davies_bouldin(x, labels) < 0.01);

  const Matrix r = gaussian(rng, 10, 2);
  const std::vector<int> l{0, 1, 2, 0, 1, 2, 0, 1, 2, 2};
  const double db = davies_bouldin(r, l);
  CHECK(db == doctest::Approx(oracle::davies_bouldin(r, l)).epsilon(1e-12));
  CHECK(davies_bouldin(Matrix(3.7 * r), l) == doctest::Approx(db).epsilon(1e-9));

  Matrix same(4, 1);
  same << -1, 1, -2, 2;
  CHECK_THROWS_WITH_AS(davies_bouldin(same, std::vector<int>{0, 0, 1, 1}), doctest::Contains("0"), Error);
}

TEST_CASE("indices are invariant under label permutation and stay in range") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + trial % 3;
    const Matrix x = gaussian(rng, 12, 2);
    std::vector<int> l(12);
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = static_cast<int>(i % static_cast<std::size_t>(k));
    shuffle_range(l.begin(), l.end(), rng);
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::vector<int> p(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) p[i] = perm[static_cast<std::size_t>(l[i])];
    const auto a = validity_scores(x, l);
    const auto b = validity_scores(x, p);
    CHECK(a.silhouette == doctest::Approx(b.silhouette).epsilon(1e-12));
    CHECK(a.calinski_harabasz == doctest::Approx(b.calinski_harabasz).epsilon(1e-12));
    CHECK(a.davies_bouldin == doctest::Approx(b.davies_bouldin).epsilon(1e-12));
    CHECK(a.silhouette >= -1.0);
    CHECK(a.silhouette <= 1.0);
    CHECK(a.calinski_harabasz >= 0.0);
    CHECK(a.davies_bouldin >= 0.0);
  }
}

TEST_CASE("indices prefer better-separated clusters") {
  ValidityScores previous{-2.0, 0.0, 1e300};
  for (double gap : {1.0, 3.0, 9.0}) {
    Rng rng(8);
    auto [x, labels] = blobs(rng, 3, 30, gap);
    const auto s = validity_scores(x, labels);
    CHECK(s.silhouette > previous.silhouette);
    CHECK(s.calinski_harabasz > previous.calinski_harabasz);
    CHECK(s.davies_bouldin < previous.davies_bouldin);
    previous = s;
  }
}

TEST_CASE("adjusted Rand index") {
  const std::vector<int> a{0, 0, 1, 1}, b{0, 0, 1, 2};
  CHECK(adjusted_rand_index(a, b) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
  CHECK(adjusted_rand_index(a, std::vector<int>{5, 5, 3, 3}) == 1.0);
  CHECK(adjusted_rand_index(b, b) == 1.0);
  Rng rng(9);
  std::vector<int> x(50), y(50);
  for (auto& v : x) v = static_cast<int>(uniform_draw(rng) * 3);
  for (auto& v : y) v = static_cast<int>(uniform_draw(rng) * 4);
  std::vector<int> relabeled(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) relabeled[i] = 2 - x[i];
  CHECK(adjusted_rand_index(relabeled, y) == doctest::Approx(adjusted_rand_index(x, y)).epsilon(1e-12));
}

TEST_CASE("Hungarian assignment matches brute force") {
  Rng rng(10);
  for (int k = 1; k <= 5; ++k)
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix cost = gaussian(rng, k, k).cwiseAbs();
      const auto assignment = hungarian_assignment(cost);
      std::vector<int> used(assignment);
      std::sort(used.begin(), used.end());
      std::vector<int> perm(static_cast<std::size_t>(k));
      std::iota(perm.begin(), perm.end(), 0);
      CHECK(used == perm);
      double best = 1e300;
      do {
        double c = 0;
        for (int i = 0; i < k; ++i) c += cost(i, perm[static_cast<std::size_t>(i)]);
        best = std::min(best, c);
      } while (std::next_permutation(perm.begin(), perm.end()));
      double got = 0;
      for (int i = 0; i < k; ++i) got += cost(i, assignment[static_cast<std::size_t>(i)]);
      CHECK(got == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("align_labels renames clusters to maximize overlap") {
  const std::vector<int> reference{0, 0, 0, 1, 1, 2, 2, 2};
  const std::vector<int> labels{2, 2, 0, 0, 0, 1, 1, 1};
  CHECK(align_labels(labels, reference, 3) == std::vector<int>{0, 0, 1, 1, 1, 2, 2, 2});
}
