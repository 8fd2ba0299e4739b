#pragma once

// K-means (k-means++ seeding, Lloyd iterations, single-point refinement) and
// the three internal validity indices used for model selection. Points are
// rows; labels are non-negative cluster ids.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "slac/common.hpp"

namespace slac {

struct KMeansOptions {
  int restarts = 10;
  int max_iterations = 300;
  bool refine = true;  // Hartigan single-point moves after Lloyd converges
};

template <typename Scalar>
struct ClusterModel {
  MatrixX<Scalar> centroids;  // k x p
  std::vector<int> labels;
  Scalar inertia = 0;
  int iterations = 0;  // Lloyd iterations of the winning restart
  int restart = 0;
};

inline constexpr double kCalinskiHarabaszSentinel = 1e12;

namespace detail {

template <typename Scalar>
Scalar squared_distance(const Eigen::Ref<const RowVectorX<Scalar>>& a,
                        const Eigen::Ref<const RowVectorX<Scalar>>& b) {
  return (a - b).squaredNorm();
}

/// Nearest centroid per row, ties to the lowest index. Returns the total squared distance.
template <typename Scalar>
Scalar assign_nearest(const MatrixX<Scalar>& x, const MatrixX<Scalar>& c, std::vector<int>& labels) {
  labels.resize(static_cast<std::size_t>(x.rows()));
  Scalar total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    Scalar best_d = (x.row(i) - c.row(0)).squaredNorm();
    for (Eigen::Index j = 1; j < c.rows(); ++j) {
      const Scalar dj = (x.row(i) - c.row(j)).squaredNorm();
      if (dj < best_d) {
        best_d = dj;
        best = static_cast<int>(j);
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
    total += best_d;
  }
  return total;
}

template <typename Scalar>
Scalar inertia_of(const MatrixX<Scalar>& x, const MatrixX<Scalar>& c, std::span<const int> labels) {
  Scalar total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    total += (x.row(i) - c.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
  return total;
}

template <typename Scalar>
std::vector<int> cluster_sizes(std::span<const int> labels, int k) {
  std::vector<int> n(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++n[static_cast<std::size_t>(l)];
  return n;
}

template <typename Scalar>
MatrixX<Scalar> centroids_of(const MatrixX<Scalar>& x, std::span<const int> labels, int k) {
  MatrixX<Scalar> c = MatrixX<Scalar>::Zero(k, x.cols());
  std::vector<Scalar> n(static_cast<std::size_t>(k), Scalar(0));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    c.row(l) += x.row(i);
    n[static_cast<std::size_t>(l)] += 1;
  }
  for (int j = 0; j < k; ++j)
    if (n[static_cast<std::size_t>(j)] > 0) c.row(j) /= n[static_cast<std::size_t>(j)];
  return c;
}

/// Moves the farthest-from-centroid point of a multi-member cluster into each empty cluster.
template <typename Scalar>
bool repair_empty(const MatrixX<Scalar>& x, MatrixX<Scalar>& c, std::vector<int>& labels, int k) {
  bool changed = false;
  for (int j = 0; j < k; ++j) {
    auto sizes = cluster_sizes<Scalar>(labels, k);
    if (sizes[static_cast<std::size_t>(j)] > 0) continue;
    Eigen::Index far = -1;
    Scalar far_d = -1;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const int l = labels[static_cast<std::size_t>(i)];
      if (sizes[static_cast<std::size_t>(l)] < 2) continue;
      const Scalar d = (x.row(i) - c.row(l)).squaredNorm();
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far < 0) throw Error("kmeans: cannot repair an empty cluster");
    labels[static_cast<std::size_t>(far)] = j;
    c = centroids_of<Scalar>(x, labels, k);
    changed = true;
  }
  return changed;
}

template <typename Scalar>
MatrixX<Scalar> plus_plus_seeds(const MatrixX<Scalar>& x, int k, Rng& rng) {
  const auto n = x.rows();
  MatrixX<Scalar> c(k, x.cols());
  auto first = static_cast<Eigen::Index>(uniform_draw(rng) * static_cast<double>(n));
  c.row(0) = x.row(std::min(first, n - 1));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    d2[static_cast<std::size_t>(i)] = static_cast<double>((x.row(i) - c.row(0)).squaredNorm());
  for (int j = 1; j < k; ++j) {
    double total = 0;
    for (double v : d2) total += v;
    Eigen::Index pick = n - 1;
    if (total > 0) {
      const double target = uniform_draw(rng) * total;
      double acc = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc > target && d2[static_cast<std::size_t>(i)] > 0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min(static_cast<Eigen::Index>(uniform_draw(rng) * static_cast<double>(n)), n - 1);
    }
    c.row(j) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(
          d2[static_cast<std::size_t>(i)], static_cast<double>((x.row(i) - c.row(j)).squaredNorm()));
  }
  return c;
}

/// Hartigan pass: move single points while a move lowers the inertia.
template <typename Scalar>
bool hartigan_moves(const MatrixX<Scalar>& x, MatrixX<Scalar>& c, std::vector<int>& labels, int k) {
  auto sizes = cluster_sizes<Scalar>(labels, k);
  bool any = false;
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool moved = false;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const int a = labels[static_cast<std::size_t>(i)];
      const auto na = static_cast<Scalar>(sizes[static_cast<std::size_t>(a)]);
      if (na < 2) continue;
      const Scalar removal = na / (na - 1) * (x.row(i) - c.row(a)).squaredNorm();
      int best = a;
      Scalar best_gain = 0;
      for (int b = 0; b < k; ++b) {
        if (b == a) continue;
        const auto nb = static_cast<Scalar>(sizes[static_cast<std::size_t>(b)]);
        const Scalar gain = removal - nb / (nb + 1) * (x.row(i) - c.row(b)).squaredNorm();
        if (gain > best_gain * (1 + 1e-12) + std::numeric_limits<Scalar>::epsilon() * removal) {
          best_gain = gain;
          best = b;
        }
      }
      if (best == a) continue;
      const auto nb = static_cast<Scalar>(sizes[static_cast<std::size_t>(best)]);
      c.row(a) = (c.row(a) * na - x.row(i)) / (na - 1);
      c.row(best) = (c.row(best) * nb + x.row(i)) / (nb + 1);
      --sizes[static_cast<std::size_t>(a)];
      ++sizes[static_cast<std::size_t>(best)];
      labels[static_cast<std::size_t>(i)] = best;
      moved = any = true;
    }
    if (!moved) break;
  }
  if (any) c = centroids_of<Scalar>(x, labels, k);
  return any;
}

template <typename Scalar>
ClusterModel<Scalar> lloyd(const MatrixX<Scalar>& x, MatrixX<Scalar> c, int k, const KMeansOptions& opt) {
  ClusterModel<Scalar> m;
  std::vector<int> labels;
  Scalar prev = assign_nearest(x, c, labels);
  repair_empty(x, c, labels, k);
  int it = 0;
  for (bool refined = false;;) {
    for (; it < opt.max_iterations; ++it) {
      c = centroids_of<Scalar>(x, labels, k);
      std::vector<int> next;
      assign_nearest(x, c, next);
      repair_empty(x, c, next, k);
      const Scalar cur = inertia_of<Scalar>(x, c, next);
      if (cur > prev * (1 + 1e-10) + std::numeric_limits<Scalar>::min())
        throw Error("kmeans: inertia increased during Lloyd iterations");
      prev = cur;
      if (next == labels) break;
      labels = std::move(next);
    }
    if (!opt.refine || refined) break;
    c = centroids_of<Scalar>(x, labels, k);
    if (!hartigan_moves(x, c, labels, k)) break;
    prev = inertia_of<Scalar>(x, c, labels);
    refined = true;  // one more Lloyd pass restores nearest-centroid labels
  }
  m.centroids = centroids_of<Scalar>(x, labels, k);
  m.labels = std::move(labels);
  m.inertia = inertia_of<Scalar>(x, m.centroids, m.labels);
  m.iterations = it;
  return m;
}

struct LabelIndex {
  std::vector<int> dense;  // labels renumbered 0..k-1 in order of first label value
  int k = 0;
};

inline LabelIndex compact_labels(std::span<const int> labels) {
  std::map<int, int> ids;
  for (int l : labels) {
    if (l < 0) throw Error("cluster labels must be non-negative");
    ids.emplace(l, 0);
  }
  int next = 0;
  for (auto& [label, id] : ids) id = next++;
  LabelIndex out;
  out.k = next;
  out.dense.reserve(labels.size());
  for (int l : labels) out.dense.push_back(ids[l]);
  return out;
}

template <typename Derived>
void check_points(const Eigen::MatrixBase<Derived>& x, std::span<const int> labels, const char* who) {
  if (static_cast<std::size_t>(x.rows()) != labels.size())
    throw Error(std::string(who) + ": " + std::to_string(labels.size()) + " labels for " +
                std::to_string(x.rows()) + " points");
  if (!x.allFinite()) throw Error(std::string(who) + ": points must be finite");
}

}  // namespace detail

/// Best of `restarts` k-means++/Lloyd runs by inertia (ties to the earliest restart).
template <typename Derived>
ClusterModel<typename Derived::Scalar> kmeans(const Eigen::MatrixBase<Derived>& points, int k,
                                              std::uint64_t seed, const KMeansOptions& opt = {}) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> x = points;
  if (k < 1) throw Error("kmeans: k must be >= 1");
  if (x.rows() < k)
    throw Error("kmeans: n = " + std::to_string(x.rows()) + " points is fewer than k = " + std::to_string(k));
  if (!x.allFinite()) throw Error("kmeans: points must be finite");
  if (opt.restarts < 1) throw Error("kmeans: restarts must be >= 1");
  ClusterModel<Scalar> best;
  bool have = false;
  for (int r = 0; r < opt.restarts; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    auto m = detail::lloyd(x, detail::plus_plus_seeds(x, k, rng), k, opt);
    m.restart = r;
    if (!have || m.inertia < best.inertia) {
      best = std::move(m);
      have = true;
    }
  }
  return best;
}

/// Mean silhouette; singletons contribute 0.
template <typename Derived>
double silhouette_score(const Eigen::MatrixBase<Derived>& points, std::span<const int> labels) {
  detail::check_points(points, labels, "silhouette_score");
  const auto idx = detail::compact_labels(labels);
  if (idx.k < 2) throw Error("silhouette_score: needs at least 2 clusters");
  const auto n = points.rows();
  std::vector<int> size(static_cast<std::size_t>(idx.k), 0);
  for (int l : idx.dense) ++size[static_cast<std::size_t>(l)];
  double total = 0;
  std::vector<double> sums(static_cast<std::size_t>(idx.k));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      sums[static_cast<std::size_t>(idx.dense[static_cast<std::size_t>(j)])] +=
          static_cast<double>((points.row(i) - points.row(j)).norm());
    }
    const int own = idx.dense[static_cast<std::size_t>(i)];
    if (size[static_cast<std::size_t>(own)] < 2) continue;
    const double a = sums[static_cast<std::size_t>(own)] / (size[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < idx.k; ++c)
      if (c != own) b = std::min(b, sums[static_cast<std::size_t>(c)] / size[static_cast<std::size_t>(c)]);
    const double denom = std::max(a, b);
    if (denom > 0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

/// Between/within dispersion ratio; returns kCalinskiHarabaszSentinel when trace(W) < 1e-30.
template <typename Derived>
double calinski_harabasz(const Eigen::MatrixBase<Derived>& points, std::span<const int> labels) {
  detail::check_points(points, labels, "calinski_harabasz");
  const auto idx = detail::compact_labels(labels);
  const auto n = points.rows();
  if (idx.k < 2 || idx.k >= n)
    throw Error("calinski_harabasz: needs 2 <= k < n (k = " + std::to_string(idx.k) +
                ", n = " + std::to_string(n) + ")");
  const Matrix x = points.template cast<double>();
  const Matrix c = detail::centroids_of<double>(x, idx.dense, idx.k);
  const RowVector mean = x.colwise().mean();
  std::vector<int> size(static_cast<std::size_t>(idx.k), 0);
  for (int l : idx.dense) ++size[static_cast<std::size_t>(l)];
  double between = 0;
  for (int j = 0; j < idx.k; ++j) between += size[static_cast<std::size_t>(j)] * (c.row(j) - mean).squaredNorm();
  const double within = detail::inertia_of<double>(x, c, idx.dense);
  if (within < 1e-30) return kCalinskiHarabaszSentinel;
  return (between / (idx.k - 1)) / (within / static_cast<double>(n - idx.k));
}

/// Mean over clusters of the worst (s_i + s_j) / d_ij ratio.
template <typename Derived>
double davies_bouldin(const Eigen::MatrixBase<Derived>& points, std::span<const int> labels) {
  detail::check_points(points, labels, "davies_bouldin");
  const auto idx = detail::compact_labels(labels);
  if (idx.k < 2) throw Error("davies_bouldin: needs at least 2 clusters");
  const Matrix x = points.template cast<double>();
  const Matrix c = detail::centroids_of<double>(x, idx.dense, idx.k);
  std::vector<double> spread(static_cast<std::size_t>(idx.k), 0.0);
  std::vector<int> size(static_cast<std::size_t>(idx.k), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int l = idx.dense[static_cast<std::size_t>(i)];
    spread[static_cast<std::size_t>(l)] += (x.row(i) - c.row(l)).norm();
    ++size[static_cast<std::size_t>(l)];
  }
  for (int j = 0; j < idx.k; ++j) spread[static_cast<std::size_t>(j)] /= size[static_cast<std::size_t>(j)];
  double total = 0;
  for (int i = 0; i < idx.k; ++i) {
    double worst = 0;
    for (int j = 0; j < idx.k; ++j) {
      if (j == i) continue;
      const double d = (c.row(i) - c.row(j)).norm();
      if (d == 0.0)
        throw Error("davies_bouldin: clusters " + std::to_string(i) + " and " + std::to_string(j) +
                    " have coincident centroids");
      worst = std::max(worst, (spread[static_cast<std::size_t>(i)] + spread[static_cast<std::size_t>(j)]) / d);
    }
    total += worst;
  }
  return total / idx.k;
}

struct ValidityScores {
  double silhouette = 0;
  double calinski_harabasz = 0;
  double davies_bouldin = 0;
};

template <typename Derived>
ValidityScores validity_scores(const Eigen::MatrixBase<Derived>& points, std::span<const int> labels) {
  return {silhouette_score(points, labels), calinski_harabasz(points, labels), davies_bouldin(points, labels)};
}

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

/// Minimum-cost assignment of rows to distinct columns (rows <= cols). Returns the column per row.
std::vector<int> hungarian_assignment(const Matrix& cost);

/// Relabels `labels` so they agree as much as possible with `reference` (both in [0, k)).
std::vector<int> align_labels(std::span<const int> labels, std::span<const int> reference, int k);

}  // namespace slac
