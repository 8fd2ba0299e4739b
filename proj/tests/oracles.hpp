#pragma once

// Independent reference implementations. Deliberately naive: loops over
// points, no shared helpers with the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "slac/common.hpp"

namespace slac::oracle {

inline double dist(const Matrix& x, Eigen::Index i, Eigen::Index j) {
  double s = 0;
  for (Eigen::Index c = 0; c < x.cols(); ++c) s += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
  return std::sqrt(s);
}

inline int num_clusters(const std::vector<int>& labels) {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

inline Matrix centroids(const Matrix& x, const std::vector<int>& labels, int k) {
  Matrix c = Matrix::Zero(k, x.cols());
  std::vector<double> n(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (Eigen::Index d = 0; d < x.cols(); ++d) c(labels[i], d) += x(static_cast<Eigen::Index>(i), d);
    n[static_cast<std::size_t>(labels[i])] += 1;
  }
  for (int j = 0; j < k; ++j)
    for (Eigen::Index d = 0; d < x.cols(); ++d) c(j, d) /= n[static_cast<std::size_t>(j)];
  return c;
}

inline double inertia(const Matrix& x, const std::vector<int>& labels) {
  const int k = num_clusters(labels);
  const Matrix c = centroids(x, labels, k);
  double s = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
      const double diff = x(static_cast<Eigen::Index>(i), d) - c(labels[i], d);
      s += diff * diff;
    }
  return s;
}

/// Minimum within-cluster sum of squares over every labeling with k nonempty clusters.
inline double exhaustive_min_inertia(const Matrix& x, int k) {
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<int> labels(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<int> seen(static_cast<std::size_t>(k), 0);
    for (int l : labels) seen[static_cast<std::size_t>(l)] = 1;
    if (std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }))
      best = std::min(best, inertia(x, labels));
    std::size_t i = 0;
    while (i < n && ++labels[i] == k) labels[i++] = 0;
    if (i == n) break;
  }
  return best;
}

inline double silhouette(const Matrix& x, const std::vector<int>& labels) {
  const int k = num_clusters(labels);
  const auto n = labels.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sum(static_cast<std::size_t>(k), 0), cnt(static_cast<std::size_t>(k), 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sum[static_cast<std::size_t>(labels[j])] += dist(x, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      cnt[static_cast<std::size_t>(labels[j])] += 1;
    }
    const auto own = static_cast<std::size_t>(labels[i]);
    if (cnt[own] == 0) continue;  // singleton
    const double a = sum[own] / cnt[own];
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sum.size(); ++c)
      if (c != own && cnt[c] > 0) b = std::min(b, sum[c] / cnt[c]);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

/// Ratio of between- and within-cluster scatter traces, built as explicit p x p matrices.
inline double calinski_harabasz(const Matrix& x, const std::vector<int>& labels) {
  const int k = num_clusters(labels);
  const auto n = static_cast<double>(labels.size());
  const Matrix c = centroids(x, labels, k);
  Vector mean = Vector::Zero(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) mean += x.row(i).transpose();
  mean /= n;
  Matrix between = Matrix::Zero(x.cols(), x.cols());
  Matrix within = Matrix::Zero(x.cols(), x.cols());
  for (int j = 0; j < k; ++j) {
    const double nj = static_cast<double>(std::count(labels.begin(), labels.end(), j));
    const Vector d = c.row(j).transpose() - mean;
    between += nj * d * d.transpose();
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Vector d = x.row(static_cast<Eigen::Index>(i)).transpose() - c.row(labels[i]).transpose();
    within += d * d.transpose();
  }
  return (between.trace() / (k - 1)) / (within.trace() / (n - k));
}

inline double davies_bouldin(const Matrix& x, const std::vector<int>& labels) {
  const int k = num_clusters(labels);
  const Matrix c = centroids(x, labels, k);
  std::vector<double> s(static_cast<std::size_t>(k), 0), cnt(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s[static_cast<std::size_t>(labels[i])] += (x.row(static_cast<Eigen::Index>(i)) - c.row(labels[i])).norm();
    cnt[static_cast<std::size_t>(labels[i])] += 1;
  }
  for (int j = 0; j < k; ++j) s[static_cast<std::size_t>(j)] /= cnt[static_cast<std::size_t>(j)];
  double total = 0;
  for (int i = 0; i < k; ++i) {
    double worst = 0;
    for (int j = 0; j < k; ++j)
      if (j != i)
        worst = std::max(worst, (s[static_cast<std::size_t>(i)] + s[static_cast<std::size_t>(j)]) /
                                    (c.row(i) - c.row(j)).norm());
    total += worst;
  }
  return total / k;
}

/// Rank of each value by counting: #smaller + (#equal + 1) / 2.
inline std::vector<double> count_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      less += w < v[i];
      equal += w == v[i];
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

/// H with tie correction from counted ranks.
inline double kruskal_h(const std::vector<std::vector<double>>& groups) {
  std::vector<double> pooled;
  for (const auto& g : groups) pooled.insert(pooled.end(), g.begin(), g.end());
  const auto ranks = count_ranks(pooled);
  const double n = static_cast<double>(pooled.size());
  double h = 0;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    double rbar = 0;
    for (std::size_t i = 0; i < g.size(); ++i) rbar += ranks[offset + i];
    rbar /= static_cast<double>(g.size());
    h += static_cast<double>(g.size()) * (rbar - (n + 1) / 2) * (rbar - (n + 1) / 2);
    offset += g.size();
  }
  h *= 12.0 / (n * (n + 1));
  double ties = 0;
  std::vector<bool> done(pooled.size(), false);
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    if (done[i]) continue;
    double t = 0;
    for (std::size_t j = i; j < pooled.size(); ++j)
      if (pooled[j] == pooled[i]) {
        done[j] = true;
        ++t;
      }
    ties += t * t * t - t;
  }
  const double correction = 1 - ties / (n * n * n - n);
  return correction <= 0 ? 0.0 : h / correction;
}

}  // namespace slac::oracle
