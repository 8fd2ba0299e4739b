#include "slac/cluster.hpp"

namespace slac {

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw Error("adjusted_rand_index: labelings differ in length");
  const auto n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  const auto ia = detail::compact_labels(a);
  const auto ib = detail::compact_labels(b);
  Matrix table = Matrix::Zero(ia.k, ib.k);
  for (std::size_t i = 0; i < a.size(); ++i) table(ia.dense[i], ib.dense[i]) += 1.0;
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_cells = 0, sum_rows = 0, sum_cols = 0;
  for (Eigen::Index i = 0; i < table.rows(); ++i)
    for (Eigen::Index j = 0; j < table.cols(); ++j) sum_cells += pairs(table(i, j));
  for (Eigen::Index i = 0; i < table.rows(); ++i) sum_rows += pairs(table.row(i).sum());
  for (Eigen::Index j = 0; j < table.cols(); ++j) sum_cols += pairs(table.col(j).sum());
  const double expected = sum_rows * sum_cols / pairs(n);
  const double max_index = 0.5 * (sum_rows + sum_cols);
  // Both labelings trivial (one cluster, or all singletons): identical structure.
  if (max_index == expected) return 1.0;
  return (sum_cells - expected) / (max_index - expected);
}

std::vector<int> hungarian_assignment(const Matrix& cost) {
  const auto n = static_cast<int>(cost.rows());
  const auto m = static_cast<int>(cost.cols());
  if (n > m) throw Error("hungarian_assignment: more rows than columns");
  if (!cost.allFinite()) throw Error("hungarian_assignment: costs must be finite");
  // Shortest augmenting paths with row/column potentials, 1-based.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> match(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<bool> used(static_cast<std::size_t>(m) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = match[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (match[static_cast<std::size_t>(j)] > 0) out[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return out;
}

std::vector<int> align_labels(std::span<const int> labels, std::span<const int> reference, int k) {
  if (labels.size() != reference.size()) throw Error("align_labels: labelings differ in length");
  Matrix overlap = Matrix::Zero(k, k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k || reference[i] < 0 || reference[i] >= k)
      throw Error("align_labels: label outside [0, k)");
    overlap(labels[i], reference[i]) += 1.0;
  }
  const auto map = hungarian_assignment(-overlap);
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = map[static_cast<std::size_t>(labels[i])];
  return out;
}

}  // namespace slac
