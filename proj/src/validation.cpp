#include "slac/validation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include <json.hpp>

namespace slac {

FoldPlan make_folds(std::span<const int> labels, double test_fraction, int k, std::uint64_t seed) {
  if (k < 2) throw Error("make_folds: need at least 2 folds");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw Error("make_folds: test fraction must lie in [0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  FoldPlan plan;
  plan.folds.resize(static_cast<std::size_t>(k));
  std::size_t cursor = 0;  // rotates fold starts so fold sizes stay balanced
  for (auto& [label, members] : by_class) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
    shuffle_range(members.begin(), members.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(members.size())));
    if (members.size() - n_test < static_cast<std::size_t>(k))
      throw Error("make_folds: class " + std::to_string(label) + " has " + std::to_string(members.size() - n_test) +
                  " members in the pool, fewer than k = " + std::to_string(k));
    plan.test.insert(plan.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    for (std::size_t i = n_test; i < members.size(); ++i)
      plan.folds[(cursor + i - n_test) % static_cast<std::size_t>(k)].validation.push_back(members[i]);
    cursor += members.size() - n_test;
  }
  std::sort(plan.test.begin(), plan.test.end());
  for (auto& f : plan.folds) std::sort(f.validation.begin(), f.validation.end());
  for (std::size_t f = 0; f < plan.folds.size(); ++f)
    for (std::size_t g = 0; g < plan.folds.size(); ++g)
      if (g != f)
        plan.folds[f].train.insert(plan.folds[f].train.end(), plan.folds[g].validation.begin(),
                                   plan.folds[g].validation.end());
  for (auto& f : plan.folds) std::sort(f.train.begin(), f.train.end());
  return plan;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth, std::span<const std::size_t> rows) {
  if (predicted.size() != truth.size()) throw Error("accuracy: label vectors differ in length");
  std::size_t hits = 0, total = 0;
  auto count = [&](std::size_t i) {
    hits += predicted[i] == truth[i];
    ++total;
  };
  if (rows.empty())
    for (std::size_t i = 0; i < predicted.size(); ++i) count(i);
  else
    for (auto i : rows) count(i);
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

PhenotypeClassifier train_phenotype_classifier(const CohortDataset& cohort, std::span<const int> labels,
                                               const EncoderState& pretrained, const FoldPlan& plan,
                                               const PhenotypeTrainOptions& opt) {
  pretrained.check_compatible(cohort);
  if (labels.size() != cohort.size()) throw Error("train_phenotype_classifier: labels do not cover the cohort");
  if (plan.folds.empty()) throw Error("train_phenotype_classifier: fold plan is empty");
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  const auto n_folds = opt.max_folds < 0 ? plan.folds.size()
                                         : std::min(plan.folds.size(), static_cast<std::size_t>(opt.max_folds));
  if (n_folds == 0) throw Error("train_phenotype_classifier: no folds selected");

  PhenotypeClassifier out;
  double best_acc = -1.0;
  for (std::size_t f = 0; f < n_folds; ++f) {
    const auto fold_seed = derive_seed(opt.seed, 0x666f6c64, f);
    EncoderState state = opt.transfer ? pretrained
                                      : EncoderState::initialize(pretrained.config, pretrained.num_features,
                                                                 pretrained.static_width, fold_seed,
                                                                 pretrained.feature_vocab_hash);
    state.reset_classifier(k, derive_seed(fold_seed, 1));
    ClassifierTrainOptions co;
    co.max_epochs = opt.max_epochs;
    co.patience = opt.patience;
    co.batch_size = opt.batch_size;
    co.learning_rate = opt.learning_rate;
    co.seed = fold_seed;
    co.split = IndexSplit{plan.folds[f].train, plan.folds[f].validation};
    const auto trained = train_classifier(cohort, labels, state, co);
    FoldMetrics m;
    m.fold = static_cast<int>(f);
    m.val_accuracy = accuracy(predict_classes(cohort, state), labels, plan.folds[f].validation);
    m.val_loss = trained.best_val_loss;
    m.epochs = trained.epochs_run;
    m.best_epoch = trained.best_epoch;
    m.val_loss_history = trained.val_loss;
    out.folds.push_back(m);
    if (m.val_accuracy > best_acc) {
      best_acc = m.val_accuracy;
      out.best_fold = m.fold;
      out.state = std::move(state);
    }
  }
  if (!plan.test.empty()) out.test_accuracy = accuracy(predict_classes(cohort, out.state), labels, plan.test);
  return out;
}

std::vector<int> cross_apply(const EncoderState& state, const CohortDataset& source, const CohortDataset& other) {
  std::vector<std::string> problems;
  auto diff = [&](const std::vector<std::string>& a, const std::vector<std::string>& b, const char* what) {
    std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    for (const auto& x : sa)
      if (!sb.count(x)) problems.push_back(std::string(what) + " '" + x + "' missing from target cohort");
    for (const auto& x : sb)
      if (!sa.count(x)) problems.push_back(std::string(what) + " '" + x + "' not in source cohort");
    if (problems.empty() && a != b) problems.push_back(std::string(what) + " order differs");
  };
  diff(source.feature_vocab, other.feature_vocab, "feature");
  diff(source.static_slots, other.static_slots, "static slot");
  if (!problems.empty()) {
    std::string msg = "cross_apply: cohorts are incompatible:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(msg);
  }
  state.check_compatible(other);
  return predict_classes(other, state);
}

namespace {

std::vector<std::pair<int, int>> exact_matching(const Matrix& dist) {
  const int n = static_cast<int>(dist.rows());
  const std::size_t full = (std::size_t{1} << n) - 1;
  // best[mask] = min cost to match the points in mask (mask holds an even count).
  std::vector<double> best(full + 1, std::numeric_limits<double>::infinity());
  std::vector<int> choice(full + 1, -1);
  best[0] = 0.0;
  for (std::size_t mask = 1; mask <= full; ++mask) {
    if (std::popcount(mask) % 2 != 0) continue;
    const int i = std::countr_zero(mask);
    for (int j = i + 1; j < n; ++j) {
      if (!(mask >> j & 1U)) continue;
      const auto rest = mask & ~(std::size_t{1} << i) & ~(std::size_t{1} << j);
      const double c = best[rest] + dist(i, j);
      if (c < best[mask]) {
        best[mask] = c;
        choice[mask] = j;
      }
    }
  }
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t mask = full; mask != 0;) {
    const int i = std::countr_zero(mask);
    const int j = choice[mask];
    pairs.emplace_back(i, j);
    mask &= ~(std::size_t{1} << i) & ~(std::size_t{1} << j);
  }
  return pairs;
}

std::vector<std::pair<int, int>> greedy_matching(const Matrix& dist) {
  const int n = static_cast<int>(dist.rows());
  struct Edge {
    double d;
    int i, j;
  };
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) edges.push_back({dist(i, j), i, j});
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.d, a.i, a.j) < std::tie(b.d, b.i, b.j);
  });
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& e : edges) {
    if (used[static_cast<std::size_t>(e.i)] || used[static_cast<std::size_t>(e.j)]) continue;
    used[static_cast<std::size_t>(e.i)] = used[static_cast<std::size_t>(e.j)] = true;
    pairs.emplace_back(e.i, e.j);
  }
  return pairs;
}

int cross_pairs(const std::vector<std::pair<int, int>>& pairs, const std::vector<char>& group) {
  int c = 0;
  for (auto [i, j] : pairs) c += group[static_cast<std::size_t>(i)] != group[static_cast<std::size_t>(j)];
  return c;
}

}  // namespace

std::vector<std::pair<int, int>> min_weight_matching(const Matrix& points) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n % 2 != 0) throw Error("min_weight_matching: needs an even number of points");
  if (n == 0) return {};
  Matrix dist(points.rows(), points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    for (Eigen::Index j = 0; j < points.rows(); ++j) dist(i, j) = (points.row(i) - points.row(j)).norm();
  return n <= kExactMatchingLimit ? exact_matching(dist) : greedy_matching(dist);
}

CrossMatchResult crossmatch_test(const Matrix& a, const Matrix& b, int n_perm, std::uint64_t seed) {
  if (a.rows() == 0 || b.rows() == 0) throw Error("crossmatch_test: both groups need at least one point");
  if (a.cols() != b.cols()) throw Error("crossmatch_test: groups have different widths");
  if (!a.allFinite() || !b.allFinite()) throw Error("crossmatch_test: points must be finite");
  if (n_perm < 1) throw Error("crossmatch_test: need at least one permutation");

  // Canonical order (lexicographic on coordinates, then group) makes the
  // result independent of the order points were supplied in.
  struct Item {
    RowVector x;
    char group;
  };
  std::vector<Item> items;
  for (Eigen::Index i = 0; i < a.rows(); ++i) items.push_back({a.row(i), 0});
  for (Eigen::Index i = 0; i < b.rows(); ++i) items.push_back({b.row(i), 1});
  std::sort(items.begin(), items.end(), [](const Item& l, const Item& r) {
    const auto lv = std::span(l.x.data(), static_cast<std::size_t>(l.x.size()));
    const auto rv = std::span(r.x.data(), static_cast<std::size_t>(r.x.size()));
    if (std::lexicographical_compare(lv.begin(), lv.end(), rv.begin(), rv.end())) return true;
    if (std::lexicographical_compare(rv.begin(), rv.end(), lv.begin(), lv.end())) return false;
    return l.group < r.group;
  });

  CrossMatchResult r;
  Rng rng(seed);
  if (items.size() % 2 != 0) {
    const auto drop = std::min(items.size() - 1,
                               static_cast<std::size_t>(uniform_draw(rng) * static_cast<double>(items.size())));
    r.dropped = drop;
    items.erase(items.begin() + static_cast<std::ptrdiff_t>(drop));
  }
  std::vector<char> group;
  Matrix pooled(static_cast<Eigen::Index>(items.size()), a.cols());
  for (std::size_t i = 0; i < items.size(); ++i) {
    pooled.row(static_cast<Eigen::Index>(i)) = items[i].x;
    group.push_back(items[i].group);
  }
  r.n_a = static_cast<std::size_t>(std::count(group.begin(), group.end(), 0));
  r.n_b = group.size() - r.n_a;
  if (r.n_a == 0 || r.n_b == 0) throw Error("crossmatch_test: a group became empty after balancing");

  const auto pairs = min_weight_matching(pooled);
  r.statistic = cross_pairs(pairs, group);
  int at_most = 0;
  auto perm = group;
  r.null_samples.reserve(static_cast<std::size_t>(n_perm));
  for (int p = 0; p < n_perm; ++p) {
    shuffle_range(perm.begin(), perm.end(), rng);
    const int s = cross_pairs(pairs, perm);
    r.null_samples.push_back(s);
    at_most += s <= r.statistic;
  }
  r.p_value = (1.0 + at_most) / (1.0 + n_perm);
  return r;
}

PhenotypeComparison compare_phenotype_distributions(std::span<const int> labels_a, const Matrix& reps_a,
                                                    std::span<const int> labels_b, const Matrix& reps_b,
                                                    int n_perm, std::uint64_t seed) {
  if (labels_a.size() != static_cast<std::size_t>(reps_a.rows()) ||
      labels_b.size() != static_cast<std::size_t>(reps_b.rows()))
    throw Error("compare_phenotype_distributions: labels and representations differ in length");
  if (reps_a.cols() != reps_b.cols()) throw Error("compare_phenotype_distributions: representation widths differ");
  const auto ia = detail::compact_labels(labels_a);
  const auto ib = detail::compact_labels(labels_b);
  if (ia.k != ib.k)
    throw Error("compare_phenotype_distributions: cohort A has " + std::to_string(ia.k) + " phenotypes, cohort B has " +
                std::to_string(ib.k));
  const int k = ia.k;
  const Matrix ca = detail::centroids_of<double>(reps_a, ia.dense, k);
  const Matrix cb = detail::centroids_of<double>(reps_b, ib.dense, k);
  Matrix cost(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) cost(i, j) = (cb.row(i) - ca.row(j)).norm();
  PhenotypeComparison out;
  out.mapping = hungarian_assignment(cost);
  out.reproduced = true;
  for (int p = 0; p < k; ++p) {
    const auto b_cluster = static_cast<int>(std::find(out.mapping.begin(), out.mapping.end(), p) - out.mapping.begin());
    auto gather = [](const Matrix& reps, const std::vector<int>& dense, int c) {
      std::vector<Eigen::Index> rows;
      for (std::size_t i = 0; i < dense.size(); ++i)
        if (dense[i] == c) rows.push_back(static_cast<Eigen::Index>(i));
      Matrix m(static_cast<Eigen::Index>(rows.size()), reps.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = reps.row(rows[i]);
      return m;
    };
    const Matrix ga = gather(reps_a, ia.dense, p);
    const Matrix gb = gather(reps_b, ib.dense, b_cluster);
    auto res = crossmatch_test(ga, gb, n_perm,
                               derive_seed(seed, static_cast<std::uint64_t>(p)));
    out.reproduced = out.reproduced && res.p_value > 0.05;
    out.per_phenotype.push_back(std::move(res));
  }
  return out;
}

std::string validation_report_json(const PhenotypeClassifier& c, const std::optional<PhenotypeComparison>& cmp) {
  nlohmann::ordered_json j;
  auto folds = nlohmann::ordered_json::array();
  for (const auto& f : c.folds)
    folds.push_back({{"fold", f.fold},
                     {"val_accuracy", f.val_accuracy},
                     {"val_loss", f.val_loss},
                     {"epochs", f.epochs},
                     {"best_epoch", f.best_epoch}});
  j["folds"] = folds;
  j["best_fold"] = c.best_fold;
  j["test_accuracy"] = c.test_accuracy;
  if (cmp) {
    auto per = nlohmann::ordered_json::array();
    for (std::size_t p = 0; p < cmp->per_phenotype.size(); ++p) {
      const auto& r = cmp->per_phenotype[p];
      per.push_back({{"phenotype", p},
                     {"statistic", r.statistic},
                     {"p", r.p_value},
                     {"n_a", r.n_a},
                     {"n_b", r.n_b}});
    }
    j["mapping"] = cmp->mapping;
    j["phenotypes"] = per;
    j["verdict"] = cmp->reproduced ? "reproduced" : "not reproduced";
  }
  return j.dump(2);
}

}  // namespace slac
