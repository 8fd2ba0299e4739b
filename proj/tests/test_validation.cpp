#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "slac/validation.hpp"
#include "support.hpp"

using namespace slac;

namespace {

Matrix gaussian(Rng& rng, Eigen::Index r, Eigen::Index c, double shift = 0.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal_draw(rng) + shift;
  return m;
}

Matrix rows_of(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

ModelConfig small_config() {
  ModelConfig c;
  c.dim = 8;
  c.heads = 2;
  c.seed = 4;
  return c;
}

testing::PreparedCohort small_cohort(std::uint64_t seed) {
  SynthSpec spec = testing::planted_spec(seed);
  spec.n_episodes = 60;
  spec.n_ts_features = 4;
  return testing::prepare(spec);
}

}  // namespace

TEST_CASE("fold plans") {
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) labels.push_back(i % 4 == 0 ? 2 : i % 2);
  const auto plan = make_folds(labels, 0.15, 10, 3);
  REQUIRE(plan.folds.size() == 10);
  CHECK(plan.test.size() == doctest::Approx(30.0).epsilon(0.1));
  std::size_t min_val = labels.size(), max_val = 0;
  for (const auto& f : plan.folds) {
    std::vector<int> seen(labels.size(), 0);
    for (auto i : f.train) ++seen[i];
    for (auto i : f.validation) ++seen[i];
    for (auto i : plan.test) ++seen[i];
    CHECK(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
    min_val = std::min(min_val, f.validation.size());
    max_val = std::max(max_val, f.validation.size());
    for (int c = 0; c < 3; ++c)
      CHECK(std::count_if(f.validation.begin(), f.validation.end(), [&](std::size_t i) { return labels[i] == c; }) >= 1);
  }
  CHECK(max_val - min_val <= 1);
  std::vector<std::size_t> all_val;
  for (const auto& f : plan.folds) all_val.insert(all_val.end(), f.validation.begin(), f.validation.end());
  std::sort(all_val.begin(), all_val.end());
  CHECK(std::adjacent_find(all_val.begin(), all_val.end()) == all_val.end());
  CHECK(all_val.size() + plan.test.size() == labels.size());

  const auto again = make_folds(labels, 0.15, 10, 3);
  CHECK(again.test == plan.test);
  CHECK(again.folds[4].validation == plan.folds[4].validation);

  labels.push_back(7);
  CHECK_THROWS_WITH_AS(make_folds(labels, 0.15, 10, 3), doctest::Contains("class 7"), Error);
}

TEST_CASE("minimum-weight matching") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 2 * (1 + trial % 4);
    const Matrix x = gaussian(rng, n, 2);
    const auto pairs = min_weight_matching(x);
    REQUIRE(pairs.size() == static_cast<std::size_t>(n / 2));
    double got = 0;
    std::vector<int> used(static_cast<std::size_t>(n), 0);
    for (auto [i, j] : pairs) {
      got += (x.row(i) - x.row(j)).norm();
      ++used[static_cast<std::size_t>(i)];
      ++used[static_cast<std::size_t>(j)];
    }
    CHECK(std::all_of(used.begin(), used.end(), [](int v) { return v == 1; }));
    // brute force over all perfect matchings
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double c = 0;
      for (Eigen::Index k = 0; k < n; k += 2) c += (x.row(perm[k]) - x.row(perm[k + 1])).norm();
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
  }
  CHECK_THROWS_AS(min_weight_matching(Matrix::Zero(3, 2)), Error);
}

TEST_CASE("cross-match test") {
  Rng rng(2);
  const Matrix a = gaussian(rng, 20, 3), b = gaussian(rng, 21, 3);

  SUBCASE("order of the points does not matter") {
    Matrix a2 = a.colwise().reverse();
    const auto r1 = crossmatch_test(a, b, 199, 5);
    const auto r2 = crossmatch_test(a2, b, 199, 5);
    CHECK(r1.statistic == r2.statistic);
    CHECK(r1.p_value == r2.p_value);
    CHECK(r1.p_value > 0.0);
    CHECK(r1.p_value <= 1.0);
  }
  SUBCASE("odd totals drop one point") {
    const auto r = crossmatch_test(a, b, 99, 5);
    REQUIRE(r.dropped.has_value());
    CHECK(r.n_a + r.n_b == 40);
  }
  SUBCASE("permutation null has the hypergeometric mean") {
    const auto r = crossmatch_test(a, b.topRows(20), 4000, 6);
    const double mean = std::accumulate(r.null_samples.begin(), r.null_samples.end(), 0.0) / 4000.0;
    CHECK(mean == doctest::Approx(20.0 * 20.0 / 39.0).epsilon(0.02));
    CHECK(!r.dropped);
  }
  SUBCASE("identical groups cross everywhere") {
    const auto r = crossmatch_test(a, a, 99, 1);
    CHECK(r.statistic == 20);
    CHECK(r.p_value == 1.0);
  }
  SUBCASE("separated groups never cross") {
    const auto r = crossmatch_test(a, gaussian(rng, 20, 3, 50.0), 999, 1);
    CHECK(r.statistic == 0);
    CHECK(r.p_value == doctest::Approx(0.001));
  }
  CHECK_THROWS_AS(crossmatch_test(a, Matrix::Zero(3, 2)), Error);
}

TEST_CASE("phenotype classifier") {
  const auto data = small_cohort(3);
  const auto pre = EncoderState::initialize(small_config(), data.cohort.num_features(), data.cohort.static_width(), 2,
                                            vocab_hash(data.cohort.feature_vocab));
  const auto plan = make_folds(data.planted, 0.15, 3, 1);
  PhenotypeTrainOptions opt;
  opt.max_epochs = 6;
  opt.patience = 3;
  opt.learning_rate = 3e-3;
  opt.max_folds = 1;

  SUBCASE("planted labels are learnable, shuffled ones are not") {
    const auto real = train_phenotype_classifier(data.cohort, data.planted, pre, plan, opt);
    auto shuffled = data.planted;
    Rng rng(4);
    shuffle_range(shuffled.begin(), shuffled.end(), rng);
    const auto noise = train_phenotype_classifier(data.cohort, shuffled, pre, make_folds(shuffled, 0.15, 3, 1), opt);
    REQUIRE(real.folds.size() == 1);
    CHECK(real.folds[0].val_accuracy >= 0.8);
    CHECK(real.folds[0].val_accuracy > noise.folds[0].val_accuracy);
    CHECK(real.test_accuracy >= 0.8);
  }
  SUBCASE("transfer starts from the pretrained encoder") {
    opt.max_epochs = 0;
    const auto transfer = train_phenotype_classifier(data.cohort, data.planted, pre, plan, opt);
    CHECK(represent_all(data.cohort, transfer.state) == represent_all(data.cohort, pre));
    opt.transfer = false;
    const auto fresh = train_phenotype_classifier(data.cohort, data.planted, pre, plan, opt);
    CHECK(represent_all(data.cohort, fresh.state) != represent_all(data.cohort, pre));
  }
  SUBCASE("cross-cohort application checks the layout") {
    auto classifier = train_phenotype_classifier(data.cohort, data.planted, pre, plan, opt);
    const auto other = small_cohort(9);
    CHECK(cross_apply(classifier.state, data.cohort, other.cohort).size() == other.cohort.size());
    auto renamed = other.cohort;
    renamed.static_slots[0] = "height";
    CHECK_THROWS_WITH_AS(cross_apply(classifier.state, data.cohort, renamed), doctest::Contains("height"), Error);
  }
}

TEST_CASE("phenotype distribution comparison") {
  SynthSpec spec = testing::planted_spec(11);
  spec.n_episodes = 200;
  const auto a = testing::prepare(spec);
  const Matrix reps_a = testing::feature_means(a.cohort);

  SUBCASE("a cohort matches itself") {
    const auto cmp = compare_phenotype_distributions(a.planted, reps_a, a.planted, reps_a, 199, 1);
    CHECK(cmp.reproduced);
    CHECK(cmp.mapping == std::vector<int>{0, 1, 2});
  }
  SUBCASE("halves of one cohort usually agree") {
    int reproduced = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
      std::vector<std::size_t> idx(a.planted.size());
      std::iota(idx.begin(), idx.end(), 0);
      Rng rng(s);
      shuffle_range(idx.begin(), idx.end(), rng);
      const std::span<const std::size_t> first(idx.data(), 100), second(idx.data() + 100, 100);
      std::vector<int> la, lb;
      for (auto i : first) la.push_back(a.planted[i]);
      for (auto i : second) lb.push_back(a.planted[i]);
      reproduced += compare_phenotype_distributions(la, rows_of(reps_a, first), lb, rows_of(reps_a, second), 199, s)
                        .reproduced;
    }
    CHECK(reproduced >= 6);
  }
  SUBCASE("a shifted cohort is detected") {
    SynthSpec shifted = spec;
    shifted.seed = 12;
    shifted.separation = 6.0;
    const auto b = testing::prepare(shifted, &a.cohort.normalization);
    const auto cmp = compare_phenotype_distributions(a.planted, reps_a, b.planted, testing::feature_means(b.cohort), 199, 2);
    CHECK(!cmp.reproduced);
  }
  SUBCASE("phenotype counts must agree") {
    std::vector<int> two(a.planted.size());
    for (std::size_t i = 0; i < two.size(); ++i) two[i] = static_cast<int>(i % 2);
    CHECK_THROWS_WITH_AS(compare_phenotype_distributions(a.planted, reps_a, two, reps_a), doctest::Contains("phenotypes"),
                         Error);
  }
}
