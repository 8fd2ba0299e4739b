#include <doctest.h>

#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "slac/stats.hpp"
#include "support.hpp"

using namespace slac;

namespace {

CohortDataset one_feature_cohort(const std::vector<std::vector<std::pair<double, double>>>& episodes) {
  CohortDataset c;
  c.feature_vocab = {"hr"};
  int id = 0;
  for (const auto& obs : episodes) {
    EpisodeRecord e;
    e.id = "e" + std::to_string(id++);
    e.static_vector = Vector::Zero(0);
    for (const auto& [t, v] : obs) e.triplets.push_back({t, 0, v});
    c.episodes.push_back(std::move(e));
  }
  return c;
}

}  // namespace

TEST_CASE("Kruskal-Wallis") {
  SUBCASE("hand case") {
    const std::vector<std::vector<double>> g{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
    const auto r = kruskal_wallis(g);
    CHECK(r.h == doctest::Approx(7.2).epsilon(1e-12));
    CHECK(r.p == doctest::Approx(std::exp(-3.6)).epsilon(1e-9));
  }
  SUBCASE("identical values") {
    const std::vector<std::vector<double>> g{{2, 2}, {2, 2, 2}};
    const auto r = kruskal_wallis(g);
    CHECK(r.h == 0.0);
    CHECK(r.p == 1.0);
  }
  SUBCASE("too little data") {
    CHECK_THROWS_AS(kruskal_wallis(std::vector<std::vector<double>>{{1, 2, 3}}), Error);
    CHECK_THROWS_AS(kruskal_wallis(std::vector<std::vector<double>>{{1}, {2}}), Error);
  }
  SUBCASE("ties and monotone transforms") {
    Rng rng(1);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<std::vector<double>> g(3);
      for (auto& grp : g)
        for (int i = 0; i < 4 + trial % 3; ++i) grp.push_back(std::floor(uniform_draw(rng) * 5));
      const auto r = kruskal_wallis(g);
      CHECK(r.h == doctest::Approx(oracle::kruskal_h(g)).epsilon(1e-10));
      auto t = g;
      for (auto& grp : t)
        for (auto& v : grp) v = std::exp(v) - 7.0;
      CHECK(kruskal_wallis(t).h == doctest::Approx(r.h).epsilon(1e-12));
      CHECK(r.p >= 0.0);
      CHECK(r.p <= 1.0);
    }
  }
}

TEST_CASE("mid-ranks") {
  const std::vector<double> v{3, 1, 3, 2, 3};
  CHECK(mid_ranks(v) == std::vector<double>{4, 1, 4, 2, 4});
  Rng rng(2);
  std::vector<double> x(40);
  for (auto& a : x) a = std::floor(uniform_draw(rng) * 8);
  CHECK(mid_ranks(x) == oracle::count_ranks(x));
}

TEST_CASE("chi-square upper tail") {
  for (int df = 1; df <= 10; ++df)
    for (double x = 0.0; x <= 50.0; x += 0.25) {
      const double expected = boost::math::gamma_q(df / 2.0, x / 2.0);
      CHECK(std::abs(chi_square_sf(x, df) - expected) <= 1e-10);
    }
  CHECK(chi_square_sf(0.0, 2) == 1.0);
  CHECK(chi_square_sf(2.0, 2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("hourly means with 95% intervals") {
  // cluster 0: two subjects at hour 3 with values 0 and 2; cluster 1: one subject; hour 4 equal values
  const auto c = one_feature_cohort({{{3.5, 0.0}, {4.5, 5.0}}, {{3.5, 2.0}, {4.5, 5.0}}, {{3.5, 9.0}}});
  const std::vector<int> labels{0, 0, 1};
  const auto rows = hourly_mean_ci(c, labels, "hr");
  REQUIRE(rows.size() == 2 * static_cast<std::size_t>(kHorizonHours));
  const auto& h3 = rows[3];
  CHECK(h3.cluster == 0);
  CHECK(h3.n == 2);
  CHECK(h3.mean == 1.0);
  CHECK(*h3.ci_high - h3.mean == doctest::Approx(1.96).epsilon(1e-12));
  CHECK(h3.mean - *h3.ci_low == doctest::Approx(1.96).epsilon(1e-12));
  const auto& h4 = rows[4];
  CHECK(*h4.ci_low == 5.0);
  CHECK(*h4.ci_high == 5.0);
  const auto& single = rows[static_cast<std::size_t>(kHorizonHours) + 3];
  CHECK(single.mean == 9.0);
  CHECK(!single.ci_low);
  CHECK(rows[0].empty());
  CHECK(!rows[0].ci_low);

  const FeatureStats stats{10.0, 2.0, 0};
  CHECK(hourly_mean_ci(c, labels, "hr", &stats)[3].mean == 12.0);
  CHECK_THROWS_AS(hourly_mean_ci(c, labels, "spo2"), Error);
}

TEST_CASE("PCA") {
  SUBCASE("points on a line") {
    Matrix x(5, 3);
    for (int i = 0; i < 5; ++i) x.row(i) = RowVector::LinSpaced(3, 1, 3) * (i - 2.0) + RowVector::Constant(3, 4.0);
    const auto p = pca_project(x, 2);
    CHECK(p.explained_variance_ratio(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(p.explained_variance_ratio(1)) < 1e-12);
    CHECK(std::abs(std::abs(p.components(0, 0)) - 1.0 / std::sqrt(14.0)) < 1e-12);
  }
  SUBCASE("rank-2 data keeps pairwise distances") {
    Rng rng(3);
    Matrix base(20, 2), mix(2, 5);
    for (Eigen::Index i = 0; i < base.size(); ++i) base.data()[i] = normal_draw(rng);
    for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] = normal_draw(rng);
    const Matrix x = base * mix;
    const auto p = pca_project(x, 2);
    for (Eigen::Index i = 0; i < 20; ++i)
      for (Eigen::Index j = i + 1; j < 20; ++j)
        CHECK((p.coordinates.row(i) - p.coordinates.row(j)).norm() ==
              doctest::Approx((x.row(i) - x.row(j)).norm()).epsilon(1e-9));
    CHECK(p.explained_variance_ratio(0) >= p.explained_variance_ratio(1));
    CHECK(p.explained_variance_ratio.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((p.components.transpose() * p.components - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("degenerate input") {
    CHECK_THROWS_AS(pca_project(Matrix::Constant(4, 3, 2.0), 2), Error);
    CHECK_THROWS_AS(pca_project(Matrix::Zero(1, 3), 2), Error);
  }
}

TEST_CASE("characterize") {
  const auto data = testing::prepare(testing::planted_spec(7));
  const auto before = data.cohort.episodes[5].triplets;
  const auto report = characterize(data.cohort, data.planted);

  SUBCASE("counts and proportions") {
    CHECK(report.clusters == 3);
    std::size_t total = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(report.counts[c] == static_cast<std::size_t>(std::count(data.planted.begin(), data.planted.end(),
                                                                     static_cast<int>(c))));
      CHECK(report.proportions[c] == doctest::Approx(static_cast<double>(report.counts[c]) / 300.0));
      total += report.counts[c];
    }
    CHECK(total == 300);
    CHECK(data.cohort.episodes[5].triplets == before);
  }
  SUBCASE("planted differences are flagged") {
    std::size_t series_flagged = 0, static_flagged = 0, static_tests = 0;
    for (const auto& t : report.tests) {
      if (data.cohort.feature_index(t.feature) >= 0) series_flagged += t.significant;
      else {
        ++static_tests;
        static_flagged += t.significant;
      }
    }
    CHECK(series_flagged == data.cohort.num_features());
    CHECK(static_tests == 4);
    CHECK(static_flagged >= 2);
    CHECK(report.hourly.size() == data.cohort.num_features());
  }
  SUBCASE("shuffled labels are rarely flagged") {
    auto shuffled = data.planted;
    Rng rng(8);
    shuffle_range(shuffled.begin(), shuffled.end(), rng);
    std::size_t flagged = 0;
    const auto null_report = characterize(data.cohort, shuffled);
    for (const auto& t : null_report.tests) flagged += t.significant;
    CHECK(flagged <= 3);
  }
  SUBCASE("static summaries are in raw units") {
    for (const auto& s : report.statics)
      if (s.feature.rfind("static_", 0) == 0) {
        REQUIRE(s.sd.has_value());
        CHECK(*s.sd > 1.0);
      } else {
        CHECK(!s.sd);
        CHECK(s.mean >= 0.0);
        CHECK(s.mean <= 1.0);
      }
    std::ostringstream csv;
    write_tests_csv(csv, report);
    CHECK(csv.str().find("static_0") != std::string::npos);
  }
}
