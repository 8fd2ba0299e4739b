#include <doctest.h>

#include <cmath>
#include <sstream>

#include "slac/cohort.hpp"
#include "slac/synth.hpp"

using namespace slac;

namespace {

CohortDataset from_csv(const std::string& triplets, const std::string& statics = "episode_id,age\ne1,40\n") {
  std::istringstream t(triplets), s(statics);
  return parse_cohort(t, s);
}

ClinicalRangeTable ranges_for(std::initializer_list<std::pair<const char*, std::pair<double, double>>> r) {
  ClinicalRangeTable table;
  for (const auto& [name, range] : r) table.ranges[name] = range;
  return table;
}

std::vector<double> values_of(const CohortDataset& c) {
  std::vector<double> v;
  for (const auto& e : c.episodes)
    for (const auto& t : e.triplets) v.push_back(t.value);
  return v;
}

}  // namespace

TEST_CASE("parse_cohort reports the offending line for non-numeric values") {
  const std::string csv = "episode_id,time_hours,feature,value\ne1,0.5,hr,80\ne1,1.5,hr,abc\n";
  CHECK_THROWS_WITH_AS(from_csv(csv), doctest::Contains("line 3"), Error);
}

TEST_CASE("parse, write and parse again is bit-exact") {
  const auto synth = generate(SynthSpec{.n_episodes = 12, .n_ts_features = 3, .seed = 9});
  std::ostringstream t1, s1, m1;
  write_cohort(synth.cohort, t1, s1, &m1);
  std::istringstream ti(t1.str()), si(s1.str()), mi(m1.str());
  const auto back = parse_cohort(ti, si, &mi);
  std::ostringstream t2, s2, m2;
  write_cohort(back, t2, s2, &m2);
  CHECK(t1.str() == t2.str());
  CHECK(s1.str() == s2.str());
  CHECK(m1.str() == m2.str());
  CHECK(values_of(back) == values_of(synth.cohort));
}

TEST_CASE("clip_outliers removes out-of-range triplets and keeps the closed boundary") {
  const auto c = from_csv("episode_id,time_hours,feature,value\ne1,0,gcs,10000\ne1,1,gcs,500\ne1,2,gcs,3\n");
  ClipReport report;
  const auto clipped = clip_outliers(c, ranges_for({{"gcs", {0, 500}}}), &report);
  CHECK(values_of(clipped) == std::vector<double>{500, 3});
  CHECK(report.removed.at("gcs") == 1);

  const auto untouched = clip_outliers(clipped, ranges_for({{"gcs", {0, 500}}}));
  CHECK(values_of(untouched) == values_of(clipped));
  CHECK_THROWS_WITH_AS(clip_outliers(c, ranges_for({{"hr", {0, 1}}})), doctest::Contains("gcs"), Error);
}

TEST_CASE("bin_hourly averages within hours and drops the tail") {
  const auto c = from_csv(
      "episode_id,time_hours,feature,value\ne1,0.2,x,10\ne1,0.8,x,20\ne1,7.3,y,4\ne1,121.5,x,99\n");
  const auto binned = bin_hourly(c.episodes[0]);
  REQUIRE(binned.triplets.size() == 2);
  CHECK(binned.triplets[0].time == 0.5);
  CHECK(binned.triplets[0].value == 15.0);
  CHECK(binned.triplets[1].time == 7.5);
  CHECK(binned.triplets[1].value == 4.0);

  const auto again = bin_hourly(binned);
  REQUIRE(again.triplets.size() == binned.triplets.size());
  for (std::size_t i = 0; i < again.triplets.size(); ++i) {
    CHECK(again.triplets[i].time == binned.triplets[i].time);
    CHECK(again.triplets[i].value == binned.triplets[i].value);
  }
}

TEST_CASE("bin_hourly never grows a series past 120 bins") {
  const auto synth = generate(SynthSpec{.n_episodes = 5, .n_ts_features = 3, .missingness_rate = 0.0, .seed = 2});
  for (const auto& ep : synth.cohort.episodes) {
    const auto binned = bin_hourly(shift_time_origin(ep));
    CHECK(binned.triplets.size() <= ep.triplets.size());
    std::vector<int> per_feature(synth.cohort.num_features(), 0);
    for (const auto& t : binned.triplets) ++per_feature[static_cast<std::size_t>(t.feature)];
    for (int n : per_feature) CHECK(n <= kHorizonHours);
  }
}

TEST_CASE("z-score uses the population convention") {
  const auto c = from_csv("episode_id,time_hours,feature,value\ne1,0,x,1\ne1,1,x,2\ne1,2,x,3\ne1,0,k,5\ne1,1,k,5\n");
  const auto stats = fit_zscore(c);
  CHECK(stats.at("x").mean == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(stats.at("x").std == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  const auto z = apply_zscore(c, stats);
  for (const auto& t : z.episodes[0].triplets) {
    if (c.feature_vocab[static_cast<std::size_t>(t.feature)] == "k") CHECK(t.value == 0.0);
  }
  CHECK(zscore(2.0, stats.at("x")) == 0.0);

  for (const auto& t : z.episodes[0].triplets) {
    const auto& s = stats.at(c.feature_vocab[static_cast<std::size_t>(t.feature)]);
    if (s.std < 1e-12) continue;
    const double raw = t.value * s.std + s.mean;
    bool found = false;
    for (const auto& r : c.episodes[0].triplets)
      found = found || (r.feature == t.feature && std::abs(r.value - raw) < 1e-9);
    CHECK(found);
  }
}

TEST_CASE("apply_zscore with another cohort's stats shifts by that cohort's means") {
  const auto a = from_csv("episode_id,time_hours,feature,value\ne1,0,x,10\ne1,1,x,20\n");
  const auto b = from_csv("episode_id,time_hours,feature,value\ne1,0,x,15\n");
  const auto z = apply_zscore(b, fit_zscore(a));
  CHECK(z.episodes[0].triplets[0].value == doctest::Approx(0.0));
  const auto c = from_csv("episode_id,time_hours,feature,value\ne1,0,y,1\n");
  CHECK_THROWS_AS(apply_zscore(c, fit_zscore(a)), Error);
}

TEST_CASE("one_hot_static expands categoricals and zeroes missing ones") {
  std::istringstream schema_json(
      R"({"sex": {"kind": "categorical", "categories": ["male", "female"]},
          "site": {"kind": "categorical", "categories": ["a", "b", "c"]},
          "age": {"kind": "numeric"}})");
  const auto schema = parse_schema(schema_json);
  const auto c = from_csv("episode_id,time_hours,feature,value\ne1,0,x,1\ne2,0,x,1\ne3,0,x,1\ne4,0,x,1\n",
                          "episode_id,sex,site,age\ne1,female,a,30\ne2,,b,\ne3,male,c,50\ne4,male,a,60\n");
  std::vector<std::string> names;
  const Matrix m = one_hot_static(c, schema, &names);
  CHECK(m.cols() == 6);
  const auto col = [&](const std::string& n) {
    return static_cast<Eigen::Index>(std::find(names.begin(), names.end(), n) - names.begin());
  };
  CHECK(m(0, col("sex=male")) == 0.0);
  CHECK(m(0, col("sex=female")) == 1.0);
  CHECK(m(1, col("sex=male")) == 0.0);
  CHECK(m(1, col("sex=female")) == 0.0);
  CHECK(std::isnan(m(1, col("age"))));

  const auto bad = from_csv("episode_id,time_hours,feature,value\ne1,0,x,1\n", "episode_id,sex,site,age\ne1,other,a,1\n");
  CHECK_THROWS_AS(one_hot_static(bad, schema), Error);
}

TEST_CASE("iterative imputation") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  SUBCASE("complete matrix is unchanged") {
    Matrix m(3, 2);
    m << 1, 2, 3, 4, 5, 7;
    CHECK(iterative_impute_static(m) == m);
  }
  SUBCASE("an exact linear relation is recovered") {
    Matrix m(5, 2);
    m << 1, 2, 2, 4, 3, 6, 4, nan, 5, 10;
    const Matrix out = iterative_impute_static(m);
    CHECK(out(3, 1) == doctest::Approx(8.0).epsilon(1e-6));
  }
  SUBCASE("constant column") {
    Matrix m(3, 2);
    m << 1, 4, 2, nan, 3, 4;
    CHECK(iterative_impute_static(m)(1, 1) == doctest::Approx(4.0));
  }
  SUBCASE("column with no observations") {
    Matrix m(2, 2);
    m << 1, nan, 2, nan;
    CHECK_THROWS_AS(iterative_impute_static(m), Error);
  }
}

TEST_CASE("preprocess with fitted stats aligns the vocabulary to the source") {
  const auto a = generate(SynthSpec{.n_episodes = 20, .n_ts_features = 3, .seed = 1});
  const auto pa = preprocess(a.cohort, a.ranges, a.schema);
  auto b = generate(SynthSpec{.n_episodes = 20, .n_ts_features = 3, .seed = 2});
  const auto pb = preprocess(b.cohort, b.ranges, b.schema, &pa.normalization);
  CHECK(pb.feature_vocab == pa.feature_vocab);
  CHECK(pb.static_slots == pa.static_slots);
}
