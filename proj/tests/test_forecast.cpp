#include <doctest.h>

#include <sstream>

#include "slac/forecast.hpp"
#include "slac/optim.hpp"
#include "support.hpp"

using namespace slac;

namespace {

CohortDataset hourly_cohort(std::initializer_list<std::pair<int, int>> hour_ranges) {
  CohortDataset c;
  c.feature_vocab = {"a", "b"};
  c.static_slots = {"s"};
  int id = 0;
  for (const auto& [from, to] : hour_ranges) {
    EpisodeRecord e;
    e.id = "e" + std::to_string(id++);
    e.static_vector = Vector::Zero(1);
    for (int h = from; h <= to; ++h) e.triplets.push_back({h + 0.5, h % 2, 0.1 * h});
    c.episodes.push_back(std::move(e));
  }
  return c;
}

/// Counts (episode, window) pairs with an observation before the window and one inside the prediction window.
std::size_t count_instances(const CohortDataset& c) {
  std::size_t n = 0;
  for (const auto& e : c.episodes)
    for (double w : kObservationWindows) {
      bool before = false, inside = false;
      for (const auto& t : e.triplets) {
        before = before || t.time < w;
        inside = inside || (t.time >= w && t.time < w + 2);
      }
      n += before && inside;
    }
  return n;
}

ModelConfig tiny_config(std::uint64_t seed) {
  ModelConfig c;
  c.dim = 8;
  c.heads = 2;
  c.pretrain_epochs = 4;
  c.learning_rate = 1e-3;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("instances follow the window rule") {
  CHECK(build_forecast_instances(hourly_cohort({{0, 10}})).empty());
  const auto full = build_forecast_instances(hourly_cohort({{0, 119}}));
  REQUIRE(full.size() == 5);
  for (std::size_t i = 0; i < full.size(); ++i) {
    CHECK(full[i].window_end == kObservationWindows[i]);
    CHECK(full[i].input_count == static_cast<std::size_t>(kObservationWindows[i]));
    CHECK(full[i].mask.sum() == 2.0);
  }
  const auto mid = build_forecast_instances(hourly_cohort({{20, 30}}));
  REQUIRE(mid.size() == 1);
  CHECK(mid[0].window_end == 24.0);
  // hours 24 (feature a) and 25 (feature b) are the targets
  CHECK(mid[0].target(0) == doctest::Approx(2.4));
  CHECK(mid[0].target(1) == doctest::Approx(2.5));
}

TEST_CASE("complete cohorts yield five instances per episode") {
  SynthSpec spec{.n_episodes = 7, .n_ts_features = 3, .missingness_rate = 0.0, .seed = 3};
  const auto data = testing::prepare(spec);
  CHECK(build_forecast_instances(data.cohort).size() == 5 * data.cohort.size());
  spec.missingness_rate = 0.8;
  const auto sparse = testing::prepare(spec);
  CHECK(build_forecast_instances(sparse.cohort).size() == count_instances(sparse.cohort));
}

TEST_CASE("instances never read past the window end") {
  const auto data = testing::prepare(SynthSpec{.n_episodes = 5, .n_ts_features = 3, .seed = 4});
  const auto s = EncoderState::initialize(tiny_config(1), data.cohort.num_features(), data.cohort.static_width(), 2);
  for (const auto& inst : build_forecast_instances(data.cohort)) {
    auto truncated = data.cohort;
    auto& tr = truncated.episodes[inst.episode].triplets;
    tr.erase(std::remove_if(tr.begin(), tr.end(), [&](const auto& t) { return t.time >= inst.window_end; }), tr.end());
    ad::Tape a, b;
    const Matrix full = a.value(forecast_instance(a, s, data.cohort, inst));
    const Matrix cut = b.value(forecast_instance(b, s, truncated, inst));
    CHECK(full == cut);
    CHECK(inst.input_count == tr.size());
  }
}

TEST_CASE("forecast head") {
  auto s = EncoderState::initialize(tiny_config(1), 5, 2, 3);
  RowVector ed = RowVector::Random(8), et = RowVector::Random(8);
  CHECK(forecast_head(ed, et, s).size() == 5);
  std::vector<ParamTensor*> params{&s.forecast_w, &s.forecast_b};
  const Matrix target = Matrix::Random(1, 5);
  CHECK(finite_diff_check(
            [&](ad::Tape& t) {
              const auto z = forecast_head(t, s, t.constant(ed), t.constant(et));
              return ad::masked_mse(t, z, target, Matrix::Ones(1, 5));
            },
            params) < 1e-6);
  s.forecast_w.value.setZero();
  CHECK(forecast_head(ed, et, s) == s.forecast_b.value);
}

TEST_CASE("masked MSE normalizes by the instance count") {
  Matrix pred(1, 3), target = Matrix::Zero(1, 3), mask(1, 3);
  pred << 2, 5, 5;
  mask << 1, 0, 0;
  CHECK(masked_mse(pred, target, mask) == 4.0);
  CHECK(masked_mse(pred, target, Matrix::Zero(1, 3)) == 0.0);

  Matrix p2(2, 2), t2 = Matrix::Zero(2, 2), m2(2, 2);
  p2 << 1, 1, 3, 0;
  m2 << 1, 0, 1, 0;
  CHECK(masked_mse(p2, t2, m2) == 5.0);

  ad::Tape t;
  const auto x = t.input(p2);
  t.backward(ad::masked_mse(t, x, t2, m2));
  CHECK(t.grad(x)(0, 1) == 0.0);
  CHECK(t.grad(x)(1, 1) == 0.0);
  CHECK(t.grad(x)(1, 0) == doctest::Approx(3.0));  // 2 * 3 / 2
}

TEST_CASE("pretraining") {
  SynthSpec spec = testing::planted_spec(6);
  spec.n_episodes = 60;
  spec.separation = 2.0;
  const auto data = testing::prepare(spec);
  const auto cohort = data.cohort.without_metadata();
  const auto result = pretrain(cohort, tiny_config(5));

  SUBCASE("validation loss improves and beats the mean predictor") {
    REQUIRE(!result.history.empty());
    const double best = result.history[static_cast<std::size_t>(result.best_epoch - 1)].val_loss;
    CHECK(best < result.initial_val_loss);
    CHECK(forecast_loss(cohort, result.validation, result.state) == doctest::Approx(best).epsilon(1e-12));
    const Vector means = mean_target(result.train, cohort.num_features());
    CHECK(best < constant_forecast_loss(result.validation, means));
  }
  SUBCASE("80:20 split") {
    const auto total = result.train.size() + result.validation.size();
    CHECK(total == build_forecast_instances(cohort).size());
    CHECK(result.train.size() == static_cast<std::size_t>(0.8 * static_cast<double>(total)));
  }
  SUBCASE("deterministic given the seed") {
    const auto again = pretrain(cohort, tiny_config(5));
    REQUIRE(again.history.size() == result.history.size());
    for (std::size_t i = 0; i < again.history.size(); ++i) {
      CHECK(again.history[i].train_loss == result.history[i].train_loss);
      CHECK(again.history[i].val_loss == result.history[i].val_loss);
    }
  }
  SUBCASE("loss history CSV") {
    std::ostringstream out;
    write_loss_history(out, result.history);
    CHECK(out.str().rfind("epoch,train_loss,val_loss\n", 0) == 0);
  }
}

TEST_CASE("pretraining needs two instances") {
  const auto c = hourly_cohort({{20, 30}});
  CHECK_THROWS_AS(pretrain(c, tiny_config(1)), Error);
}
