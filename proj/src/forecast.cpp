#include "slac/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "slac/optim.hpp"

namespace slac {

std::vector<ForecastInstance> build_forecast_instances(const CohortDataset& cohort) {
  const auto nf = static_cast<Eigen::Index>(cohort.num_features());
  std::vector<ForecastInstance> out;
  for (std::size_t e = 0; e < cohort.size(); ++e) {
    const auto& tr = cohort.episodes[e].triplets;
    if (!std::is_sorted(tr.begin(), tr.end(),
                        [](const auto& a, const auto& b) { return a.time < b.time; }))
      throw Error("forecast instances need time-sorted triplets (episode '" +
                  cohort.episodes[e].id + "')");
    for (double end : kObservationWindows) {
      auto split = std::partition_point(tr.begin(), tr.end(),
                                        [end](const auto& t) { return t.time < end; });
      const auto n_in = static_cast<std::size_t>(split - tr.begin());
      if (n_in == 0) continue;
      Vector sum = Vector::Zero(nf), count = Vector::Zero(nf);
      for (auto it = split; it != tr.end() && it->time < end + kPredictionWindowHours; ++it) {
        sum[it->feature] += it->value;
        count[it->feature] += 1.0;
      }
      if (count.sum() == 0.0) continue;
      ForecastInstance inst;
      inst.episode = e;
      inst.window_end = end;
      inst.input_count = n_in;
      inst.mask = (count.array() > 0.0).cast<double>().matrix();
      inst.target = Vector::Zero(nf);
      for (Eigen::Index j = 0; j < nf; ++j)
        if (count[j] > 0.0) inst.target[j] = sum[j] / count[j];
      out.push_back(std::move(inst));
    }
  }
  return out;
}

ad::Var forecast_head(ad::Tape& t, const EncoderState& s, ad::Var ed, ad::Var et) {
  const ad::Var parts[] = {ed, et};
  auto joined = ad::concat_cols(t, parts);
  return ad::dense(t, joined, t.parameter(s.forecast_w), t.parameter(s.forecast_b));
}

RowVector forecast_head(const RowVector& ed, const RowVector& et, const EncoderState& s) {
  ad::Tape t;
  return t.value(forecast_head(t, s, t.constant(ed), t.constant(et))).row(0);
}

double masked_mse(const Matrix& pred, const Matrix& target, const Matrix& mask) {
  ad::Tape t;
  return t.scalar(ad::masked_mse(t, t.constant(pred), target, mask));
}

ad::Var forecast_instance(ad::Tape& t, const EncoderState& s, const CohortDataset& cohort,
                          const ForecastInstance& inst) {
  auto et = encode_triplets(t, s, inst.inputs(cohort)).pooled;
  auto ed = embed_static(t, s, cohort.episodes[inst.episode].static_vector);
  return forecast_head(t, s, ed, et);
}

double forecast_loss(const CohortDataset& cohort, std::span<const ForecastInstance> instances,
                     const EncoderState& state) {
  if (instances.empty()) return 0.0;
  double total = 0.0;
  for (const auto& inst : instances) {
    ad::Tape t;
    auto pred = forecast_instance(t, state, cohort, inst);
    total += t.scalar(ad::masked_mse(t, pred, inst.target.transpose(), inst.mask.transpose()));
  }
  return total / static_cast<double>(instances.size());
}

double constant_forecast_loss(std::span<const ForecastInstance> instances, const Vector& prediction) {
  if (instances.empty()) return 0.0;
  double total = 0.0;
  for (const auto& inst : instances)
    total += (inst.mask.array() * (prediction - inst.target).array().square()).sum();
  return total / static_cast<double>(instances.size());
}

Vector mean_target(std::span<const ForecastInstance> instances, std::size_t num_features) {
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(num_features));
  Vector count = Vector::Zero(static_cast<Eigen::Index>(num_features));
  for (const auto& inst : instances) {
    sum += (inst.mask.array() * inst.target.array()).matrix();
    count += inst.mask;
  }
  return (sum.array() / count.array().max(1.0)).matrix();
}

PretrainResult pretrain(const CohortDataset& cohort, const ModelConfig& config, const EncoderState* init) {
  config.validate();
  auto instances = build_forecast_instances(cohort);
  if (instances.size() < 2)
    throw Error("pretrain: need at least 2 forecasting instances, found " +
                std::to_string(instances.size()));

  PretrainResult result;
  Rng split_rng(derive_seed(config.seed, 0x73706c));
  if (config.episode_level_split) {
    std::vector<std::size_t> eps(cohort.size());
    std::iota(eps.begin(), eps.end(), std::size_t{0});
    shuffle_range(eps.begin(), eps.end(), split_rng);
    std::vector<bool> is_val(cohort.size(), false);
    const auto n_train_eps = static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(eps.size())));
    for (std::size_t i = n_train_eps; i < eps.size(); ++i) is_val[eps[i]] = true;
    for (auto& inst : instances) (is_val[inst.episode] ? result.validation : result.train).push_back(inst);
    if (result.train.empty() || result.validation.empty())
      throw Error("pretrain: episode-level split left an empty partition");
  } else {
    shuffle_range(instances.begin(), instances.end(), split_rng);
    const auto n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(instances.size()))));
    result.train.assign(instances.begin(), instances.begin() + static_cast<std::ptrdiff_t>(n_train));
    result.validation.assign(instances.begin() + static_cast<std::ptrdiff_t>(n_train), instances.end());
  }

  EncoderState state = init ? *init
                            : EncoderState::initialize(config, cohort.num_features(),
                                                       cohort.static_width(), config.seed,
                                                       vocab_hash(cohort.feature_vocab));
  state.config = config;
  state.check_compatible(cohort);
  auto params = state.encoder_params();
  for (auto* p : state.forecast_params()) params.push_back(p);
  zero_grads(params);
  AdamState adam(AdamOptions{config.learning_rate});

  result.initial_val_loss = forecast_loss(cohort, result.validation, state);
  result.state = state;
  EarlyStopping stopper(config.patience);
  std::vector<std::size_t> order(result.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= config.pretrain_epochs; ++epoch) {
    Rng epoch_rng(derive_seed(config.seed, 0x657063, static_cast<std::uint64_t>(epoch)));
    shuffle_range(order.begin(), order.end(), epoch_rng);
    double train_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const auto& inst = result.train[order[i]];
        ad::Tape t;
        auto pred = forecast_instance(t, state, cohort, inst);
        auto loss = ad::masked_mse(t, pred, inst.target.transpose(), inst.mask.transpose());
        const double value = t.scalar(loss);
        if (!std::isfinite(value)) throw Error("pretrain: non-finite loss at epoch " + std::to_string(epoch));
        train_total += value;
        t.backward(loss, inv_b);
      }
      adam_step(params, adam);
    }
    const double val = forecast_loss(cohort, result.validation, state);
    if (!std::isfinite(val)) throw Error("pretrain: non-finite validation loss at epoch " + std::to_string(epoch));
    result.history.push_back({epoch, train_total / static_cast<double>(order.size()), val});
    if (stopper.update(val)) {
      result.state = state;
      result.best_epoch = epoch;
    }
    if (stopper.should_stop()) break;
  }
  return result;
}

void write_loss_history(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch,train_loss,val_loss\n";
  for (const auto& r : history)
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << '\n';
}

}  // namespace slac
