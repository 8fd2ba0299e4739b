#pragma once

// Self-supervised forecasting: predict each feature's mean over the 2 hours
// after an observation window from everything before it, scored with a
// masked squared error normalized by the instance count.

#include <array>
#include <iosfwd>
#include <span>
#include <vector>

#include "slac/encoder.hpp"

namespace slac {

inline constexpr std::array<double, 5> kObservationWindows = {24.0, 48.0, 72.0, 96.0, 118.0};
inline constexpr double kPredictionWindowHours = 2.0;

struct ForecastInstance {
  std::size_t episode = 0;
  double window_end = 0.0;
  std::size_t input_count = 0;  // prefix of the (time-sorted) episode triplets
  Vector target;                // |F|; entries with mask 0 are never read
  Vector mask;                  // 1 = observed in [window_end, window_end + 2)

  std::span<const ObservationTriplet> inputs(const CohortDataset& cohort) const {
    return std::span(cohort.episodes[episode].triplets).first(input_count);
  }
};

/// One instance per (episode, window) with >= 1 input triplet and >= 1 target observation.
std::vector<ForecastInstance> build_forecast_instances(const CohortDataset& cohort);

/// z~ = W_s [e_d e_T] + b_s.
ad::Var forecast_head(ad::Tape& tape, const EncoderState& state, ad::Var static_embedding,
                      ad::Var series_embedding);
RowVector forecast_head(const RowVector& static_embedding, const RowVector& series_embedding,
                        const EncoderState& state);

/// Value-level masked MSE: (1/B) sum m (pred - target)^2 over a B x |F| batch.
double masked_mse(const Matrix& pred, const Matrix& target, const Matrix& mask);

/// Forecast of one instance, taped; returns the 1 x |F| prediction.
ad::Var forecast_instance(ad::Tape& tape, const EncoderState& state, const CohortDataset& cohort,
                          const ForecastInstance& instance);

/// Masked MSE of the model over a set of instances (normalized by the set size).
double forecast_loss(const CohortDataset& cohort, std::span<const ForecastInstance> instances,
                     const EncoderState& state);

/// Same loss for a constant predictor (e.g. training-set feature means).
double constant_forecast_loss(std::span<const ForecastInstance> instances, const Vector& prediction);
/// Per-feature mean of the observed targets.
Vector mean_target(std::span<const ForecastInstance> instances, std::size_t num_features);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct PretrainResult {
  EncoderState state;  // snapshot at the best validation epoch
  std::vector<EpochRecord> history;
  double initial_val_loss = 0.0;
  int best_epoch = 0;
  std::vector<ForecastInstance> train, validation;
};

/// Minibatch Adam on the masked forecasting loss with early stopping on the
/// validation split. `init` overrides the freshly initialized weights.
PretrainResult pretrain(const CohortDataset& cohort, const ModelConfig& config,
                        const EncoderState* init = nullptr);

void write_loss_history(std::ostream& out, std::span<const EpochRecord> history);

}  // namespace slac
