#pragma once

// The self-labeling loop: cluster the current representations into
// pseudo-labels, then train a softmax classifier on them jointly with the
// encoder, and repeat. Also the hyperparameter sweep over (M, d, h, K).

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slac/cluster.hpp"
#include "slac/encoder.hpp"

namespace slac {

/// Representations of every episode clustered into k groups.
std::vector<int> extract_pseudo_labels(const CohortDataset& cohort, const EncoderState& state, int k,
                                       std::uint64_t seed, const KMeansOptions& options = {},
                                       Matrix* representations = nullptr);

struct IndexSplit {
  std::vector<std::size_t> train, validation;
};

/// Per-class shuffled split; every class with >= 2 members lands on both sides.
IndexSplit stratified_split(std::span<const int> labels, double train_fraction, std::uint64_t seed);

/// Logits W r + b for a batch of representation rows.
ad::Var classifier_head(ad::Tape& tape, const EncoderState& state, ad::Var representation);

/// Mean cross-entropy of the classifier over the listed episodes.
double classification_loss(const CohortDataset& cohort, std::span<const int> labels,
                           std::span<const std::size_t> rows, const EncoderState& state);
/// Predicted class per episode.
std::vector<int> predict_classes(const CohortDataset& cohort, const EncoderState& state);

struct ClassifierTrainOptions {
  int max_epochs = 200;
  int patience = 10;
  int batch_size = 8;
  double learning_rate = 5e-4;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::optional<IndexSplit> split;  // overrides the stratified split
};

struct ClassifierTrainResult {
  double best_val_loss = 0;
  int best_epoch = 0;
  int epochs_run = 0;
  double first_batch_loss = 0;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch
  double train_accuracy = 0;       // at the restored weights
  IndexSplit split;
};

/// Adam on softmax cross-entropy over the encoder and classifier jointly,
/// early stopping on a stratified validation split, best weights restored.
ClassifierTrainResult train_classifier(const CohortDataset& cohort, std::span<const int> labels,
                                       EncoderState& state, const ClassifierTrainOptions& options);

/// One classifier step of the loop, configured from the model config.
ClassifierTrainResult train_classifier_iteration(const CohortDataset& cohort, std::span<const int> labels,
                                                 EncoderState& state, const ModelConfig& config,
                                                 std::uint64_t seed);

struct SlacIterationRecord {
  int iteration = 0;
  double agreement = 0;  // ARI against the previous iteration's labels (1 for the first)
  double val_loss = 0;
  int epochs = 0;
  ValidityScores scores;  // of the pseudo-labels on the representations they were drawn from
};

struct SlacRunResult {
  std::vector<int> final_labels;
  EncoderState final_state;
  Matrix final_representations;
  ValidityScores final_scores;
  std::vector<SlacIterationRecord> iterations;
  bool stopped_on_agreement = false;
  ModelConfig config;
};

inline constexpr double kAgreementThreshold = 0.999;
inline constexpr int kAgreementRuns = 3;

using IterationCallback = std::function<void(const SlacIterationRecord&)>;

/// Runs config.iterations rounds from the pretrained state; metadata never reaches the loop.
SlacRunResult run_slac(const CohortDataset& cohort, const EncoderState& pretrained,
                       const ModelConfig& config, const IterationCallback& on_iteration = {});

void write_labels(std::ostream& out, const CohortDataset& cohort, std::span<const int> labels);
/// Labels in cohort episode order; every episode must appear exactly once.
std::vector<int> read_labels(std::istream& in, const CohortDataset& cohort);
void write_iteration_history(std::ostream& out, std::span<const SlacIterationRecord> records);
std::string scores_json(const ValidityScores& scores, const ModelConfig& config);

// ---- sweep ----
struct SweepGrid {
  std::vector<int> blocks{1};
  std::vector<int> dims{8};
  std::vector<int> heads{2};
  std::vector<int> clusters{3};
};

struct SweepRow {
  int blocks = 0, dim = 0, heads = 0, clusters = 0;
  ValidityScores scores;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::size_t selected = 0;
  std::vector<std::string> warnings;
};

/// Row best on most of {SS max, CHS max, DBS min}; ties to the smallest (M, d, h, K).
std::size_t select_row(std::span<const SweepRow> rows);

using SweepCallback = std::function<void(const std::string& message)>;

/// Pretraining is shared per (M, d, h); each K gets its own loop run, and its final
/// labels are scored on the shared pretrained representations of that (M, d, h).
SweepTable sweep(const CohortDataset& cohort, const SweepGrid& grid, const ModelConfig& base,
                 const SweepCallback& log = {});

void write_sweep_csv(std::ostream& out, const SweepTable& table);
std::string sweep_selection_json(const SweepTable& table);
SweepGrid parse_grid(const std::string& json_text);

}  // namespace slac
