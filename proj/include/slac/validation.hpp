#pragma once

// External validation: stratified fold plans, a transfer-initialized phenotype
// classifier, cross-cohort application, and the cross-match permutation test
// used to compare phenotype distributions between cohorts.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slac/slac.hpp"

namespace slac {

struct Fold {
  std::vector<std::size_t> train, validation;
};

struct FoldPlan {
  std::vector<Fold> folds;
  std::vector<std::size_t> test;
};

/// Stratified test split, then stratified k folds over the remaining pool.
FoldPlan make_folds(std::span<const int> labels, double test_fraction = 0.15, int k = 10,
                    std::uint64_t seed = 0);

struct PhenotypeTrainOptions {
  int max_epochs = 200;
  int patience = 10;
  int batch_size = 8;
  double learning_rate = 5e-4;
  std::uint64_t seed = 0;
  bool transfer = true;  // false: encoder starts from a fresh initialization
  int max_folds = -1;    // train only the first n folds (-1 = all)
};

struct FoldMetrics {
  int fold = 0;
  double val_accuracy = 0;
  double val_loss = 0;
  int epochs = 0;
  int best_epoch = 0;
  std::vector<double> val_loss_history;
};

struct PhenotypeClassifier {
  EncoderState state;
  std::vector<FoldMetrics> folds;
  int best_fold = 0;
  double test_accuracy = 0;
};

PhenotypeClassifier train_phenotype_classifier(const CohortDataset& cohort, std::span<const int> labels,
                                               const EncoderState& pretrained, const FoldPlan& plan,
                                               const PhenotypeTrainOptions& options = {});

/// Fraction of rows where predicted == truth.
double accuracy(std::span<const int> predicted, std::span<const int> truth,
                std::span<const std::size_t> rows = {});

/// Predicted label per episode of `other`; its vocabulary and static layout must equal `source`'s.
std::vector<int> cross_apply(const EncoderState& state, const CohortDataset& source,
                             const CohortDataset& other);

/// Pairs (i, j) of a minimum-weight perfect matching on Euclidean distances
/// (exact up to kExactMatchingLimit points, greedy closest-pair beyond).
inline constexpr std::size_t kExactMatchingLimit = 14;
std::vector<std::pair<int, int>> min_weight_matching(const Matrix& points);

struct CrossMatchResult {
  int statistic = 0;  // cross-group pairs
  std::vector<int> null_samples;
  double p_value = 1.0;
  std::size_t n_a = 0, n_b = 0;
  std::optional<std::size_t> dropped;  // pooled index (canonical order) removed to make N even
};

CrossMatchResult crossmatch_test(const Matrix& a, const Matrix& b, int n_perm = 999, std::uint64_t seed = 0);

struct PhenotypeComparison {
  std::vector<int> mapping;  // cohort-B cluster -> cohort-A cluster
  std::vector<CrossMatchResult> per_phenotype;  // indexed by cohort-A cluster
  bool reproduced = false;                      // every p > 0.05
};

PhenotypeComparison compare_phenotype_distributions(std::span<const int> labels_a, const Matrix& reps_a,
                                                    std::span<const int> labels_b, const Matrix& reps_b,
                                                    int n_perm = 999, std::uint64_t seed = 0);

std::string validation_report_json(const PhenotypeClassifier& classifier,
                                   const std::optional<PhenotypeComparison>& comparison);

}  // namespace slac
