#pragma once

// Cohort data model, CSV/JSON ingestion, and the preprocessing chain:
// range clipping -> time-origin shift -> hourly binning -> z-scoring, plus
// one-hot encoding and iterative imputation of the static (non-temporal) block.
// Time-series values are never imputed; an unobserved (feature, hour) cell
// simply has no triplet.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slac/common.hpp"

namespace slac {

inline constexpr int kHorizonHours = 120;

struct ObservationTriplet {
  double time = 0.0;  // hours since episode start
  int feature = 0;    // index into CohortDataset::feature_vocab
  double value = 0.0;

  friend bool operator==(const ObservationTriplet&, const ObservationTriplet&) = default;
};

struct EpisodeRecord {
  std::string id;
  // Raw static cells in CohortDataset::static_columns order; nullopt = missing.
  std::vector<std::optional<std::string>> static_raw;
  // Encoded static vector (width D), filled by encode_static / adopt_numeric_static.
  Vector static_vector;
  std::vector<ObservationTriplet> triplets;
  std::map<std::string, std::string> metadata;
};

enum class ColumnKind { numeric, categorical };

struct StaticColumn {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::vector<std::string> categories;
};

struct StaticSchema {
  std::vector<StaticColumn> columns;
  const StaticColumn* find(const std::string& name) const;
};

struct FeatureStats {
  double mean = 0.0;
  double std = 1.0;
  std::size_t count = 0;
};

struct NormalizationStats {
  std::map<std::string, FeatureStats> series;   // time-series features
  std::map<std::string, FeatureStats> statics;  // numeric static columns
};

struct ClinicalRangeTable {
  std::map<std::string, std::pair<double, double>> ranges;  // [min_allowed, max_allowed]
  void validate() const;
};

struct CohortDataset {
  std::vector<EpisodeRecord> episodes;
  std::vector<std::string> feature_vocab;  // sorted, unique
  std::vector<std::string> static_columns;  // raw static CSV columns
  std::vector<std::string> static_slots;    // names of encoded static_vector entries
  NormalizationStats normalization;

  std::size_t size() const { return episodes.size(); }
  std::size_t num_features() const { return feature_vocab.size(); }
  std::size_t static_width() const { return static_slots.size(); }
  int feature_index(const std::string& name) const;  // -1 if absent
  /// Copy without any episode metadata (what the clustering stages are allowed to see).
  CohortDataset without_metadata() const;
};

// ---- ingestion / serialization ------------------------------------------------

/// Reads `episode_id,time_hours,feature,value` and `episode_id,<cols...>` CSV streams.
/// Optional metadata stream: `episode_id,<key1>,<key2>,...`.
CohortDataset parse_cohort(std::istream& triplets, std::istream& statics,
                           std::istream* metadata = nullptr);

/// Writes the cohort back in the ingestion grammar. Values use 17 significant
/// digits so parse -> write -> parse is bit-exact. Encoded cohorts write
/// static_slots/static_vector, raw cohorts write static_columns/static_raw.
void write_cohort(const CohortDataset& cohort, std::ostream& triplets, std::ostream& statics,
                  std::ostream* metadata = nullptr);

StaticSchema parse_schema(std::istream& json);
std::string schema_to_json(const StaticSchema& schema);
ClinicalRangeTable parse_ranges(std::istream& json);
std::string ranges_to_json(const ClinicalRangeTable& ranges);
std::string stats_to_json(const NormalizationStats& stats);
NormalizationStats parse_stats(std::istream& json);

std::string format_double(double v);

// ---- preprocessing -------------------------------------------------------------

struct ClipReport {
  std::map<std::string, std::size_t> removed;  // per time-series feature
  std::map<std::string, std::size_t> static_removed;
  std::size_t total() const;
};

/// Removes triplets whose value lies outside the closed range of its feature.
/// Numeric static cells outside a listed range become missing.
CohortDataset clip_outliers(const CohortDataset& cohort, const ClinicalRangeTable& ranges,
                            ClipReport* report = nullptr);

/// Shifts triplet times so the earliest observation sits at t = 0.
EpisodeRecord shift_time_origin(const EpisodeRecord& episode);

/// Hourly means over [k, k+1), k < 120, stamped at k + 0.5; sorted by (time, feature).
EpisodeRecord bin_hourly(const EpisodeRecord& episode);

/// Per-feature population mean/std over every triplet value in the cohort.
std::map<std::string, FeatureStats> fit_zscore(const CohortDataset& cohort);
CohortDataset apply_zscore(const CohortDataset& cohort,
                           const std::map<std::string, FeatureStats>& stats);
double zscore(double value, const FeatureStats& stats);

/// Expands the raw static cells: categoricals to one-hot slots (all zero when
/// missing), numeric columns pass through with NaN marking missing cells.
Matrix one_hot_static(const CohortDataset& cohort, const StaticSchema& schema,
                      std::vector<std::string>* slot_names = nullptr,
                      std::vector<bool>* numeric_slot = nullptr);

struct ImputeOptions {
  int sweeps = 10;
};

/// Round-robin least-squares imputation of NaN entries (mean initialization).
Matrix iterative_impute_static(const Matrix& data, ImputeOptions options = {});

/// one_hot_static + z-scoring of numeric slots (stats fitted here unless given) + imputation.
CohortDataset encode_static(const CohortDataset& cohort, const StaticSchema& schema,
                            const std::map<std::string, FeatureStats>* stats = nullptr);

/// Interprets every raw static cell as a number (already-encoded cohorts).
CohortDataset adopt_numeric_static(const CohortDataset& cohort);

/// Re-indexes triplets against a (sorted, unique) superset vocabulary.
CohortDataset align_vocabulary(const CohortDataset& cohort, const std::vector<std::string>& vocab);

struct PreprocessReport {
  ClipReport clip;
  std::size_t triplets_before = 0;
  std::size_t triplets_after = 0;
  std::size_t dropped_empty = 0;
  std::vector<std::string> dropped_ids;
};

/// Full chain. With `fitted` given, normalization reuses those stats (cross-cohort use).
CohortDataset preprocess(const CohortDataset& raw, const ClinicalRangeTable& ranges,
                         const StaticSchema& schema, const NormalizationStats* fitted = nullptr,
                         PreprocessReport* report = nullptr);

/// Hash of the ordered feature vocabulary (weights are tied to it).
std::uint64_t vocab_hash(const std::vector<std::string>& vocab);

}  // namespace slac
