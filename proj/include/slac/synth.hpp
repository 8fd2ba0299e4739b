#pragma once

// Synthetic cohorts with planted phenotypes. Each phenotype owns a generator:
// per time-series feature a baseline and a linear trend, AR(1) noise on top,
// and a Gaussian static block. Cells are dropped completely at random.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slac/cohort.hpp"

namespace slac {

struct SynthSpec {
  std::size_t n_episodes = 300;
  std::size_t n_phenotypes = 3;
  std::vector<double> phenotype_proportions;  // empty = uniform
  std::size_t n_ts_features = 10;
  std::size_t n_static_features = 4;  // numeric static columns
  double missingness_rate = 0.3;      // per (feature, hour) cell
  double separation = 3.0;
  std::uint64_t seed = 0;          // sampling of episodes
  std::uint64_t profile_seed = 0;  // phenotype profiles (the distribution itself)

  // Knobs beyond the core contract; defaults keep the generator simple.
  std::size_t n_categorical = 1;     // 3-level categorical static columns
  double static_missing_rate = 0.05;
  double outlier_rate = 0.0;         // fraction of cells replaced by out-of-range values
  double ar_coefficient = 0.6;
  double episode_effect_sd = 0.5;    // per-episode random intercept per feature

  void validate() const;
  std::vector<double> proportions() const;
};

struct SynthCohort {
  CohortDataset cohort;  // raw units, unencoded static cells, metadata holds "phenotype"
  StaticSchema schema;
  ClinicalRangeTable ranges;
};

SynthCohort generate(const SynthSpec& spec);

SynthSpec parse_synth_spec(std::istream& json);

/// Writes triplets.csv, static.csv, metadata.csv, schema.json and ranges.json.
void write_synth(const SynthCohort& synth, const std::filesystem::path& dir);

/// Planted phenotype ids from metadata (-1 where absent).
std::vector<int> planted_labels(const CohortDataset& cohort);

}  // namespace slac
