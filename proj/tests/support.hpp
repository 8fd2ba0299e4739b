#pragma once

// Fixtures shared by the unit tests and the acceptance runner.

#include <cstdint>
#include <vector>

#include "slac/cohort.hpp"
#include "slac/synth.hpp"

namespace slac::testing {

/// The planted reference cohort: 300 episodes, 3 phenotypes, 10 series, 30% missing cells, separation 3.
inline SynthSpec planted_spec(std::uint64_t seed = 1, std::uint64_t profile_seed = 0) {
  SynthSpec spec;
  spec.n_episodes = 300;
  spec.n_phenotypes = 3;
  spec.n_ts_features = 10;
  spec.missingness_rate = 0.3;
  spec.separation = 3.0;
  spec.seed = seed;
  spec.profile_seed = profile_seed;
  return spec;
}

struct PreparedCohort {
  CohortDataset cohort;      // preprocessed, metadata kept
  std::vector<int> planted;  // true phenotype per episode
};

inline PreparedCohort prepare(const SynthSpec& spec, const NormalizationStats* fitted = nullptr) {
  const auto synth = generate(spec);
  auto cohort = preprocess(synth.cohort, synth.ranges, synth.schema, fitted);
  auto planted = planted_labels(cohort);
  return {std::move(cohort), std::move(planted)};
}

/// Per-episode mean of every (normalized) series, 0 where a series is unobserved.
inline Matrix feature_means(const CohortDataset& cohort) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(cohort.size()),
                            static_cast<Eigen::Index>(cohort.num_features()));
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    std::vector<int> n(cohort.num_features(), 0);
    for (const auto& t : cohort.episodes[i].triplets) {
      out(static_cast<Eigen::Index>(i), t.feature) += t.value;
      ++n[static_cast<std::size_t>(t.feature)];
    }
    for (std::size_t f = 0; f < n.size(); ++f)
      if (n[f] > 0) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) /= n[f];
  }
  return out;
}

}  // namespace slac::testing
