#pragma once

// Cluster characterization: Kruskal-Wallis tests, per-cluster summaries,
// hourly means with normal 95% intervals, and a PCA projection of the
// learned representations.

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slac/cohort.hpp"

namespace slac {

/// Regularized upper incomplete gamma Q(a, x) (series below a + 1, continued fraction above).
double regularized_gamma_q(double a, double x);
/// Upper tail of the chi-square distribution with `df` degrees of freedom.
double chi_square_sf(double x, double df);

struct KruskalWallisResult {
  double h = 0.0;
  double p = 1.0;
};

/// Mid-ranked H with tie correction; all-identical pooled values give H = 0, p = 1.
KruskalWallisResult kruskal_wallis(std::span<const std::vector<double>> groups);

/// Mid-ranks (1-based) of the values, ties sharing their average rank.
std::vector<double> mid_ranks(std::span<const double> values);

struct HourlyStat {
  int cluster = 0;
  int hour = 0;
  double mean = 0.0;
  std::optional<double> ci_low, ci_high;  // null when fewer than 2 subjects
  std::size_t n = 0;                      // subjects observed in the bin
  bool empty() const { return n == 0; }
};

/// One row per (cluster, hour) for hours 0..119; values in the units stored in the cohort
/// unless `to_raw` is given (then mapped back through it).
std::vector<HourlyStat> hourly_mean_ci(const CohortDataset& cohort, std::span<const int> labels,
                                       const std::string& feature, const FeatureStats* to_raw = nullptr);

struct PcaResult {
  Matrix coordinates;                  // n x c
  Matrix components;                   // p x c, unit columns
  Vector explained_variance_ratio;     // c
};

PcaResult pca_project(const Matrix& data, int n_components = 2);

struct StaticSummary {
  int cluster = 0;
  std::string feature;
  double mean = 0.0;
  std::optional<double> sd;  // absent for category proportions
  std::size_t n = 0;         // cluster members, or category count
};

struct FeatureTest {
  std::string feature;
  KruskalWallisResult result;
  bool significant = false;  // p < 0.05
};

struct OutcomeSummary {
  int cluster = 0;
  std::string key;
  std::string level;  // category value, empty for numeric outcomes
  double value = 0.0; // mean (numeric) or proportion (categorical)
  std::optional<double> sd;
  std::size_t n = 0;
};

struct PhenotypeReport {
  int clusters = 0;
  std::vector<std::size_t> counts;
  std::vector<double> proportions;
  std::vector<StaticSummary> statics;
  std::vector<FeatureTest> tests;
  std::map<std::string, std::vector<HourlyStat>> hourly;  // per time-series feature
  std::vector<OutcomeSummary> outcomes;
};

/// Static summaries from the encoded static block (numeric slots mapped back to
/// raw units when normalization stats are present, one-hot slots as counts),
/// KW tests per numeric static slot and per time-series feature (per-subject
/// mean over observed bins), hourly series, and metadata outcome summaries.
PhenotypeReport characterize(const CohortDataset& cohort, std::span<const int> labels);

void write_static_csv(std::ostream& out, const PhenotypeReport& report);
void write_hourly_csv(std::ostream& out, const PhenotypeReport& report);
void write_tests_csv(std::ostream& out, const PhenotypeReport& report);
std::string report_json(const PhenotypeReport& report);
void write_pca_csv(std::ostream& out, const CohortDataset& cohort, const PcaResult& pca,
                   std::span<const int> labels);

}  // namespace slac
