#include "slac/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include <Eigen/Eigenvalues>
#include <json.hpp>

namespace slac {

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0)) throw Error("regularized_gamma_q: a must be positive");
  if (x < 0.0 || std::isnan(x)) throw Error("regularized_gamma_q: x must be >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  const double log_prefix = -x + a * std::log(x) - std::lgamma(a);
  constexpr double eps = 1e-16;
  if (x < a + 1.0) {
    double ap = a, term = 1.0 / a, sum = term;
    for (int i = 0; i < 10000; ++i) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * eps) break;
    }
    return std::clamp(1.0 - sum * std::exp(log_prefix), 0.0, 1.0);
  }
  // Modified Lentz evaluation of the continued fraction for Q.
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::clamp(std::exp(log_prefix) * h, 0.0, 1.0);
}

double chi_square_sf(double x, double df) {
  if (!(df > 0.0)) throw Error("chi_square_sf: degrees of freedom must be positive");
  if (x <= 0.0) return 1.0;
  return regularized_gamma_q(0.5 * df, 0.5 * x);
}

std::vector<double> mid_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[order[m]] = r;
    i = j + 1;
  }
  return ranks;
}

KruskalWallisResult kruskal_wallis(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) throw Error("kruskal_wallis: needs at least 2 groups");
  std::vector<double> pooled;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw Error("kruskal_wallis: group " + std::to_string(g) + " is empty");
    for (double v : groups[g]) {
      if (!std::isfinite(v)) throw Error("kruskal_wallis: values must be finite");
      pooled.push_back(v);
    }
  }
  const auto n = static_cast<double>(pooled.size());
  if (pooled.size() < 3) throw Error("kruskal_wallis: needs at least 3 observations");
  const auto ranks = mid_ranks(pooled);

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_sum = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto t = static_cast<double>(j - i);
    tie_sum += t * t * t - t;
    i = j;
  }
  const double correction = 1.0 - tie_sum / (n * n * n - n);
  if (correction <= 0.0) return {0.0, 1.0};

  double h = 0.0;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) rank_sum += ranks[offset + i];
    offset += g.size();
    const auto ni = static_cast<double>(g.size());
    const double dev = rank_sum / ni - 0.5 * (n + 1.0);
    h += ni * dev * dev;
  }
  h *= 12.0 / (n * (n + 1.0));
  h /= correction;
  return {h, chi_square_sf(h, static_cast<double>(groups.size() - 1))};
}

namespace {

int cluster_count(std::span<const int> labels, std::size_t expected) {
  if (labels.size() != expected)
    throw Error("labels cover " + std::to_string(labels.size()) + " episodes, cohort has " +
                std::to_string(expected));
  int k = 0;
  for (int l : labels) {
    if (l < 0) throw Error("cluster labels must be non-negative");
    k = std::max(k, l + 1);
  }
  return k;
}

double raw_value(double v, const FeatureStats* s) { return s ? v * s->std + s->mean : v; }

struct MeanSd {
  double mean = 0.0;
  std::optional<double> sd;
};

MeanSd mean_sd(std::span<const double> xs) {
  MeanSd out;
  if (xs.empty()) return out;
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::vector<HourlyStat> hourly_mean_ci(const CohortDataset& cohort, std::span<const int> labels,
                                       const std::string& feature, const FeatureStats* to_raw) {
  const int k = cluster_count(labels, cohort.size());
  const int f = cohort.feature_index(feature);
  if (f < 0) throw Error("hourly_mean_ci: feature '" + feature + "' is not in the vocabulary");
  // values[cluster][hour] = one value per observed subject
  std::vector<std::vector<std::vector<double>>> values(
      static_cast<std::size_t>(k), std::vector<std::vector<double>>(kHorizonHours));
  for (std::size_t e = 0; e < cohort.size(); ++e) {
    std::map<int, std::pair<double, int>> per_hour;
    for (const auto& t : cohort.episodes[e].triplets) {
      if (t.feature != f) continue;
      const int hour = static_cast<int>(std::floor(t.time));
      if (hour < 0 || hour >= kHorizonHours) continue;
      auto& cell = per_hour[hour];
      cell.first += t.value;
      cell.second += 1;
    }
    for (const auto& [hour, cell] : per_hour)
      values[static_cast<std::size_t>(labels[e])][static_cast<std::size_t>(hour)].push_back(
          raw_value(cell.first / cell.second, to_raw));
  }
  std::vector<HourlyStat> out;
  for (int c = 0; c < k; ++c)
    for (int h = 0; h < kHorizonHours; ++h) {
      const auto& xs = values[static_cast<std::size_t>(c)][static_cast<std::size_t>(h)];
      HourlyStat s;
      s.cluster = c;
      s.hour = h;
      s.n = xs.size();
      if (!xs.empty()) {
        const auto ms = mean_sd(xs);
        s.mean = ms.mean;
        if (ms.sd) {
          const double half = 1.96 * *ms.sd / std::sqrt(static_cast<double>(xs.size()));
          s.ci_low = s.mean - half;
          s.ci_high = s.mean + half;
        }
      } else {
        s.mean = std::numeric_limits<double>::quiet_NaN();
      }
      out.push_back(s);
    }
  return out;
}

PcaResult pca_project(const Matrix& data, int c) {
  if (c < 1) throw Error("pca_project: need at least one component");
  if (data.rows() < 2) throw Error("pca_project: need at least 2 rows");
  if (data.cols() < c) throw Error("pca_project: fewer columns than components");
  if (!data.allFinite()) throw Error("pca_project: data must be finite");
  const Matrix centered = data.rowwise() - data.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(data.rows() - 1);
  const double total = cov.trace();
  if (!(total > 1e-300)) throw Error("pca_project: data has zero variance");
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success) throw Error("pca_project: eigendecomposition failed");
  PcaResult r;
  r.components.resize(data.cols(), c);
  r.explained_variance_ratio.resize(c);
  for (int j = 0; j < c; ++j) {
    const auto src = data.cols() - 1 - j;  // eigenvalues ascend
    Vector v = es.eigenvectors().col(src);
    Eigen::Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v[big] < 0) v = -v;
    r.components.col(j) = v;
    r.explained_variance_ratio[j] = std::max(0.0, es.eigenvalues()[src]) / total;
  }
  r.coordinates = centered * r.components;
  return r;
}

PhenotypeReport characterize(const CohortDataset& cohort, std::span<const int> labels) {
  PhenotypeReport rep;
  rep.clusters = cluster_count(labels, cohort.size());
  const auto k = static_cast<std::size_t>(rep.clusters);
  rep.counts.assign(k, 0);
  for (int l : labels) ++rep.counts[static_cast<std::size_t>(l)];
  for (auto n : rep.counts)
    rep.proportions.push_back(cohort.size() ? static_cast<double>(n) / static_cast<double>(cohort.size()) : 0.0);

  auto add_test = [&](const std::string& name, const std::vector<std::vector<double>>& groups) {
    std::vector<std::vector<double>> nonempty;
    std::size_t total = 0;
    for (const auto& g : groups)
      if (!g.empty()) {
        nonempty.push_back(g);
        total += g.size();
      }
    if (nonempty.size() < 2 || total < 3) return;
    const auto r = kruskal_wallis(nonempty);
    rep.tests.push_back({name, r, r.p < 0.05});
  };

  // static block
  for (std::size_t s = 0; s < cohort.static_width(); ++s) {
    const auto& slot = cohort.static_slots[s];
    const bool categorical = slot.find('=') != std::string::npos;
    const auto stats_it = cohort.normalization.statics.find(slot);
    const FeatureStats* to_raw = stats_it == cohort.normalization.statics.end() ? nullptr : &stats_it->second;
    std::vector<std::vector<double>> groups(k);
    for (std::size_t e = 0; e < cohort.size(); ++e)
      groups[static_cast<std::size_t>(labels[e])].push_back(
          raw_value(cohort.episodes[e].static_vector[static_cast<Eigen::Index>(s)], to_raw));
    for (std::size_t c = 0; c < k; ++c) {
      if (groups[c].empty()) continue;
      if (categorical) {
        const auto hits = static_cast<std::size_t>(std::count_if(
            groups[c].begin(), groups[c].end(), [](double v) { return v > 0.5; }));
        rep.statics.push_back({static_cast<int>(c), slot,
                               static_cast<double>(hits) / static_cast<double>(groups[c].size()),
                               std::nullopt, hits});
      } else {
        const auto ms = mean_sd(groups[c]);
        rep.statics.push_back({static_cast<int>(c), slot, ms.mean, ms.sd, groups[c].size()});
      }
    }
    if (!categorical) add_test(slot, groups);
  }

  // time series: per-subject mean over observed bins for the test
  for (std::size_t f = 0; f < cohort.num_features(); ++f) {
    const auto& name = cohort.feature_vocab[f];
    const auto it = cohort.normalization.series.find(name);
    const FeatureStats* to_raw = it == cohort.normalization.series.end() ? nullptr : &it->second;
    std::vector<std::vector<double>> groups(k);
    for (std::size_t e = 0; e < cohort.size(); ++e) {
      double sum = 0.0;
      int n = 0;
      for (const auto& t : cohort.episodes[e].triplets)
        if (t.feature == static_cast<int>(f)) {
          sum += raw_value(t.value, to_raw);
          ++n;
        }
      if (n > 0) groups[static_cast<std::size_t>(labels[e])].push_back(sum / n);
    }
    add_test(name, groups);
    rep.hourly[name] = hourly_mean_ci(cohort, labels, name, to_raw);
  }

  // outcomes
  std::set<std::string> keys;
  for (const auto& e : cohort.episodes)
    for (const auto& [key, value] : e.metadata) keys.insert(key);
  for (const auto& key : keys) {
    bool numeric = true;
    for (const auto& e : cohort.episodes) {
      auto it = e.metadata.find(key);
      if (it != e.metadata.end() && !it->second.empty() && !parse_number(it->second)) numeric = false;
    }
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> xs;
      std::map<std::string, std::size_t> levels;
      std::size_t present = 0;
      for (std::size_t e = 0; e < cohort.size(); ++e) {
        if (static_cast<std::size_t>(labels[e]) != c) continue;
        auto it = cohort.episodes[e].metadata.find(key);
        if (it == cohort.episodes[e].metadata.end() || it->second.empty()) continue;
        ++present;
        if (numeric) xs.push_back(*parse_number(it->second));
        else ++levels[it->second];
      }
      if (present == 0) continue;
      if (numeric) {
        const auto ms = mean_sd(xs);
        rep.outcomes.push_back({static_cast<int>(c), key, "", ms.mean, ms.sd, xs.size()});
      } else {
        for (const auto& [level, count] : levels)
          rep.outcomes.push_back({static_cast<int>(c), key, level,
                                  static_cast<double>(count) / static_cast<double>(present), std::nullopt, count});
      }
    }
  }
  return rep;
}

void write_static_csv(std::ostream& out, const PhenotypeReport& r) {
  out << "cluster,feature,mean,sd,n\n";
  for (const auto& s : r.statics)
    out << s.cluster << ',' << s.feature << ',' << format_double(s.mean) << ',' << opt_field(s.sd) << ','
        << s.n << '\n';
}

void write_hourly_csv(std::ostream& out, const PhenotypeReport& r) {
  out << "cluster,feature,hour,mean,ci_low,ci_high,n\n";
  for (const auto& [feature, rows] : r.hourly)
    for (const auto& h : rows)
      out << h.cluster << ',' << feature << ',' << h.hour << ',' << (h.empty() ? "" : format_double(h.mean))
          << ',' << opt_field(h.ci_low) << ',' << opt_field(h.ci_high) << ',' << h.n << '\n';
}

void write_tests_csv(std::ostream& out, const PhenotypeReport& r) {
  out << "feature,H,p\n";
  for (const auto& t : r.tests) out << t.feature << ',' << format_double(t.result.h) << ',' << format_double(t.result.p) << '\n';
}

std::string report_json(const PhenotypeReport& r) {
  nlohmann::ordered_json j;
  j["clusters"] = r.clusters;
  j["counts"] = r.counts;
  j["proportions"] = r.proportions;
  auto tests = nlohmann::ordered_json::array();
  for (const auto& t : r.tests)
    tests.push_back({{"feature", t.feature}, {"H", t.result.h}, {"p", t.result.p}, {"significant", t.significant}});
  j["tests"] = tests;
  auto statics = nlohmann::ordered_json::array();
  for (const auto& s : r.statics) {
    nlohmann::ordered_json row = {{"cluster", s.cluster}, {"feature", s.feature}, {"mean", s.mean}};
    row["sd"] = s.sd ? nlohmann::ordered_json(*s.sd) : nlohmann::ordered_json(nullptr);
    row["n"] = s.n;
    statics.push_back(row);
  }
  j["statics"] = statics;
  auto outcomes = nlohmann::ordered_json::array();
  for (const auto& o : r.outcomes) {
    nlohmann::ordered_json row = {{"cluster", o.cluster}, {"key", o.key}};
    if (!o.level.empty()) row["level"] = o.level;
    row["value"] = o.value;
    row["sd"] = o.sd ? nlohmann::ordered_json(*o.sd) : nlohmann::ordered_json(nullptr);
    row["n"] = o.n;
    outcomes.push_back(row);
  }
  j["outcomes"] = outcomes;
  return j.dump(2);
}

void write_pca_csv(std::ostream& out, const CohortDataset& cohort, const PcaResult& pca,
                   std::span<const int> labels) {
  if (pca.coordinates.rows() != static_cast<Eigen::Index>(cohort.size()) || labels.size() != cohort.size())
    throw Error("write_pca_csv: coordinates, labels and cohort differ in length");
  if (pca.coordinates.cols() < 2) throw Error("write_pca_csv: need two components");
  out << "episode_id,pc1,pc2,cluster\n";
  for (std::size_t i = 0; i < cohort.size(); ++i)
    out << cohort.episodes[i].id << ',' << format_double(pca.coordinates(static_cast<Eigen::Index>(i), 0)) << ','
        << format_double(pca.coordinates(static_cast<Eigen::Index>(i), 1)) << ',' << labels[i] << '\n';
}

}  // namespace slac
