#include "slac/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace slac {
namespace {

double feature_center(std::size_t f) { return 40.0 + 15.0 * static_cast<double>(f); }
double feature_scale(std::size_t f) { return 2.0 + 0.5 * static_cast<double>(f); }

std::string ts_name(std::size_t f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ts_%02zu", f);
  return buf;
}

const std::vector<std::string> kLevels = {"a", "b", "c"};

}  // namespace

void SynthSpec::validate() const {
  if (n_episodes == 0) throw Error("synth: n_episodes must be positive");
  if (n_ts_features == 0) throw Error("synth: n_ts_features must be positive");
  if (n_phenotypes == 0) throw Error("synth: n_phenotypes must be positive");
  if (!(missingness_rate >= 0.0 && missingness_rate < 1.0))
    throw Error("synth: missingness_rate must lie in [0, 1)");
  if (!(static_missing_rate >= 0.0 && static_missing_rate < 1.0))
    throw Error("synth: static_missing_rate must lie in [0, 1)");
  if (!(separation >= 0.0)) throw Error("synth: separation must be nonnegative");
  if (!phenotype_proportions.empty()) {
    if (phenotype_proportions.size() != n_phenotypes)
      throw Error("synth: phenotype_proportions length must equal n_phenotypes");
    double s = 0.0;
    for (double p : phenotype_proportions) {
      if (p < 0.0) throw Error("synth: negative phenotype proportion");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw Error("synth: phenotype proportions must sum to 1");
  }
}

std::vector<double> SynthSpec::proportions() const {
  if (!phenotype_proportions.empty()) return phenotype_proportions;
  return std::vector<double>(n_phenotypes, 1.0 / static_cast<double>(n_phenotypes));
}

SynthCohort generate(const SynthSpec& spec) {
  spec.validate();
  const auto P = spec.n_phenotypes;
  const auto F = spec.n_ts_features;
  const auto S = spec.n_static_features;
  const auto C = spec.n_categorical;

  // Phenotype generators come from profile_seed so that cohorts drawn with
  // different seeds share one generating distribution.
  Rng prng(derive_seed(spec.profile_seed, 1));
  Matrix baseline(P, F), trend(P, F), static_offset(P, std::max<std::size_t>(S, 1));
  std::vector<Matrix> level_pref(C, Matrix(P, kLevels.size()));
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t f = 0; f < F; ++f) baseline(p, f) = normal_draw(prng);
    for (std::size_t f = 0; f < F; ++f) trend(p, f) = normal_draw(prng);
    for (std::size_t s = 0; s < S; ++s) static_offset(p, s) = normal_draw(prng);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t l = 0; l < kLevels.size(); ++l) level_pref[c](p, l) = normal_draw(prng);
  }

  // Exact largest-remainder allocation, then a seeded shuffle.
  const auto props = spec.proportions();
  std::vector<std::size_t> counts(P);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t p = 0; p < P; ++p) {
    const double exact = props[p] * static_cast<double>(spec.n_episodes);
    counts[p] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[p];
    remainders.push_back({exact - std::floor(exact), p});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < spec.n_episodes; ++i, ++assigned)
    ++counts[remainders[i % P].second];
  std::vector<int> phenotype;
  for (std::size_t p = 0; p < P; ++p) phenotype.insert(phenotype.end(), counts[p], static_cast<int>(p));
  Rng arng(derive_seed(spec.seed, 2));
  shuffle_range(phenotype.begin(), phenotype.end(), arng);

  SynthCohort out;
  auto& cohort = out.cohort;
  for (std::size_t f = 0; f < F; ++f) cohort.feature_vocab.push_back(ts_name(f));
  for (std::size_t s = 0; s < S; ++s) cohort.static_columns.push_back("static_" + std::to_string(s));
  for (std::size_t c = 0; c < C; ++c) cohort.static_columns.push_back("category_" + std::to_string(c));

  const double sep = spec.separation;
  const double phi = spec.ar_coefficient;
  const double innovation = std::sqrt(1.0 - phi * phi);
  const int H = kHorizonHours;
  char idbuf[32];
  for (std::size_t e = 0; e < spec.n_episodes; ++e) {
    Rng rng(derive_seed(spec.seed, 3, e));
    const int p = phenotype[e];
    EpisodeRecord ep;
    std::snprintf(idbuf, sizeof idbuf, "ep%05zu", e);
    ep.id = idbuf;
    for (std::size_t f = 0; f < F; ++f) {
      const double intercept = spec.episode_effect_sd * normal_draw(rng);
      double noise = normal_draw(rng);
      for (int k = 0; k < H; ++k) {
        if (k > 0) noise = phi * noise + innovation * normal_draw(rng);
        const double drop = uniform_draw(rng);
        const double jitter = uniform_draw(rng);
        const double outlier = uniform_draw(rng);
        if (drop < spec.missingness_rate) continue;
        const double progress = static_cast<double>(k) / (H - 1) - 0.5;
        const double latent = sep * (baseline(p, f) + trend(p, f) * progress) + intercept + noise;
        double value = feature_center(f) + feature_scale(f) * latent;
        if (outlier < spec.outlier_rate) value = feature_center(f) + 50.0 * feature_scale(f);
        ep.triplets.push_back({k + jitter, static_cast<int>(f), value});
      }
    }
    for (std::size_t s = 0; s < S; ++s) {
      const double v = 50.0 + 10.0 * (sep * static_offset(p, s) + normal_draw(rng));
      const bool miss = uniform_draw(rng) < spec.static_missing_rate;
      ep.static_raw.push_back(miss ? std::nullopt : std::optional<std::string>(format_double(v)));
    }
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> w(kLevels.size());
      double total = 0.0;
      for (std::size_t l = 0; l < w.size(); ++l) total += w[l] = std::exp(0.5 * sep * level_pref[c](p, l));
      double u = uniform_draw(rng) * total;
      std::size_t level = 0;
      while (level + 1 < w.size() && u >= w[level]) u -= w[level++];
      const bool miss = uniform_draw(rng) < spec.static_missing_rate;
      ep.static_raw.push_back(miss ? std::nullopt : std::optional<std::string>(kLevels[level]));
    }
    ep.metadata["phenotype"] = std::to_string(p);
    ep.metadata["mortality"] = uniform_draw(rng) < 0.05 + 0.1 * p ? "1" : "0";
    ep.metadata["icu_los_hours"] =
        format_double(std::round(std::exp(std::log(48.0) + 0.3 * p + 0.4 * normal_draw(rng)) * 10) / 10);
    cohort.episodes.push_back(std::move(ep));
  }

  for (std::size_t s = 0; s < S; ++s) {
    out.schema.columns.push_back({"static_" + std::to_string(s), ColumnKind::numeric, {}});
    const double half = 10.0 * (3.0 * sep + 10.0);
    out.ranges.ranges["static_" + std::to_string(s)] = {50.0 - half, 50.0 + half};
  }
  for (std::size_t c = 0; c < C; ++c)
    out.schema.columns.push_back({"category_" + std::to_string(c), ColumnKind::categorical, kLevels});
  for (std::size_t f = 0; f < F; ++f) {
    const double half = feature_scale(f) * (20.0 + 2.0 * sep);
    out.ranges.ranges[ts_name(f)] = {feature_center(f) - half, feature_center(f) + half};
  }
  return out;
}

SynthSpec parse_synth_spec(std::istream& in) {
  auto j = nlohmann::json::parse(in);
  SynthSpec s;
  s.n_episodes = j.value("n_episodes", s.n_episodes);
  s.n_phenotypes = j.value("n_phenotypes", s.n_phenotypes);
  s.phenotype_proportions = j.value("phenotype_proportions", s.phenotype_proportions);
  s.n_ts_features = j.value("n_ts_features", s.n_ts_features);
  s.n_static_features = j.value("n_static_features", s.n_static_features);
  s.missingness_rate = j.value("missingness_rate", s.missingness_rate);
  s.separation = j.value("separation", s.separation);
  s.seed = j.value("seed", s.seed);
  s.profile_seed = j.value("profile_seed", s.profile_seed);
  s.n_categorical = j.value("n_categorical", s.n_categorical);
  s.static_missing_rate = j.value("static_missing_rate", s.static_missing_rate);
  s.outlier_rate = j.value("outlier_rate", s.outlier_rate);
  s.ar_coefficient = j.value("ar_coefficient", s.ar_coefficient);
  s.episode_effect_sd = j.value("episode_effect_sd", s.episode_effect_sd);
  s.validate();
  return s;
}

void write_synth(const SynthCohort& synth, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream trip(dir / "triplets.csv", std::ios::binary);
  std::ofstream stat(dir / "static.csv", std::ios::binary);
  std::ofstream meta(dir / "metadata.csv", std::ios::binary);
  write_cohort(synth.cohort, trip, stat, &meta);
  std::ofstream(dir / "schema.json", std::ios::binary) << schema_to_json(synth.schema) << '\n';
  std::ofstream(dir / "ranges.json", std::ios::binary) << ranges_to_json(synth.ranges) << '\n';
}

std::vector<int> planted_labels(const CohortDataset& cohort) {
  std::vector<int> labels;
  labels.reserve(cohort.size());
  for (const auto& ep : cohort.episodes) {
    auto it = ep.metadata.find("phenotype");
    labels.push_back(it == ep.metadata.end() ? -1 : std::stoi(it->second));
  }
  return labels;
}

}  // namespace slac
