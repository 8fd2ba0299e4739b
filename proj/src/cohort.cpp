#include "slac/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace slac {
namespace {

using json = nlohmann::json;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

std::optional<double> to_double(const std::string& text) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

[[noreturn]] void fail_at(const char* what, std::size_t line, const std::string& message) {
  throw Error(std::string(what) + " line " + std::to_string(line) + ": " + message);
}

double finite_or_fail(const std::string& text, const char* what, std::size_t line) {
  auto v = to_double(trim(text));
  if (!v) fail_at(what, line, "not a number: '" + text + "'");
  if (!std::isfinite(*v)) fail_at(what, line, "non-finite value: '" + text + "'");
  return *v;
}

bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

const StaticColumn* StaticSchema::find(const std::string& name) const {
  for (const auto& c : columns)
    if (c.name == name) return &c;
  return nullptr;
}

void ClinicalRangeTable::validate() const {
  for (const auto& [name, r] : ranges)
    if (!(r.first < r.second))
      throw Error("range for '" + name + "' must satisfy min < max");
}

int CohortDataset::feature_index(const std::string& name) const {
  auto it = std::lower_bound(feature_vocab.begin(), feature_vocab.end(), name);
  if (it == feature_vocab.end() || *it != name) return -1;
  return static_cast<int>(it - feature_vocab.begin());
}

CohortDataset CohortDataset::without_metadata() const {
  CohortDataset copy = *this;
  for (auto& e : copy.episodes) e.metadata.clear();
  return copy;
}

std::size_t ClipReport::total() const {
  std::size_t n = 0;
  for (const auto& [k, v] : removed) n += v;
  return n;
}

std::uint64_t vocab_hash(const std::vector<std::string>& vocab) {
  std::uint64_t h = fnv1a("vocab");
  for (const auto& f : vocab) {
    h = fnv1a(f, h);
    h = fnv1a(std::string_view("\n"), h);
  }
  return h;
}

// ---- ingestion -------------------------------------------------------------------

CohortDataset parse_cohort(std::istream& triplets, std::istream& statics, std::istream* metadata) {
  CohortDataset cohort;
  std::string line;

  // Static file defines the episode list and order.
  if (!read_line(statics, line)) throw Error("static CSV: missing header");
  auto header = split_csv(line);
  if (header.empty() || trim(header[0]) != "episode_id")
    throw Error("static CSV line 1: header must start with episode_id");
  for (std::size_t i = 1; i < header.size(); ++i) cohort.static_columns.push_back(trim(header[i]));
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t lineno = 2; read_line(statics, line); ++lineno) {
    if (trim(line).empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != header.size())
      fail_at("static CSV", lineno,
              "expected " + std::to_string(header.size()) + " cells, got " +
                  std::to_string(cells.size()));
    EpisodeRecord ep;
    ep.id = trim(cells[0]);
    if (ep.id.empty()) fail_at("static CSV", lineno, "empty episode_id");
    if (index.count(ep.id)) fail_at("static CSV", lineno, "duplicate episode '" + ep.id + "'");
    for (std::size_t i = 1; i < cells.size(); ++i) {
      auto v = trim(cells[i]);
      if (v.empty())
        ep.static_raw.emplace_back(std::nullopt);
      else
        ep.static_raw.emplace_back(std::move(v));
    }
    index.emplace(ep.id, cohort.episodes.size());
    cohort.episodes.push_back(std::move(ep));
  }

  struct RawTriplet {
    std::size_t episode;
    double time;
    std::string feature;
    double value;
  };
  std::vector<RawTriplet> raw;
  std::set<std::string> names;
  if (read_line(triplets, line)) {
    auto h = split_csv(line);
    for (auto& c : h) c = trim(c);
    if (h != std::vector<std::string>{"episode_id", "time_hours", "feature", "value"})
      throw Error("triplet CSV line 1: header must be episode_id,time_hours,feature,value");
    for (std::size_t lineno = 2; read_line(triplets, line); ++lineno) {
      if (trim(line).empty()) continue;
      auto cells = split_csv(line);
      if (cells.size() != 4) fail_at("triplet CSV", lineno, "expected 4 cells");
      auto id = trim(cells[0]);
      auto it = index.find(id);
      if (it == index.end())
        fail_at("triplet CSV", lineno, "episode '" + id + "' has no static row");
      const double t = finite_or_fail(cells[1], "triplet CSV", lineno);
      if (t < 0.0) fail_at("triplet CSV", lineno, "negative time");
      auto feature = trim(cells[2]);
      if (feature.empty()) fail_at("triplet CSV", lineno, "empty feature name");
      const double v = finite_or_fail(cells[3], "triplet CSV", lineno);
      names.insert(feature);
      raw.push_back({it->second, t, std::move(feature), v});
    }
  }
  cohort.feature_vocab.assign(names.begin(), names.end());
  for (const auto& r : raw) {
    cohort.episodes[r.episode].triplets.push_back(
        {r.time, cohort.feature_index(r.feature), r.value});
  }

  if (metadata != nullptr && read_line(*metadata, line)) {
    auto mh = split_csv(line);
    if (mh.empty() || trim(mh[0]) != "episode_id")
      throw Error("metadata CSV line 1: header must start with episode_id");
    for (std::size_t lineno = 2; read_line(*metadata, line); ++lineno) {
      if (trim(line).empty()) continue;
      auto cells = split_csv(line);
      if (cells.size() != mh.size()) fail_at("metadata CSV", lineno, "wrong cell count");
      auto it = index.find(trim(cells[0]));
      if (it == index.end()) fail_at("metadata CSV", lineno, "unknown episode");
      for (std::size_t i = 1; i < cells.size(); ++i) {
        auto v = trim(cells[i]);
        if (!v.empty()) cohort.episodes[it->second].metadata[trim(mh[i])] = v;
      }
    }
  }
  return cohort;
}

void write_cohort(const CohortDataset& cohort, std::ostream& triplets, std::ostream& statics,
                  std::ostream* metadata) {
  triplets << "episode_id,time_hours,feature,value\n";
  for (const auto& ep : cohort.episodes)
    for (const auto& t : ep.triplets)
      triplets << ep.id << ',' << format_double(t.time) << ',' << cohort.feature_vocab[t.feature]
               << ',' << format_double(t.value) << '\n';

  const bool encoded = !cohort.static_slots.empty();
  const auto& cols = encoded ? cohort.static_slots : cohort.static_columns;
  statics << "episode_id";
  for (const auto& c : cols) statics << ',' << c;
  statics << '\n';
  for (const auto& ep : cohort.episodes) {
    statics << ep.id;
    if (encoded) {
      for (Eigen::Index i = 0; i < ep.static_vector.size(); ++i)
        statics << ',' << format_double(ep.static_vector[i]);
    } else {
      for (const auto& cell : ep.static_raw) statics << ',' << (cell ? *cell : std::string());
    }
    statics << '\n';
  }

  if (metadata != nullptr) {
    std::set<std::string> keys;
    for (const auto& ep : cohort.episodes)
      for (const auto& [k, v] : ep.metadata) keys.insert(k);
    *metadata << "episode_id";
    for (const auto& k : keys) *metadata << ',' << k;
    *metadata << '\n';
    for (const auto& ep : cohort.episodes) {
      *metadata << ep.id;
      for (const auto& k : keys) {
        auto it = ep.metadata.find(k);
        *metadata << ',' << (it == ep.metadata.end() ? std::string() : it->second);
      }
      *metadata << '\n';
    }
  }
}

StaticSchema parse_schema(std::istream& in) {
  json j = json::parse(in);
  if (!j.is_object()) throw Error("schema: expected a JSON object");
  StaticSchema schema;
  for (const auto& [name, spec] : j.items()) {
    StaticColumn col;
    col.name = name;
    const auto kind = spec.at("kind").get<std::string>();
    if (kind == "numeric") {
      col.kind = ColumnKind::numeric;
    } else if (kind == "categorical") {
      col.kind = ColumnKind::categorical;
      col.categories = spec.at("categories").get<std::vector<std::string>>();
      if (col.categories.empty()) throw Error("schema: column '" + name + "' has no categories");
    } else {
      throw Error("schema: column '" + name + "' has unknown kind '" + kind + "'");
    }
    schema.columns.push_back(std::move(col));
  }
  return schema;
}

std::string schema_to_json(const StaticSchema& schema) {
  json j = json::object();
  for (const auto& c : schema.columns) {
    if (c.kind == ColumnKind::numeric)
      j[c.name] = {{"kind", "numeric"}};
    else
      j[c.name] = {{"kind", "categorical"}, {"categories", c.categories}};
  }
  return j.dump(2);
}

ClinicalRangeTable parse_ranges(std::istream& in) {
  json j = json::parse(in);
  if (!j.is_object()) throw Error("range table: expected a JSON object");
  ClinicalRangeTable table;
  for (const auto& [name, r] : j.items()) {
    if (!r.is_array() || r.size() != 2) throw Error("range table: '" + name + "' must be [min, max]");
    table.ranges[name] = {r[0].get<double>(), r[1].get<double>()};
  }
  table.validate();
  return table;
}

std::string ranges_to_json(const ClinicalRangeTable& ranges) {
  json j = json::object();
  for (const auto& [name, r] : ranges.ranges) j[name] = {r.first, r.second};
  return j.dump(2);
}

std::string stats_to_json(const NormalizationStats& stats) {
  auto block = [](const std::map<std::string, FeatureStats>& m) {
    json j = json::object();
    for (const auto& [k, s] : m) j[k] = {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
    return j;
  };
  json j = {{"series", block(stats.series)}, {"statics", block(stats.statics)}};
  return j.dump(2);
}

NormalizationStats parse_stats(std::istream& in) {
  json j = json::parse(in);
  NormalizationStats stats;
  auto block = [](const json& b, std::map<std::string, FeatureStats>& out) {
    for (const auto& [k, s] : b.items())
      out[k] = {s.at("mean").get<double>(), s.at("std").get<double>(),
                s.at("count").get<std::size_t>()};
  };
  block(j.at("series"), stats.series);
  block(j.at("statics"), stats.statics);
  return stats;
}

// ---- preprocessing -----------------------------------------------------------------

CohortDataset clip_outliers(const CohortDataset& cohort, const ClinicalRangeTable& ranges,
                            ClipReport* report) {
  ranges.validate();
  std::vector<bool> used(cohort.num_features(), false);
  for (const auto& ep : cohort.episodes)
    for (const auto& t : ep.triplets) used[t.feature] = true;
  std::vector<std::string> missing;
  std::vector<std::pair<double, double>> bounds(cohort.num_features());
  for (std::size_t f = 0; f < cohort.num_features(); ++f) {
    auto it = ranges.ranges.find(cohort.feature_vocab[f]);
    if (it == ranges.ranges.end()) {
      if (used[f]) missing.push_back(cohort.feature_vocab[f]);
    } else {
      bounds[f] = it->second;
    }
  }
  if (!missing.empty()) {
    std::string msg = "range table lacks features:";
    for (const auto& m : missing) msg += " " + m;
    throw Error(msg);
  }

  ClipReport local;
  CohortDataset out = cohort;
  for (auto& ep : out.episodes) {
    std::erase_if(ep.triplets, [&](const ObservationTriplet& t) {
      const auto [lo, hi] = bounds[t.feature];
      const bool drop = t.value < lo || t.value > hi;
      if (drop) ++local.removed[cohort.feature_vocab[t.feature]];
      return drop;
    });
  }
  for (std::size_t c = 0; c < out.static_columns.size(); ++c) {
    auto it = ranges.ranges.find(out.static_columns[c]);
    if (it == ranges.ranges.end()) continue;
    for (auto& ep : out.episodes) {
      auto& cell = ep.static_raw[c];
      if (!cell) continue;
      auto v = to_double(*cell);
      if (v && (*v < it->second.first || *v > it->second.second)) {
        cell.reset();
        ++local.static_removed[out.static_columns[c]];
      }
    }
  }
  if (report != nullptr) *report = std::move(local);
  return out;
}

EpisodeRecord shift_time_origin(const EpisodeRecord& episode) {
  EpisodeRecord out = episode;
  if (out.triplets.empty()) return out;
  double origin = out.triplets.front().time;
  for (const auto& t : out.triplets) origin = std::min(origin, t.time);
  for (auto& t : out.triplets) t.time -= origin;
  return out;
}

EpisodeRecord bin_hourly(const EpisodeRecord& episode) {
  struct Cell {
    double sum = 0.0;
    int count = 0;
  };
  std::map<std::pair<int, int>, Cell> cells;  // (hour, feature)
  for (const auto& t : episode.triplets) {
    if (!(t.time < kHorizonHours)) continue;
    const int hour = static_cast<int>(std::floor(t.time));
    auto& c = cells[{hour, t.feature}];
    c.sum += t.value;
    ++c.count;
  }
  EpisodeRecord out = episode;
  out.triplets.clear();
  out.triplets.reserve(cells.size());
  for (const auto& [key, c] : cells)
    out.triplets.push_back({key.first + 0.5, key.second, c.sum / c.count});
  return out;
}

std::map<std::string, FeatureStats> fit_zscore(const CohortDataset& cohort) {
  const auto nf = cohort.num_features();
  std::vector<double> sum(nf, 0.0);
  std::vector<std::size_t> count(nf, 0);
  for (const auto& ep : cohort.episodes)
    for (const auto& t : ep.triplets) {
      sum[t.feature] += t.value;
      ++count[t.feature];
    }
  std::vector<double> sq(nf, 0.0);
  for (const auto& ep : cohort.episodes)
    for (const auto& t : ep.triplets) {
      const double dv = t.value - sum[t.feature] / static_cast<double>(count[t.feature]);
      sq[t.feature] += dv * dv;
    }
  std::map<std::string, FeatureStats> stats;
  for (std::size_t f = 0; f < nf; ++f) {
    if (count[f] == 0) continue;
    const double n = static_cast<double>(count[f]);
    stats[cohort.feature_vocab[f]] = {sum[f] / n, std::sqrt(sq[f] / n), count[f]};
  }
  return stats;
}

double zscore(double value, const FeatureStats& stats) {
  if (stats.std < 1e-12) return 0.0;
  return (value - stats.mean) / stats.std;
}

CohortDataset apply_zscore(const CohortDataset& cohort,
                           const std::map<std::string, FeatureStats>& stats) {
  std::vector<const FeatureStats*> lookup(cohort.num_features(), nullptr);
  for (std::size_t f = 0; f < cohort.num_features(); ++f) {
    auto it = stats.find(cohort.feature_vocab[f]);
    if (it != stats.end()) lookup[f] = &it->second;
  }
  CohortDataset out = cohort;
  for (auto& ep : out.episodes)
    for (auto& t : ep.triplets) {
      if (lookup[t.feature] == nullptr)
        throw Error("no normalization statistics for feature '" +
                    cohort.feature_vocab[t.feature] + "'");
      t.value = zscore(t.value, *lookup[t.feature]);
    }
  out.normalization.series = stats;
  return out;
}

Matrix one_hot_static(const CohortDataset& cohort, const StaticSchema& schema,
                      std::vector<std::string>* slot_names, std::vector<bool>* numeric_slot) {
  std::vector<const StaticColumn*> cols;
  std::vector<std::string> names;
  std::vector<bool> numeric;
  for (const auto& name : cohort.static_columns) {
    const auto* col = schema.find(name);
    if (col == nullptr) throw Error("schema does not declare static column '" + name + "'");
    cols.push_back(col);
    if (col->kind == ColumnKind::numeric) {
      names.push_back(name);
      numeric.push_back(true);
    } else {
      for (const auto& cat : col->categories) {
        names.push_back(name + "=" + cat);
        numeric.push_back(false);
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(cohort.size());
  Matrix out = Matrix::Zero(n, static_cast<Eigen::Index>(names.size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& ep = cohort.episodes[r];
    Eigen::Index slot = 0;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const auto& cell = ep.static_raw[c];
      if (cols[c]->kind == ColumnKind::numeric) {
        if (!cell) {
          out(r, slot) = std::numeric_limits<double>::quiet_NaN();
        } else {
          auto v = to_double(*cell);
          if (!v || !std::isfinite(*v))
            throw Error("episode '" + ep.id + "': column '" + cols[c]->name +
                        "' is not a finite number: '" + *cell + "'");
          out(r, slot) = *v;
        }
        ++slot;
      } else {
        const auto& cats = cols[c]->categories;
        if (cell) {
          auto it = std::find(cats.begin(), cats.end(), *cell);
          if (it == cats.end())
            throw Error("episode '" + ep.id + "': column '" + cols[c]->name +
                        "' has undeclared category '" + *cell + "'");
          out(r, slot + (it - cats.begin())) = 1.0;
        }
        slot += static_cast<Eigen::Index>(cats.size());
      }
    }
  }
  if (slot_names != nullptr) *slot_names = std::move(names);
  if (numeric_slot != nullptr) *numeric_slot = std::move(numeric);
  return out;
}

Matrix iterative_impute_static(const Matrix& data, ImputeOptions options) {
  const auto n = data.rows();
  const auto p = data.cols();
  Matrix x = data;
  std::vector<std::vector<Eigen::Index>> missing(p), observed(p);
  for (Eigen::Index c = 0; c < p; ++c) {
    for (Eigen::Index r = 0; r < n; ++r)
      (std::isnan(data(r, c)) ? missing : observed)[c].push_back(r);
    if (observed[c].empty())
      throw Error("static column " + std::to_string(c) + " has no observed values");
  }
  std::vector<Eigen::Index> incomplete;
  for (Eigen::Index c = 0; c < p; ++c) {
    if (missing[c].empty()) continue;
    double mean = 0.0, lo = data(observed[c][0], c), hi = lo;
    for (auto r : observed[c]) {
      mean += data(r, c);
      lo = std::min(lo, data(r, c));
      hi = std::max(hi, data(r, c));
    }
    mean /= static_cast<double>(observed[c].size());
    // constant columns: the constant is the only consistent fill
    const double fill = (hi - lo) < 1e-12 ? lo : mean;
    for (auto r : missing[c]) x(r, c) = fill;
    if ((hi - lo) >= 1e-12) incomplete.push_back(c);
  }
  if (incomplete.empty() || p < 2) return x;

  for (int sweep = 0; sweep < options.sweeps; ++sweep) {
    for (auto c : incomplete) {
      const auto n_obs = static_cast<Eigen::Index>(observed[c].size());
      Matrix design(n_obs, p);  // other columns + intercept in column c's slot
      Vector target(n_obs);
      for (Eigen::Index i = 0; i < n_obs; ++i) {
        const auto r = observed[c][i];
        design.row(i) = x.row(r);
        design(i, c) = 1.0;
        target(i) = x(r, c);
      }
      Vector coef = design.completeOrthogonalDecomposition().solve(target);
      for (auto r : missing[c]) {
        RowVector row = x.row(r);
        row(c) = 1.0;
        x(r, c) = row.dot(coef);
      }
    }
  }
  return x;
}

CohortDataset encode_static(const CohortDataset& cohort, const StaticSchema& schema,
                            const std::map<std::string, FeatureStats>* stats) {
  std::vector<std::string> slots;
  std::vector<bool> numeric;
  Matrix m = one_hot_static(cohort, schema, &slots, &numeric);
  std::map<std::string, FeatureStats> fitted;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (!numeric[c]) continue;
    FeatureStats s;
    if (stats != nullptr) {
      auto it = stats->find(slots[c]);
      if (it == stats->end())
        throw Error("no normalization statistics for static column '" + slots[c] + "'");
      s = it->second;
    } else {
      double sum = 0.0;
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        if (!std::isnan(m(r, c))) {
          sum += m(r, c);
          ++k;
        }
      if (k == 0) throw Error("static column '" + slots[c] + "' has no observed values");
      const double mean = sum / static_cast<double>(k);
      double sq = 0.0;
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        if (!std::isnan(m(r, c))) sq += (m(r, c) - mean) * (m(r, c) - mean);
      s = {mean, std::sqrt(sq / static_cast<double>(k)), k};
    }
    fitted[slots[c]] = s;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      if (!std::isnan(m(r, c))) m(r, c) = zscore(m(r, c), s);
  }
  if (m.rows() > 0 && m.cols() > 0) m = iterative_impute_static(m);

  CohortDataset out = cohort;
  out.static_slots = slots;
  out.normalization.statics = std::move(fitted);
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.episodes[r].static_vector = m.row(r).transpose();
  return out;
}

CohortDataset adopt_numeric_static(const CohortDataset& cohort) {
  CohortDataset out = cohort;
  out.static_slots = cohort.static_columns;
  for (auto& ep : out.episodes) {
    ep.static_vector.resize(static_cast<Eigen::Index>(ep.static_raw.size()));
    for (std::size_t c = 0; c < ep.static_raw.size(); ++c) {
      const auto& cell = ep.static_raw[c];
      std::optional<double> v = cell ? to_double(*cell) : std::nullopt;
      if (!v || !std::isfinite(*v))
        throw Error("episode '" + ep.id + "': encoded static column '" + cohort.static_columns[c] +
                    "' must hold a finite number");
      ep.static_vector[static_cast<Eigen::Index>(c)] = *v;
    }
  }
  return out;
}

CohortDataset align_vocabulary(const CohortDataset& cohort, const std::vector<std::string>& vocab) {
  if (!std::is_sorted(vocab.begin(), vocab.end()) ||
      std::adjacent_find(vocab.begin(), vocab.end()) != vocab.end())
    throw Error("align_vocabulary: vocabulary must be sorted and unique");
  std::vector<int> remap(cohort.feature_vocab.size(), -1);
  for (std::size_t f = 0; f < cohort.feature_vocab.size(); ++f) {
    auto it = std::lower_bound(vocab.begin(), vocab.end(), cohort.feature_vocab[f]);
    if (it == vocab.end() || *it != cohort.feature_vocab[f])
      throw Error("align_vocabulary: feature '" + cohort.feature_vocab[f] + "' is not in the target vocabulary");
    remap[f] = static_cast<int>(it - vocab.begin());
  }
  CohortDataset out = cohort;
  out.feature_vocab = vocab;
  for (auto& ep : out.episodes)
    for (auto& t : ep.triplets) t.feature = remap[static_cast<std::size_t>(t.feature)];
  return out;
}

CohortDataset preprocess(const CohortDataset& raw, const ClinicalRangeTable& ranges,
                         const StaticSchema& schema, const NormalizationStats* fitted,
                         PreprocessReport* report) {
  PreprocessReport local;
  for (const auto& ep : raw.episodes) local.triplets_before += ep.triplets.size();

  CohortDataset cohort = clip_outliers(raw, ranges, &local.clip);
  for (auto& ep : cohort.episodes) ep = bin_hourly(shift_time_origin(ep));

  std::vector<EpisodeRecord> kept;
  for (auto& ep : cohort.episodes) {
    if (ep.triplets.empty()) {
      local.dropped_ids.push_back(ep.id);
      continue;
    }
    kept.push_back(std::move(ep));
  }
  cohort.episodes = std::move(kept);
  local.dropped_empty = local.dropped_ids.size();

  cohort = apply_zscore(cohort, fitted ? fitted->series : fit_zscore(cohort));
  if (fitted != nullptr) {
    std::vector<std::string> vocab;
    for (const auto& [name, st] : fitted->series) vocab.push_back(name);
    cohort = align_vocabulary(cohort, vocab);
  }
  cohort = encode_static(cohort, schema, fitted ? &fitted->statics : nullptr);
  for (const auto& ep : cohort.episodes) local.triplets_after += ep.triplets.size();
  if (report != nullptr) *report = std::move(local);
  return cohort;
}

}  // namespace slac
