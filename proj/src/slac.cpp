#include "slac/slac.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "slac/forecast.hpp"
#include "slac/optim.hpp"

namespace slac {

std::vector<int> extract_pseudo_labels(const CohortDataset& cohort, const EncoderState& state, int k,
                                       std::uint64_t seed, const KMeansOptions& options,
                                       Matrix* representations) {
  if (k < 2) throw Error("extract_pseudo_labels: K must be >= 2");
  Matrix reps = represent_all(cohort, state);
  auto model = kmeans(reps, k, seed, options);
  if (representations) *representations = std::move(reps);
  return model.labels;
}

IndexSplit stratified_split(std::span<const int> labels, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error("stratified_split: train fraction must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  IndexSplit split;
  for (auto& [label, members] : by_class) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
    shuffle_range(members.begin(), members.end(), rng);
    auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(members.size())));
    if (members.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    else n_train = members.size();
    split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.validation.insert(split.validation.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train),
                            members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

ad::Var classifier_head(ad::Tape& t, const EncoderState& s, ad::Var rep) {
  if (s.classifier_w.value.size() == 0) throw Error("classifier head is not initialized");
  return ad::dense(t, rep, t.parameter(s.classifier_w), t.parameter(s.classifier_b));
}

namespace {

ad::Var episode_logits(ad::Tape& t, const EncoderState& s, const EpisodeRecord& e) {
  return classifier_head(t, s, represent(t, s, e.static_vector, e.triplets));
}

void check_labels(const CohortDataset& cohort, std::span<const int> labels, int k) {
  if (labels.size() != cohort.size())
    throw Error("classifier: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(cohort.size()) + " episodes");
  for (int l : labels)
    if (l < 0 || l >= k) throw Error("classifier: label " + std::to_string(l) + " outside [0, K)");
  if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) == labels.end())
    throw Error("classifier: all labels identical, no clustering signal to learn");
}

}  // namespace

double classification_loss(const CohortDataset& cohort, std::span<const int> labels,
                           std::span<const std::size_t> rows, const EncoderState& state) {
  if (rows.empty()) return 0.0;
  double total = 0.0;
  for (auto i : rows) {
    ad::Tape t;
    const int y = labels[i];
    total += t.scalar(ad::softmax_cross_entropy(t, episode_logits(t, state, cohort.episodes[i]), std::span(&y, 1)));
  }
  return total / static_cast<double>(rows.size());
}

std::vector<int> predict_classes(const CohortDataset& cohort, const EncoderState& state) {
  std::vector<int> out;
  out.reserve(cohort.size());
  for (const auto& e : cohort.episodes) {
    ad::Tape t;
    const auto& logits = t.value(episode_logits(t, state, e));
    Eigen::Index best = 0;
    logits.row(0).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

ClassifierTrainResult train_classifier(const CohortDataset& cohort, std::span<const int> labels,
                                       EncoderState& state, const ClassifierTrainOptions& opt) {
  const int k = static_cast<int>(state.classifier_w.value.cols());
  check_labels(cohort, labels, k);
  if (opt.batch_size < 1 || opt.max_epochs < 0 || opt.patience < 1)
    throw Error("classifier: batch size and patience must be >= 1, epochs >= 0");
  ClassifierTrainResult result;
  result.split = opt.split ? *opt.split : stratified_split(labels, opt.train_fraction, opt.seed);
  for (const auto* side : {&result.split.train, &result.split.validation})
    for (auto i : *side)
      if (i >= cohort.size()) throw Error("classifier: split index outside the cohort");
  if (result.split.train.empty()) throw Error("classifier: training split is empty");
  if (result.split.validation.empty()) throw Error("classifier: validation split is empty");

  auto params = state.all_params();
  std::erase_if(params, [&](const ParamTensor* p) {
    return p == &state.forecast_w || p == &state.forecast_b;
  });
  zero_grads(params);
  AdamState adam(AdamOptions{opt.learning_rate});
  EarlyStopping stopper(opt.patience);
  EncoderState best = state;
  result.best_val_loss = classification_loss(cohort, labels, result.split.validation, state);

  auto order = result.split.train;
  const auto batch = static_cast<std::size_t>(opt.batch_size);
  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    Rng rng(derive_seed(opt.seed, 0x636c66, static_cast<std::uint64_t>(epoch)));
    shuffle_range(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const auto stop = std::min(order.size(), start + batch);
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        ad::Tape t;
        const int y = labels[order[i]];
        auto loss = ad::softmax_cross_entropy(t, episode_logits(t, state, cohort.episodes[order[i]]),
                                              std::span(&y, 1));
        const double value = t.scalar(loss);
        if (!std::isfinite(value)) throw Error("classifier: non-finite loss at epoch " + std::to_string(epoch));
        batch_loss += value;
        t.backward(loss, inv_b);
      }
      if (epoch == 1 && start == 0) result.first_batch_loss = batch_loss * inv_b;
      total += batch_loss;
      adam_step(params, adam);
    }
    const double val = classification_loss(cohort, labels, result.split.validation, state);
    result.train_loss.push_back(total / static_cast<double>(order.size()));
    result.val_loss.push_back(val);
    result.epochs_run = epoch;
    if (stopper.update(val)) {
      best = state;
      result.best_epoch = epoch;
      result.best_val_loss = val;
    }
    if (stopper.should_stop()) break;
  }
  if (result.best_epoch > 0) state = std::move(best);
  zero_grads(state.all_params());

  const auto predicted = predict_classes(cohort, state);
  std::size_t hits = 0;
  for (auto i : result.split.train) hits += predicted[i] == labels[i];
  result.train_accuracy = result.split.train.empty()
                              ? 0.0
                              : static_cast<double>(hits) / static_cast<double>(result.split.train.size());
  return result;
}

ClassifierTrainResult train_classifier_iteration(const CohortDataset& cohort, std::span<const int> labels,
                                                 EncoderState& state, const ModelConfig& config,
                                                 std::uint64_t seed) {
  if (state.classifier_w.value.cols() != config.clusters)
    state.reset_classifier(config.clusters, derive_seed(seed, 0x68656164));
  ClassifierTrainOptions opt;
  opt.max_epochs = config.classifier_epochs;
  opt.patience = config.patience;
  opt.batch_size = config.batch_size;
  opt.learning_rate = config.learning_rate;
  opt.seed = seed;
  return train_classifier(cohort, labels, state, opt);
}

SlacRunResult run_slac(const CohortDataset& full, const EncoderState& pretrained, const ModelConfig& config,
                       const IterationCallback& on_iteration) {
  config.validate();
  if (config.clusters < 2) throw Error("run_slac: K must be >= 2");
  const CohortDataset cohort = full.without_metadata();
  SlacRunResult result;
  result.config = config;
  EncoderState state = pretrained;
  state.config = config;
  state.check_compatible(cohort);
  state.reset_classifier(config.clusters, derive_seed(config.seed, 0x68656164));

  KMeansOptions km;
  km.restarts = config.kmeans_restarts;
  std::vector<int> previous;
  int agreeing = 0;
  for (int it = 1; it <= config.iterations; ++it) {
    try {
      Matrix reps;
      auto labels = extract_pseudo_labels(cohort, state, config.clusters,
                                          derive_seed(config.seed, 0x6b6d, static_cast<std::uint64_t>(it)), km,
                                          &reps);
      SlacIterationRecord rec;
      rec.iteration = it;
      rec.agreement = 1.0;
      if (!previous.empty()) {
        // Keep class ids stable so the warm-started head sees consistent targets.
        labels = align_labels(labels, previous, config.clusters);
        rec.agreement = adjusted_rand_index(labels, previous);
      }
      rec.scores = validity_scores(reps, labels);
      auto trained = train_classifier_iteration(cohort, labels, state, config,
                                                derive_seed(config.seed, 0x636c, static_cast<std::uint64_t>(it)));
      rec.val_loss = trained.best_val_loss;
      rec.epochs = trained.epochs_run;
      agreeing = (!previous.empty() && rec.agreement >= kAgreementThreshold) ? agreeing + 1 : 0;
      previous = std::move(labels);
      result.iterations.push_back(rec);
      if (on_iteration) on_iteration(rec);
      if (agreeing >= kAgreementRuns) {
        result.stopped_on_agreement = true;
        break;
      }
    } catch (const Error& e) {
      throw Error("SLAC iteration " + std::to_string(it) + ": " + e.what());
    }
  }
  auto labels = extract_pseudo_labels(cohort, state, config.clusters,
                                      derive_seed(config.seed, 0x6b6d, 0), km, &result.final_representations);
  if (!previous.empty()) labels = align_labels(labels, previous, config.clusters);
  result.final_scores = validity_scores(result.final_representations, labels);
  result.final_labels = std::move(labels);
  result.final_state = std::move(state);
  return result;
}

void write_labels(std::ostream& out, const CohortDataset& cohort, std::span<const int> labels) {
  if (labels.size() != cohort.size()) throw Error("write_labels: label count does not match episodes");
  out << "episode_id,cluster\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out << cohort.episodes[i].id << ',' << labels[i] << '\n';
}

std::vector<int> read_labels(std::istream& in, const CohortDataset& cohort) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < cohort.size(); ++i) index[cohort.episodes[i].id] = i;
  std::vector<int> labels(cohort.size(), -1);
  std::string line;
  if (!std::getline(in, line) || line.rfind("episode_id,cluster", 0) != 0)
    throw Error("labels: expected header 'episode_id,cluster'");
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error("labels line " + std::to_string(line_no) + ": missing comma");
    const auto id = line.substr(0, comma);
    auto it = index.find(id);
    if (it == index.end()) throw Error("labels line " + std::to_string(line_no) + ": unknown episode '" + id + "'");
    if (labels[it->second] >= 0) throw Error("labels line " + std::to_string(line_no) + ": duplicate episode '" + id + "'");
    try {
      labels[it->second] = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw Error("labels line " + std::to_string(line_no) + ": bad cluster index");
    }
    if (labels[it->second] < 0) throw Error("labels line " + std::to_string(line_no) + ": negative cluster index");
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0) throw Error("labels: episode '" + cohort.episodes[i].id + "' has no label");
  return labels;
}

void write_iteration_history(std::ostream& out, std::span<const SlacIterationRecord> records) {
  out << "iteration,agreement,val_loss,epochs,SS,CHS,DBS\n";
  for (const auto& r : records)
    out << r.iteration << ',' << format_double(r.agreement) << ',' << format_double(r.val_loss) << ','
        << r.epochs << ',' << format_double(r.scores.silhouette) << ','
        << format_double(r.scores.calinski_harabasz) << ',' << format_double(r.scores.davies_bouldin) << '\n';
}

std::string scores_json(const ValidityScores& s, const ModelConfig& config) {
  nlohmann::ordered_json j;
  j["SS"] = s.silhouette;
  j["CHS"] = s.calinski_harabasz;
  j["DBS"] = s.davies_bouldin;
  j["config"] = nlohmann::ordered_json::parse(config.to_json());
  return j.dump(2);
}

std::size_t select_row(std::span<const SweepRow> rows) {
  if (rows.empty()) throw Error("select_row: empty sweep table");
  auto key = [](const SweepRow& r) { return std::tie(r.blocks, r.dim, r.heads, r.clusters); };
  auto pick = [&](auto better) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const int c = better(rows[i], rows[best]);
      if (c > 0 || (c == 0 && key(rows[i]) < key(rows[best]))) best = i;
    }
    return best;
  };
  auto cmp = [](double a, double b) { return a > b ? 1 : (a < b ? -1 : 0); };
  std::vector<int> wins(rows.size(), 0);
  ++wins[pick([&](const SweepRow& a, const SweepRow& b) { return cmp(a.scores.silhouette, b.scores.silhouette); })];
  ++wins[pick([&](const SweepRow& a, const SweepRow& b) {
    return cmp(a.scores.calinski_harabasz, b.scores.calinski_harabasz);
  })];
  ++wins[pick([&](const SweepRow& a, const SweepRow& b) { return cmp(b.scores.davies_bouldin, a.scores.davies_bouldin); })];
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (wins[i] > wins[best] || (wins[i] == wins[best] && key(rows[i]) < key(rows[best]))) best = i;
  return best;
}

SweepTable sweep(const CohortDataset& cohort, const SweepGrid& grid, const ModelConfig& base,
                 const SweepCallback& log) {
  if (grid.blocks.empty() || grid.dims.empty() || grid.heads.empty() || grid.clusters.empty())
    throw Error("sweep: every grid axis needs at least one value");
  SweepTable table;
  const auto stripped = cohort.without_metadata();
  auto note = [&](const std::string& m) {
    if (log) log(m);
  };
  for (int m : grid.blocks)
    for (int d : grid.dims)
      for (int h : grid.heads) {
        if (h < 1 || d < 1 || d % h != 0) {
          table.warnings.push_back("skipping d=" + std::to_string(d) + ", h=" + std::to_string(h) +
                                   ": d is not divisible by h");
          note(table.warnings.back());
          continue;
        }
        ModelConfig pc = base;
        pc.blocks = m;
        pc.dim = d;
        pc.heads = h;
        pc.seed = derive_seed(base.seed, static_cast<std::uint64_t>(m),
                              static_cast<std::uint64_t>(d) << 16 | static_cast<std::uint64_t>(h));
        note("pretraining M=" + std::to_string(m) + ",d=" + std::to_string(d) + ",h=" + std::to_string(h));
        const auto pre = pretrain(stripped, pc);
        // Each run's encoder is trained to separate its own K classes, so rows
        // are scored in the shared pretrained space to stay comparable across K.
        const Matrix shared = represent_all(stripped, pre.state);
        for (int k : grid.clusters) {
          ModelConfig rc = pc;
          rc.clusters = k;
          rc.seed = derive_seed(pc.seed, static_cast<std::uint64_t>(k));
          note("SLAC M=" + std::to_string(m) + ",d=" + std::to_string(d) + ",h=" + std::to_string(h) +
               ",K=" + std::to_string(k));
          const auto run = run_slac(stripped, pre.state, rc);
          table.rows.push_back({m, d, h, k, validity_scores(shared, run.final_labels)});
        }
      }
  if (table.rows.empty()) throw Error("sweep: no valid grid point");
  table.selected = select_row(table.rows);
  return table;
}

void write_sweep_csv(std::ostream& out, const SweepTable& table) {
  out << "M,d,h,K,SS,CHS,DBS\n";
  for (const auto& r : table.rows)
    out << r.blocks << ',' << r.dim << ',' << r.heads << ',' << r.clusters << ','
        << format_double(r.scores.silhouette) << ',' << format_double(r.scores.calinski_harabasz) << ','
        << format_double(r.scores.davies_bouldin) << '\n';
}

std::string sweep_selection_json(const SweepTable& table) {
  const auto& r = table.rows.at(table.selected);
  nlohmann::ordered_json j;
  std::ostringstream label;
  label << "M=" << r.blocks << ",d=" << r.dim << ",h=" << r.heads << ",K=" << r.clusters;
  j["selected"] = label.str();
  j["M"] = r.blocks;
  j["d"] = r.dim;
  j["h"] = r.heads;
  j["K"] = r.clusters;
  j["SS"] = r.scores.silhouette;
  j["CHS"] = r.scores.calinski_harabasz;
  j["DBS"] = r.scores.davies_bouldin;
  j["rows"] = table.rows.size();
  j["warnings"] = table.warnings;
  return j.dump(2);
}

SweepGrid parse_grid(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  SweepGrid g;
  auto axis = [&](const char* name, std::vector<int>& dst) {
    if (j.contains(name)) dst = j.at(name).get<std::vector<int>>();
  };
  axis("M", g.blocks);
  axis("d", g.dims);
  axis("h", g.heads);
  axis("K", g.clusters);
  return g;
}

}  // namespace slac
