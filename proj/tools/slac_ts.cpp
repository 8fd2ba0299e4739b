// slac-ts: command-line driver for the phenotyping pipeline.
//
//   synth -> preprocess -> pretrain -> cluster -> characterize / pca / validate
//
// Every stage writes its artifacts plus <stage>.manifest.json (config hash,
// seed, content hashes of inputs and outputs) and prints a one-line JSON
// summary. Exit codes: 0 success, 1 validation verdict failed, 2 usage or data error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slac/forecast.hpp"
#include "slac/persist.hpp"
#include "slac/slac.hpp"
#include "slac/stats.hpp"
#include "slac/synth.hpp"
#include "slac/validation.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kVerdictFailed = 1;
constexpr int kUsageError = 2;

struct Manifest {
  std::string stage;
  std::optional<std::string> config_hash;
  std::optional<std::uint64_t> seed;
  std::vector<std::pair<std::string, fs::path>> inputs;  // label, path
  std::vector<std::string> outputs;                      // file names inside the stage directory
};

std::string hash_of(const fs::path& p) { return slac::hex64(slac::file_hash(p)); }

void write_manifest(const fs::path& dir, const Manifest& m) {
  ordered_json j;
  j["stage"] = m.stage;
  j["config_hash"] = m.config_hash ? ordered_json(*m.config_hash) : ordered_json(nullptr);
  j["seed"] = m.seed ? ordered_json(*m.seed) : ordered_json(nullptr);
  ordered_json in = ordered_json::object();
  for (const auto& [label, path] : m.inputs) in[label] = hash_of(path);
  ordered_json out = ordered_json::object();
  for (const auto& name : m.outputs) out[name] = hash_of(dir / name);
  j["inputs"] = in;
  j["outputs"] = out;
  std::ofstream(dir / (m.stage + ".manifest.json"), std::ios::binary) << j.dump(2) << '\n';
}

/// Loads <stage>.manifest.json from one of the candidate stages and checks every listed output.
nlohmann::json verify_manifest(const fs::path& dir, std::initializer_list<const char*> stages) {
  for (const char* stage : stages) {
    const auto path = dir / (std::string(stage) + ".manifest.json");
    if (!fs::exists(path)) continue;
    auto j = nlohmann::json::parse(slac::read_file(path));
    for (const auto& [name, hash] : j.at("outputs").items())
      if (hash_of(dir / name) != hash.get<std::string>())
        throw slac::Error("artifact '" + (dir / name).string() + "' does not match " + path.filename().string());
    return j;
  }
  std::string names;
  for (const char* s : stages) names += std::string(names.empty() ? "" : " or ") + s;
  throw slac::Error("'" + dir.string() + "' has no " + names + " manifest");
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw slac::Error("cannot open '" + p.string() + "'");
  return in;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw slac::Error("cannot write '" + p.string() + "'");
  return out;
}

slac::CohortDataset load_raw(const fs::path& dir) {
  auto trip = open_in(dir / "triplets.csv");
  auto stat = open_in(dir / "static.csv");
  std::optional<std::ifstream> meta;
  if (fs::exists(dir / "metadata.csv")) meta = open_in(dir / "metadata.csv");
  return slac::parse_cohort(trip, stat, meta ? &*meta : nullptr);
}

slac::CohortDataset load_preprocessed(const fs::path& dir) {
  verify_manifest(dir, {"preprocess"});
  auto cohort = slac::adopt_numeric_static(load_raw(dir));
  auto stats_in = open_in(dir / "stats.json");
  cohort.normalization = slac::parse_stats(stats_in);
  std::vector<std::string> vocab;
  for (const auto& [name, st] : cohort.normalization.series) vocab.push_back(name);
  return slac::align_vocabulary(cohort, vocab);
}

std::vector<std::pair<std::string, fs::path>> data_inputs(const fs::path& dir) {
  return {{"triplets.csv", dir / "triplets.csv"}, {"static.csv", dir / "static.csv"}};
}

/// Weights must come from a run on the same data files.
void check_same_data(const nlohmann::json& upstream, const fs::path& data) {
  for (const auto& [label, path] : data_inputs(data)) {
    const auto& in = upstream.at("inputs");
    if (!in.contains(label)) continue;
    if (in.at(label).get<std::string>() != hash_of(path))
      throw slac::Error("weights were produced from a different '" + label + "' than " + path.string());
  }
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool needs_config = true) {
  if (needs_config) app->add_option("--config", c.config, "model config JSON");
  app->add_option("--seed", c.seed, "random seed (required unless the config has one)");
  app->add_option("--out", c.out, "output directory")->required();
}

slac::ModelConfig load_config(const Common& c) {
  nlohmann::json j = nlohmann::json::object();
  if (!c.config.empty()) j = nlohmann::json::parse(slac::read_file(c.config));
  if (c.seed) j["seed"] = *c.seed;
  if (!j.contains("seed")) throw slac::Error("a seed is required (--seed or \"seed\" in the config)");
  return slac::ModelConfig::from_json(j.dump());
}

void check_shape_matches(const slac::EncoderState& state, const slac::ModelConfig& config) {
  if (state.config.blocks != config.blocks || state.config.dim != config.dim || state.config.heads != config.heads ||
      state.config.static_in_representation != config.static_in_representation)
    throw slac::Error("config (M, d, h) does not match the loaded weights");
}

slac::EncoderState load_weights(const fs::path& dir) {
  return slac::EncoderState::load(dir / "weights.json", dir / "weights.bin");
}

void emit(const ordered_json& summary) { std::cout << summary.dump() << std::endl; }

void progress(const std::string& msg) { std::cerr << msg << std::endl; }

// ---- stages -----------------------------------------------------------------------

int run_synth(const std::string& spec_path, const Common& c) {
  slac::SynthSpec spec;
  if (!spec_path.empty()) {
    auto in = open_in(spec_path);
    spec = slac::parse_synth_spec(in);
  }
  if (c.seed) spec.seed = *c.seed;
  else if (spec_path.empty()) throw slac::Error("a seed is required (--seed or \"seed\" in the synth spec file)");
  const fs::path out = c.out;
  const auto synth = slac::generate(spec);
  slac::write_synth(synth, out);
  Manifest m{"synth", std::nullopt, spec.seed, {}, {"triplets.csv", "static.csv", "metadata.csv", "schema.json", "ranges.json"}};
  if (!spec_path.empty()) m.inputs.push_back({"spec", spec_path});
  write_manifest(out, m);
  std::size_t triplets = 0;
  for (const auto& e : synth.cohort.episodes) triplets += e.triplets.size();
  emit({{"stage", "synth"}, {"episodes", synth.cohort.size()}, {"triplets", triplets}, {"out", out.string()}});
  return 0;
}

int run_preprocess(const fs::path& in, const std::string& stats_path, const Common& c) {
  const fs::path out = c.out;
  auto raw = load_raw(in);
  auto schema_in = open_in(in / "schema.json");
  auto ranges_in = open_in(in / "ranges.json");
  const auto schema = slac::parse_schema(schema_in);
  const auto ranges = slac::parse_ranges(ranges_in);
  std::optional<slac::NormalizationStats> fitted;
  if (!stats_path.empty()) {
    auto s = open_in(stats_path);
    fitted = slac::parse_stats(s);
  }
  slac::PreprocessReport report;
  const auto cohort = slac::preprocess(raw, ranges, schema, fitted ? &*fitted : nullptr, &report);
  fs::create_directories(out);
  {
    auto trip = open_out(out / "triplets.csv");
    auto stat = open_out(out / "static.csv");
    auto meta = open_out(out / "metadata.csv");
    slac::write_cohort(cohort, trip, stat, &meta);
    open_out(out / "stats.json") << slac::stats_to_json(cohort.normalization) << '\n';
    ordered_json r;
    r["triplets_before"] = report.triplets_before;
    r["triplets_after"] = report.triplets_after;
    r["clipped"] = report.clip.total();
    r["clipped_by_feature"] = report.clip.removed;
    r["static_cells_cleared"] = report.clip.static_removed;
    r["dropped_empty_episodes"] = report.dropped_ids;
    open_out(out / "preprocess_report.json") << r.dump(2) << '\n';
  }
  Manifest m{"preprocess", std::nullopt, std::nullopt, data_inputs(in),
             {"triplets.csv", "static.csv", "metadata.csv", "stats.json", "preprocess_report.json"}};
  m.inputs.push_back({"schema.json", in / "schema.json"});
  m.inputs.push_back({"ranges.json", in / "ranges.json"});
  if (!stats_path.empty()) m.inputs.push_back({"fitted_stats", stats_path});
  write_manifest(out, m);
  emit({{"stage", "preprocess"},
        {"episodes", cohort.size()},
        {"features", cohort.num_features()},
        {"static_width", cohort.static_width()},
        {"clipped", report.clip.total()},
        {"dropped_empty", report.dropped_empty}});
  return 0;
}

int run_pretrain(const fs::path& data, const Common& c) {
  const auto config = load_config(c);
  const fs::path out = c.out;
  const auto cohort = load_preprocessed(data).without_metadata();
  const auto result = slac::pretrain(cohort, config);
  for (const auto& r : result.history)
    progress("epoch " + std::to_string(r.epoch) + " train " + slac::format_double(r.train_loss) + " val " +
        slac::format_double(r.val_loss));
  fs::create_directories(out);
  result.state.save(out / "weights.json", out / "weights.bin");
  {
    auto h = open_out(out / "loss_history.csv");
    slac::write_loss_history(h, result.history);
  }
  Manifest m{"pretrain", slac::hex64(config.hash()), config.seed, data_inputs(data),
             {"weights.json", "weights.bin", "loss_history.csv"}};
  if (!c.config.empty()) m.inputs.push_back({"config", c.config});
  write_manifest(out, m);
  emit({{"stage", "pretrain"},
        {"instances_train", result.train.size()},
        {"instances_val", result.validation.size()},
        {"epochs", result.history.size()},
        {"best_epoch", result.best_epoch},
        {"initial_val_loss", result.initial_val_loss},
        {"best_val_loss", result.history.empty() ? result.initial_val_loss
                                                 : result.history[static_cast<std::size_t>(
                                                       std::max(0, result.best_epoch - 1))].val_loss},
        {"config_hash", slac::hex64(config.hash())}});
  return 0;
}

int run_cluster(const fs::path& data, const fs::path& weights, const Common& c) {
  const auto config = load_config(c);
  const fs::path out = c.out;
  const auto upstream = verify_manifest(weights, {"pretrain"});
  check_same_data(upstream, data);
  const auto cohort = load_preprocessed(data);
  const auto pretrained = load_weights(weights);
  check_shape_matches(pretrained, config);
  const auto run = slac::run_slac(cohort, pretrained, config, [](const slac::SlacIterationRecord& r) {
    progress("iteration " + std::to_string(r.iteration) + " agreement " + slac::format_double(r.agreement) +
        " val_loss " + slac::format_double(r.val_loss) + " epochs " + std::to_string(r.epochs));
  });
  fs::create_directories(out);
  {
    auto labels = open_out(out / "labels.csv");
    slac::write_labels(labels, cohort, run.final_labels);
    open_out(out / "scores.json") << slac::scores_json(run.final_scores, config) << '\n';
    auto hist = open_out(out / "iterations.csv");
    slac::write_iteration_history(hist, run.iterations);
  }
  run.final_state.save(out / "weights.json", out / "weights.bin");
  Manifest m{"cluster", slac::hex64(config.hash()), config.seed, data_inputs(data),
             {"labels.csv", "scores.json", "iterations.csv", "weights.json", "weights.bin"}};
  m.inputs.push_back({"pretrained_weights", weights / "weights.bin"});
  write_manifest(out, m);
  emit({{"stage", "cluster"},
        {"episodes", cohort.size()},
        {"K", config.clusters},
        {"iterations", run.iterations.size()},
        {"stopped_on_agreement", run.stopped_on_agreement},
        {"SS", run.final_scores.silhouette},
        {"CHS", run.final_scores.calinski_harabasz},
        {"DBS", run.final_scores.davies_bouldin}});
  return 0;
}

int run_sweep(const fs::path& data, const std::string& grid_path, const Common& c) {
  const auto config = load_config(c);
  const fs::path out = c.out;
  const auto grid = slac::parse_grid(slac::read_file(grid_path));
  const auto cohort = load_preprocessed(data);
  const auto table = slac::sweep(cohort, grid, config, progress);
  fs::create_directories(out);
  {
    auto csv = open_out(out / "sweep.csv");
    slac::write_sweep_csv(csv, table);
    open_out(out / "selection.json") << slac::sweep_selection_json(table) << '\n';
  }
  Manifest m{"sweep", slac::hex64(config.hash()), config.seed, data_inputs(data), {"sweep.csv", "selection.json"}};
  m.inputs.push_back({"grid", grid_path});
  write_manifest(out, m);
  const auto& best = table.rows[table.selected];
  emit({{"stage", "sweep"},
        {"rows", table.rows.size()},
        {"skipped", table.warnings.size()},
        {"selected", {{"M", best.blocks}, {"d", best.dim}, {"h", best.heads}, {"K", best.clusters}}}});
  return 0;
}

std::vector<int> load_labels(const fs::path& path, const slac::CohortDataset& cohort) {
  auto in = open_in(path);
  return slac::read_labels(in, cohort);
}

int run_characterize(const fs::path& data, const fs::path& labels_path, const Common& c) {
  const fs::path out = c.out;
  const auto cohort = load_preprocessed(data);
  const auto labels = load_labels(labels_path, cohort);
  const auto report = slac::characterize(cohort, labels);
  fs::create_directories(out);
  {
    auto s = open_out(out / "static_summary.csv");
    slac::write_static_csv(s, report);
    auto h = open_out(out / "hourly.csv");
    slac::write_hourly_csv(h, report);
    auto t = open_out(out / "tests.csv");
    slac::write_tests_csv(t, report);
    open_out(out / "report.json") << slac::report_json(report) << '\n';
  }
  Manifest m{"characterize", std::nullopt, std::nullopt, data_inputs(data),
             {"static_summary.csv", "hourly.csv", "tests.csv", "report.json"}};
  m.inputs.push_back({"labels", labels_path});
  write_manifest(out, m);
  std::size_t flagged = 0;
  for (const auto& t : report.tests) flagged += t.significant;
  emit({{"stage", "characterize"}, {"clusters", report.clusters}, {"counts", report.counts},
        {"tests", report.tests.size()}, {"significant", flagged}});
  return 0;
}

int run_pca(const fs::path& data, const fs::path& weights, const fs::path& labels_path, const Common& c) {
  const fs::path out = c.out;
  verify_manifest(weights, {"cluster", "pretrain"});
  const auto cohort = load_preprocessed(data);
  const auto state = load_weights(weights);
  const auto labels = load_labels(labels_path, cohort);
  const auto pca = slac::pca_project(slac::represent_all(cohort, state), 2);
  fs::create_directories(out);
  {
    auto csv = open_out(out / "pca.csv");
    slac::write_pca_csv(csv, cohort, pca, labels);
    ordered_json j;
    j["explained_variance_ratio"] = std::vector<double>(pca.explained_variance_ratio.data(),
                                                        pca.explained_variance_ratio.data() + 2);
    open_out(out / "pca.json") << j.dump(2) << '\n';
  }
  Manifest m{"pca", slac::hex64(state.config.hash()), std::nullopt, data_inputs(data), {"pca.csv", "pca.json"}};
  m.inputs.push_back({"weights", weights / "weights.bin"});
  m.inputs.push_back({"labels", labels_path});
  write_manifest(out, m);
  emit({{"stage", "pca"},
        {"episodes", cohort.size()},
        {"explained_variance_ratio", {pca.explained_variance_ratio[0], pca.explained_variance_ratio[1]}}});
  return 0;
}

struct ValidateArgs {
  std::string data, labels, weights, other;
  int folds = 10;
  int max_folds = -1;
  double test_fraction = 0.15;
  int n_perm = 999;
};

int run_validate(const ValidateArgs& a, const Common& c) {
  const auto config = load_config(c);
  const fs::path out = c.out;
  const auto upstream = verify_manifest(a.weights, {"pretrain"});
  check_same_data(upstream, a.data);
  const auto cohort = load_preprocessed(a.data);
  const auto labels = load_labels(a.labels, cohort);
  const auto pretrained = load_weights(a.weights);
  check_shape_matches(pretrained, config);

  const auto plan = slac::make_folds(labels, a.test_fraction, a.folds, config.seed);
  slac::PhenotypeTrainOptions opt;
  opt.max_epochs = config.classifier_epochs;
  opt.patience = config.patience;
  opt.batch_size = config.batch_size;
  opt.learning_rate = config.learning_rate;
  opt.seed = config.seed;
  opt.max_folds = a.max_folds;
  const auto classifier = slac::train_phenotype_classifier(cohort, labels, pretrained, plan, opt);
  for (const auto& f : classifier.folds)
    progress("fold " + std::to_string(f.fold) + " val_accuracy " + slac::format_double(f.val_accuracy));

  std::optional<slac::PhenotypeComparison> comparison;
  fs::create_directories(out);
  Manifest m{"validate", slac::hex64(config.hash()), config.seed, data_inputs(a.data), {"validation.json"}};
  m.inputs.push_back({"labels", a.labels});
  m.inputs.push_back({"pretrained_weights", fs::path(a.weights) / "weights.bin"});
  if (!a.other.empty()) {
    const auto other = load_preprocessed(a.other);
    const auto other_labels = slac::cross_apply(classifier.state, cohort, other);
    comparison = slac::compare_phenotype_distributions(
        labels, slac::represent_all(cohort, classifier.state), other_labels,
        slac::represent_all(other, classifier.state), a.n_perm, slac::derive_seed(config.seed, 0x786d));
    auto ol = open_out(out / "other_labels.csv");
    slac::write_labels(ol, other, other_labels);
    m.outputs.push_back("other_labels.csv");
    m.inputs.push_back({"other_triplets.csv", fs::path(a.other) / "triplets.csv"});
  }
  classifier.state.save(out / "weights.json", out / "weights.bin");
  open_out(out / "validation.json") << slac::validation_report_json(classifier, comparison) << '\n';
  m.outputs.push_back("weights.json");
  m.outputs.push_back("weights.bin");
  write_manifest(out, m);

  ordered_json summary = {{"stage", "validate"},
                          {"folds", classifier.folds.size()},
                          {"best_fold", classifier.best_fold},
                          {"test_accuracy", classifier.test_accuracy}};
  if (comparison) {
    std::vector<double> ps;
    for (const auto& r : comparison->per_phenotype) ps.push_back(r.p_value);
    summary["p_values"] = ps;
    summary["verdict"] = comparison->reproduced ? "reproduced" : "not reproduced";
  }
  emit(summary);
  return comparison && !comparison->reproduced ? kVerdictFailed : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised phenotyping of irregular clinical time series"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort with planted phenotypes");
  std::string spec;
  synth->add_option("--spec", spec, "synthetic cohort spec JSON");
  add_common(synth, common, false);

  auto* pre = app.add_subcommand("preprocess", "clip, bin, normalize and encode a raw cohort");
  std::string raw_dir, stats_path;
  pre->add_option("--in", raw_dir, "raw cohort directory")->required();
  pre->add_option("--stats", stats_path, "reuse normalization stats from another cohort");
  add_common(pre, common, false);

  std::string data, weights, labels, grid;
  auto* pt = app.add_subcommand("pretrain", "self-supervised forecasting pretraining");
  pt->add_option("--data", data, "preprocessed cohort directory")->required();
  add_common(pt, common);

  auto* cl = app.add_subcommand("cluster", "pseudo-label loop from pretrained weights");
  cl->add_option("--data", data, "preprocessed cohort directory")->required();
  cl->add_option("--weights", weights, "pretrain output directory")->required();
  add_common(cl, common);

  auto* sw = app.add_subcommand("sweep", "hyperparameter sweep over (M, d, h, K)");
  sw->add_option("--data", data, "preprocessed cohort directory")->required();
  sw->add_option("--grid", grid, "grid JSON with M, d, h, K lists")->required();
  add_common(sw, common);

  auto* ch = app.add_subcommand("characterize", "per-cluster summaries and tests");
  ch->add_option("--data", data, "preprocessed cohort directory")->required();
  ch->add_option("--labels", labels, "labels CSV")->required();
  add_common(ch, common, false);

  auto* pc = app.add_subcommand("pca", "2-D projection of learned representations");
  pc->add_option("--data", data, "preprocessed cohort directory")->required();
  pc->add_option("--weights", weights, "cluster or pretrain output directory")->required();
  pc->add_option("--labels", labels, "labels CSV")->required();
  add_common(pc, common, false);

  ValidateArgs va;
  auto* va_cmd = app.add_subcommand("validate", "fold-trained classifier and cross-cohort comparison");
  va_cmd->add_option("--data", va.data, "preprocessed cohort directory")->required();
  va_cmd->add_option("--labels", va.labels, "labels CSV for the cohort")->required();
  va_cmd->add_option("--weights", va.weights, "pretrain output directory")->required();
  va_cmd->add_option("--other", va.other, "second cohort, preprocessed with this cohort's stats");
  va_cmd->add_option("--folds", va.folds, "number of folds")->check(CLI::Range(2, 1000));
  va_cmd->add_option("--max-folds", va.max_folds, "train only the first n folds");
  va_cmd->add_option("--test-fraction", va.test_fraction, "held-out test fraction");
  va_cmd->add_option("--n-perm", va.n_perm, "cross-match permutations")->check(CLI::Range(1, 1000000));
  add_common(va_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*synth) return run_synth(spec, common);
    if (*pre) return run_preprocess(raw_dir, stats_path, common);
    if (*pt) return run_pretrain(data, common);
    if (*cl) return run_cluster(data, weights, common);
    if (*sw) return run_sweep(data, grid, common);
    if (*ch) return run_characterize(data, labels, common);
    if (*pc) return run_pca(data, weights, labels, common);
    if (*va_cmd) return run_validate(va, common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kUsageError;
  }
  return kUsageError;
}
