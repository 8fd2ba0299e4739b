#include "slac/encoder.hpp"

#include <cmath>

#include <json.hpp>

#include "slac/persist.hpp"

namespace slac {

// ---- config ---------------------------------------------------------------------

void ModelConfig::validate() const {
  if (blocks < 1) throw Error("config: blocks (M) must be >= 1");
  if (dim < 1 || heads < 1) throw Error("config: dim and heads must be positive");
  if (dim % heads != 0) throw Error("config: dim (d) must be divisible by heads (h)");
  if (clusters < 2) throw Error("config: clusters (K) must be >= 2");
  if (batch_size < 1) throw Error("config: batch_size must be >= 1");
  if (patience < 1) throw Error("config: patience must be >= 1");
  if (pretrain_epochs < 0 || classifier_epochs < 0 || iterations < 0)
    throw Error("config: epoch and iteration counts must be nonnegative");
  if (kmeans_restarts < 1) throw Error("config: kmeans_restarts must be >= 1");
  if (!(learning_rate > 0.0)) throw Error("config: learning_rate must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j = {{"M", blocks},
                      {"d", dim},
                      {"h", heads},
                      {"K", clusters},
                      {"batch_size", batch_size},
                      {"patience", patience},
                      {"pretrain_epochs", pretrain_epochs},
                      {"classifier_epochs", classifier_epochs},
                      {"iterations", iterations},
                      {"kmeans_restarts", kmeans_restarts},
                      {"learning_rate", learning_rate},
                      {"static_in_representation", static_in_representation},
                      {"episode_level_split", episode_level_split},
                      {"seed", seed}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  ModelConfig c;
  c.blocks = j.value("M", c.blocks);
  c.dim = j.value("d", c.dim);
  c.heads = j.value("h", c.heads);
  c.clusters = j.value("K", c.clusters);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.patience = j.value("patience", c.patience);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.classifier_epochs = j.value("classifier_epochs", c.classifier_epochs);
  c.iterations = j.value("iterations", c.iterations);
  c.kmeans_restarts = j.value("kmeans_restarts", c.kmeans_restarts);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.static_in_representation = j.value("static_in_representation", c.static_in_representation);
  c.episode_level_split = j.value("episode_level_split", c.episode_level_split);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::uint64_t ModelConfig::hash() const { return fnv1a(to_json()); }

// ---- state ----------------------------------------------------------------------

int EncoderState::cve_hidden() const {
  return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(config.dim))));
}

int EncoderState::representation_width() const {
  return config.static_in_representation ? 2 * config.dim : config.dim;
}

EncoderState EncoderState::initialize(const ModelConfig& config, std::size_t num_features,
                                      std::size_t static_width, std::uint64_t seed,
                                      std::uint64_t vocab_hash) {
  config.validate();
  if (num_features == 0) throw Error("encoder: feature vocabulary is empty");
  EncoderState s;
  s.config = config;
  s.num_features = num_features;
  s.static_width = static_width;
  s.feature_vocab_hash = vocab_hash;
  const auto d = config.dim;
  const auto nf = static_cast<Eigen::Index>(num_features);
  const auto sw = static_cast<Eigen::Index>(static_width);
  const auto hid = s.cve_hidden();
  const auto dh = d / config.heads;

  s.feature_table = ParamTensor("feature_table", nf, d);
  auto make_cve = [&](const std::string& prefix) {
    return CveParams{ParamTensor(prefix + ".w1", 1, hid), ParamTensor(prefix + ".b1", 1, hid),
                     ParamTensor(prefix + ".w2", hid, d), ParamTensor(prefix + ".b2", 1, d)};
  };
  s.value_cve = make_cve("value_cve");
  s.time_cve = make_cve("time_cve");
  s.static_w1 = ParamTensor("static.w1", sw, 2 * d);
  s.static_b1 = ParamTensor("static.b1", 1, 2 * d);
  s.static_w2 = ParamTensor("static.w2", 2 * d, d);
  s.static_b2 = ParamTensor("static.b2", 1, d);
  for (int m = 0; m < config.blocks; ++m) {
    const auto pre = "block" + std::to_string(m);
    TransformerBlockParams b;
    for (int h = 0; h < config.heads; ++h) {
      const auto hp = pre + ".head" + std::to_string(h);
      b.heads.push_back({ParamTensor(hp + ".query", d, dh), ParamTensor(hp + ".key", d, dh),
                         ParamTensor(hp + ".value", d, dh)});
    }
    b.out_w = ParamTensor(pre + ".out_w", d, d);
    b.out_b = ParamTensor(pre + ".out_b", 1, d);
    b.ffn_w1 = ParamTensor(pre + ".ffn_w1", d, 2 * d);
    b.ffn_b1 = ParamTensor(pre + ".ffn_b1", 1, 2 * d);
    b.ffn_w2 = ParamTensor(pre + ".ffn_w2", 2 * d, d);
    b.ffn_b2 = ParamTensor(pre + ".ffn_b2", 1, d);
    s.blocks.push_back(std::move(b));
  }
  s.fusion_w = ParamTensor("fusion.w", d, d);
  s.fusion_b = ParamTensor("fusion.b", 1, d);
  s.fusion_u = ParamTensor("fusion.u", d, 1);
  s.forecast_w = ParamTensor("forecast.w", 2 * d, nf);
  s.forecast_b = ParamTensor("forecast.b", 1, nf);

  Rng rng(derive_seed(seed, 0x656e63));
  auto is_bias = [](const std::string& name) {
    const auto leaf = name.substr(name.rfind('.') + 1);
    return leaf == "b" || leaf == "b1" || leaf == "b2" || leaf == "out_b" || leaf == "ffn_b1" ||
           leaf == "ffn_b2";
  };
  for (auto* p : s.encoder_params())
    if (!is_bias(p->name)) glorot_init(*p, rng);
  for (auto* p : s.forecast_params())
    if (!is_bias(p->name)) glorot_init(*p, rng);
  s.reset_classifier(config.clusters, derive_seed(seed, 0x636c73));
  return s;
}

void EncoderState::reset_classifier(int k, std::uint64_t seed) {
  if (k < 2) throw Error("classifier needs K >= 2");
  classifier_w = ParamTensor("classifier.w", representation_width(), k);
  classifier_b = ParamTensor("classifier.b", 1, k);
  Rng rng(seed);
  glorot_init(classifier_w, rng);
}

std::vector<ParamTensor*> EncoderState::encoder_params() {
  std::vector<ParamTensor*> out = {&feature_table,  &value_cve.w1, &value_cve.b1, &value_cve.w2,
                                   &value_cve.b2,   &time_cve.w1,  &time_cve.b1,  &time_cve.w2,
                                   &time_cve.b2,    &static_w1,    &static_b1,    &static_w2,
                                   &static_b2};
  for (auto& b : blocks) {
    for (auto& h : b.heads) {
      out.push_back(&h.query);
      out.push_back(&h.key);
      out.push_back(&h.value);
    }
    for (auto* p : {&b.out_w, &b.out_b, &b.ffn_w1, &b.ffn_b1, &b.ffn_w2, &b.ffn_b2}) out.push_back(p);
  }
  out.push_back(&fusion_w);
  out.push_back(&fusion_b);
  out.push_back(&fusion_u);
  return out;
}

std::vector<ParamTensor*> EncoderState::forecast_params() { return {&forecast_w, &forecast_b}; }
std::vector<ParamTensor*> EncoderState::classifier_params() { return {&classifier_w, &classifier_b}; }

std::vector<ParamTensor*> EncoderState::all_params() {
  auto out = encoder_params();
  for (auto* p : forecast_params()) out.push_back(p);
  for (auto* p : classifier_params()) out.push_back(p);
  return out;
}

std::vector<const ParamTensor*> EncoderState::all_params() const {
  auto ptrs = const_cast<EncoderState*>(this)->all_params();
  return {ptrs.begin(), ptrs.end()};
}

void EncoderState::check_compatible(const CohortDataset& cohort) const {
  if (cohort.num_features() != num_features)
    throw Error("encoder expects " + std::to_string(num_features) + " features, cohort has " +
                std::to_string(cohort.num_features()));
  if (cohort.static_width() != static_width)
    throw Error("encoder expects static width " + std::to_string(static_width) + ", cohort has " +
                std::to_string(cohort.static_width()));
  if (feature_vocab_hash != 0 && vocab_hash(cohort.feature_vocab) != feature_vocab_hash)
    throw Error("encoder was trained on a different feature vocabulary");
}

void EncoderState::save(const std::filesystem::path& manifest, const std::filesystem::path& blob) const {
  nlohmann::json extra = {{"config", nlohmann::json::parse(config.to_json())},
                          {"config_hash", hex64(config.hash())},
                          {"seed", config.seed},
                          {"num_features", num_features},
                          {"static_width", static_width},
                          {"classes", classifier_w.value.cols()},
                          {"feature_vocab_hash", hex64(feature_vocab_hash)}};
  auto params = all_params();
  save_tensors(manifest, blob, params, extra.dump());
}

EncoderState EncoderState::load(const std::filesystem::path& manifest, const std::filesystem::path& blob) {
  auto j = nlohmann::json::parse(read_file(manifest));
  auto config = ModelConfig::from_json(j.at("config").dump());
  if (j.at("config_hash").get<std::string>() != hex64(config.hash()))
    throw Error("weight manifest config hash does not match its config");
  const auto vh = std::stoull(j.at("feature_vocab_hash").get<std::string>(), nullptr, 16);
  auto s = initialize(config, j.at("num_features").get<std::size_t>(),
                      j.at("static_width").get<std::size_t>(), 0, vh);
  s.reset_classifier(j.at("classes").get<int>(), 0);
  auto params = s.all_params();
  load_tensors(manifest, blob, params);
  return s;
}

// ---- forward --------------------------------------------------------------------

namespace {

ad::Var cve(ad::Tape& t, const CveParams& p, Matrix input) {
  auto x = t.constant(std::move(input));
  auto h = ad::tanh(t, ad::dense(t, x, t.parameter(p.w1), t.parameter(p.b1)));
  return ad::dense(t, h, t.parameter(p.w2), t.parameter(p.b2));
}

}  // namespace

ad::Var embed_triplets(ad::Tape& t, const EncoderState& s, std::span<const ObservationTriplet> triplets) {
  const auto n = static_cast<Eigen::Index>(triplets.size());
  Matrix values(n, 1), times(n, 1);
  std::vector<int> features(triplets.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& tr = triplets[static_cast<std::size_t>(i)];
    if (tr.feature < 0 || static_cast<std::size_t>(tr.feature) >= s.num_features)
      throw Error("embed: feature index " + std::to_string(tr.feature) + " outside vocabulary");
    values(i, 0) = tr.value;
    times(i, 0) = tr.time / kHorizonHours;  // CVE input in horizon units
    features[static_cast<std::size_t>(i)] = tr.feature;
  }
  auto ef = ad::gather_rows(t, t.parameter(s.feature_table), features);
  auto ev = cve(t, s.value_cve, std::move(values));
  auto et = cve(t, s.time_cve, std::move(times));
  return ad::add(t, ad::add(t, ef, ev), et);
}

EpisodeEncoding encode_triplets(ad::Tape& t, const EncoderState& s,
                                std::span<const ObservationTriplet> triplets) {
  if (triplets.empty()) throw Error("encode: episode has no triplets");
  auto x = embed_triplets(t, s, triplets);
  for (const auto& b : s.blocks) {
    std::vector<ad::Var> heads;
    for (const auto& h : b.heads) {
      auto q = ad::matmul(t, x, t.parameter(h.query));
      auto k = ad::matmul(t, x, t.parameter(h.key));
      auto v = ad::matmul(t, x, t.parameter(h.value));
      heads.push_back(ad::attention(t, q, k, v));
    }
    auto attn = ad::dense(t, ad::concat_cols(t, heads), t.parameter(b.out_w), t.parameter(b.out_b));
    x = ad::add(t, x, attn);
    auto hidden = ad::tanh(t, ad::dense(t, x, t.parameter(b.ffn_w1), t.parameter(b.ffn_b1)));
    x = ad::add(t, x, ad::dense(t, hidden, t.parameter(b.ffn_w2), t.parameter(b.ffn_b2)));
  }
  auto scores = ad::matmul(
      t, ad::tanh(t, ad::dense(t, x, t.parameter(s.fusion_w), t.parameter(s.fusion_b))),
      t.parameter(s.fusion_u));                                   // n x 1
  auto alpha = ad::softmax_rows(t, ad::transpose(t, scores));     // 1 x n
  return {ad::matmul(t, alpha, x), alpha};
}

ad::Var embed_static(ad::Tape& t, const EncoderState& s, const Vector& static_vector) {
  if (static_cast<std::size_t>(static_vector.size()) != s.static_width)
    throw Error("embed_static: expected width " + std::to_string(s.static_width) + ", got " +
                std::to_string(static_vector.size()));
  auto x = t.constant(static_vector.transpose());
  auto h = ad::tanh(t, ad::dense(t, x, t.parameter(s.static_w1), t.parameter(s.static_b1)));
  return ad::dense(t, h, t.parameter(s.static_w2), t.parameter(s.static_b2));
}

ad::Var represent(ad::Tape& t, const EncoderState& s, const Vector& static_vector,
                  std::span<const ObservationTriplet> triplets) {
  auto et = encode_triplets(t, s, triplets).pooled;
  if (!s.config.static_in_representation) return et;
  auto ed = embed_static(t, s, static_vector);
  const ad::Var parts[] = {ed, et};
  return ad::concat_cols(t, parts);
}

RowVector embed_triplet(const ObservationTriplet& triplet, const EncoderState& state) {
  ad::Tape t;
  return t.value(embed_triplets(t, state, std::span(&triplet, 1))).row(0);
}

EncodedEpisode encode_episode(const EpisodeRecord& episode, const EncoderState& state) {
  ad::Tape t;
  auto enc = encode_triplets(t, state, episode.triplets);
  return {t.value(enc.pooled).row(0), t.value(enc.attention).row(0)};
}

RowVector embed_static(const Vector& static_vector, const EncoderState& state) {
  ad::Tape t;
  return t.value(embed_static(t, state, static_vector)).row(0);
}

RowVector represent(const EpisodeRecord& episode, const EncoderState& state) {
  ad::Tape t;
  return t.value(represent(t, state, episode.static_vector, episode.triplets)).row(0);
}

Matrix represent_all(const CohortDataset& cohort, const EncoderState& state) {
  Matrix out(static_cast<Eigen::Index>(cohort.size()), state.representation_width());
  for (std::size_t i = 0; i < cohort.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = represent(cohort.episodes[i], state);
  return out;
}

}  // namespace slac
