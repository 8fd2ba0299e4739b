#pragma once

// Triplet encoder. Each observation (t, f, v) embeds as
//   feature_table[f] + CVE_value(v) + CVE_time(t),
// passes through M residual transformer blocks (multi-head self-attention and
// a position-wise tanh FFN, no normalization layers), and is pooled by fusion
// attention into e_T. The static vector embeds through its own FFN into e_d.
// The clustering/classification representation is [e_d ; e_T].

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "slac/autodiff.hpp"
#include "slac/cohort.hpp"

namespace slac {

struct ModelConfig {
  int blocks = 1;      // M
  int dim = 8;         // d
  int heads = 2;       // h
  int clusters = 3;    // K
  int batch_size = 8;
  int patience = 10;
  int pretrain_epochs = 50;
  int classifier_epochs = 200;   // per SLAC iteration
  int iterations = 25;           // SLAC iterations
  int kmeans_restarts = 10;
  double learning_rate = 5e-4;
  bool static_in_representation = true;  // false: representation = e_T only
  bool episode_level_split = false;      // forecasting split by episode instead of instance
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  std::uint64_t hash() const;
};

struct CveParams {
  ParamTensor w1, b1, w2, b2;
};

struct AttentionHeadParams {
  ParamTensor query, key, value;
};

struct TransformerBlockParams {
  std::vector<AttentionHeadParams> heads;
  ParamTensor out_w, out_b;
  ParamTensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct EncoderState {
  ModelConfig config;
  std::size_t num_features = 0;
  std::size_t static_width = 0;
  std::uint64_t feature_vocab_hash = 0;

  ParamTensor feature_table;  // |F| x d
  CveParams value_cve;
  CveParams time_cve;
  ParamTensor static_w1, static_b1, static_w2, static_b2;  // D -> 2d -> d
  std::vector<TransformerBlockParams> blocks;
  ParamTensor fusion_w, fusion_b, fusion_u;  // d x d, 1 x d, d x 1
  ParamTensor forecast_w, forecast_b;        // 2d x |F|, 1 x |F|
  ParamTensor classifier_w, classifier_b;    // p x K, 1 x K (empty until reset_classifier)

  static EncoderState initialize(const ModelConfig& config, std::size_t num_features,
                                 std::size_t static_width, std::uint64_t seed,
                                 std::uint64_t vocab_hash = 0);

  /// Fresh classifier head for k classes (Glorot weights, zero bias).
  void reset_classifier(int k, std::uint64_t seed);

  int representation_width() const;
  int cve_hidden() const;

  std::vector<ParamTensor*> encoder_params();     // theta
  std::vector<ParamTensor*> forecast_params();    // W_s, b_s
  std::vector<ParamTensor*> classifier_params();  // W, b
  std::vector<ParamTensor*> all_params();
  std::vector<const ParamTensor*> all_params() const;

  /// Throws if the cohort does not match the shapes/vocabulary this state was built for.
  void check_compatible(const CohortDataset& cohort) const;

  void save(const std::filesystem::path& manifest, const std::filesystem::path& blob) const;
  static EncoderState load(const std::filesystem::path& manifest, const std::filesystem::path& blob);
};

// ---- taped forward pieces ----
struct EpisodeEncoding {
  ad::Var pooled;     // 1 x d  (e_T)
  ad::Var attention;  // 1 x n  fusion weights
};

ad::Var embed_triplets(ad::Tape& tape, const EncoderState& state,
                       std::span<const ObservationTriplet> triplets);
EpisodeEncoding encode_triplets(ad::Tape& tape, const EncoderState& state,
                                std::span<const ObservationTriplet> triplets);
ad::Var embed_static(ad::Tape& tape, const EncoderState& state, const Vector& static_vector);
/// [e_d ; e_T] (or e_T alone when static_in_representation is off).
ad::Var represent(ad::Tape& tape, const EncoderState& state, const Vector& static_vector,
                  std::span<const ObservationTriplet> triplets);

// ---- value-level API ----
RowVector embed_triplet(const ObservationTriplet& triplet, const EncoderState& state);

struct EncodedEpisode {
  RowVector pooled;
  RowVector attention;
};
EncodedEpisode encode_episode(const EpisodeRecord& episode, const EncoderState& state);
RowVector embed_static(const Vector& static_vector, const EncoderState& state);
RowVector represent(const EpisodeRecord& episode, const EncoderState& state);
/// One representation row per episode.
Matrix represent_all(const CohortDataset& cohort, const EncoderState& state);

}  // namespace slac
