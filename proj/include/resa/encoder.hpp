#pragma once

#include <optional>
#include <string>
#include <vector>

#include "resa/hard_attention.hpp"
#include "resa/soft_attention.hpp"

namespace resa {

enum class Variant { kFull, kNoUnselectedHeads, kSingleRss };

/// Positional constraint added on top of the selection mask.
enum class BaseMask { kDiagonal, kForward, kBackward };

struct ResaConfig {
  std::size_t hidden = 16;      // d, also the token embedding width
  std::size_t rss_hidden = 0;   // dh; 0 means d
  AttentionMode attention = AttentionMode::kMultiDim;
  Variant variant = Variant::kFull;
  SelectMode eval_select = SelectMode::kThreshold;
  BaseMask base_mask = BaseMask::kDiagonal;
  Activation rss_activation = Activation::kTanh;
  Scalar c = 5.0;

  std::size_t sampler_hidden() const { return rss_hidden == 0 ? hidden : rss_hidden; }
};

/// Parameters of one ReSA block plus the source2token compressor.
struct ResanParams {
  MaskedAttentionParams attention;
  FusionGateParams gate;
  RssParams rss_head;
  RssParams rss_dep;  // same arrays as rss_head for Variant::kSingleRss
  Source2TokenParams pooling;

  /// Sampler arrays live under "<prefix>.rss_*"; everything else is supervised.
  static ResanParams create(ParameterSet& set, const std::string& prefix, const ResaConfig& config);
};

/// Mask entry (i, j) is open iff z_dep[i] = z_head[j] = 1 and i != j.
AttentionMask build_rss_mask(std::span<const unsigned char> z_head,
                             std::span<const unsigned char> z_dep);

AttentionMask base_mask(std::size_t n, BaseMask kind);

struct SelectionSample {
  Selection z_head;
  Selection z_dep;
  std::vector<Scalar> p_head;
  std::vector<Scalar> p_dep;
  Scalar joint_log_prob = 0;
  Tensor log_prob;  // differentiable in the sampler parameters, if requested
};

/// Per-sentence record exported for inspection.
struct ResaTrace {
  Selection z_head;
  Selection z_dep;
  std::vector<Scalar> p_head;
  std::vector<Scalar> p_dep;
  std::vector<Scalar> attention;  // n x n, row j = P^j averaged over features
  std::vector<Scalar> gate_mean;  // n, gate F averaged over features
  std::size_t pair_evaluations = 0;
};

struct ResaOptions {
  SelectMode mode = SelectMode::kSample;
  RngStream stream;
  bool keep_attention = false;
  bool need_log_prob = true;
  // When set, these selections are used instead of sampling.
  std::optional<std::pair<Selection, Selection>> fixed;  // (head, dep)
};

struct ResaOutput {
  Tensor u;
  SelectionSample sample;
  ResaTrace trace;
};

/// Sparse production path: samples heads and dependents, evaluates
/// compatibilities only for open pairs and gates the context into x.
/// The samplers read a detached copy of x, so the log-probability carries
/// gradient only into the sampler arrays.
ResaOutput resa_forward(const Tensor& x, const ResanParams& params, const ResaConfig& config,
                        const ResaOptions& options);

/// Materializes the full n x n masked computation with generic primitives for
/// the given selections. Test oracle for resa_forward.
Tensor resa_dense_reference(const Tensor& x, const ResanParams& params, const ResaConfig& config,
                            std::span<const unsigned char> z_head,
                            std::span<const unsigned char> z_dep);

struct EncodeOutput {
  Tensor encoding;  // 1 x d
  SelectionSample sample;
  ResaTrace trace;
};

/// ReSA followed by source2token compression.
EncodeOutput resan_encode(const Tensor& x, const ResanParams& params, const ResaConfig& config,
                          const ResaOptions& options);

/// [a; b; a - b; a * b]
Tensor pair_features_classify(const Tensor& premise, const Tensor& hypothesis);
/// [a * b; |a - b|]
Tensor pair_features_regress(const Tensor& a, const Tensor& b);

/// One tanh hidden layer followed by a linear map to class logits.
struct HeadParams {
  Parameter* w_hidden = nullptr;
  Parameter* b_hidden = nullptr;
  Parameter* w_out = nullptr;
  Parameter* b_out = nullptr;

  static HeadParams create(ParameterSet& set, const std::string& prefix, std::size_t in,
                           std::size_t hidden, std::size_t classes);
  std::size_t classes() const { return w_out->shape.rows; }
};

Tensor head_logits(const Tensor& features, const HeadParams& params);

struct RatingOutput {
  Tensor distribution;  // 1 x K
  Scalar rating = 0;    // in [1, K]
};

RatingOutput rating_head(const Tensor& features, const HeadParams& params);

/// Sum_k k p_k over classes 1..K.
Scalar expected_rating(std::span<const Scalar> distribution);
/// Two-adjacent-class sparse distribution whose expectation is `rating`.
std::vector<Scalar> rating_target(Scalar rating, std::size_t classes);

}  // namespace resa
