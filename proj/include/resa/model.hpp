#pragma once

#include <optional>
#include <vector>

#include "resa/data.hpp"
#include "resa/encoder.hpp"

namespace resa {

enum class TaskKind { kSingle, kPairClassify, kPairRegress };

/// kMeanPool replaces the whole attention stack with a mean over tokens; it is
/// the bag-of-words ablation.
enum class EncoderKind { kResan, kMeanPool };

struct ModelConfig {
  ResaConfig resa;
  EncoderKind encoder = EncoderKind::kResan;
  TaskKind task = TaskKind::kSingle;
  std::size_t classes = 2;
  std::size_t head_hidden = 0;  // 0 means d
};

/// Token ids plus supervision for one example.
struct EncodedExample {
  std::vector<std::size_t> a;
  std::vector<std::size_t> b;  // empty for kSingle
  std::size_t label = 0;
  double rating = 0;
  std::vector<std::size_t> planted;
};

std::vector<EncodedExample> encode_examples(const std::vector<PairExample>& examples,
                                            Vocabulary& vocab, std::mt19937_64& oov_rng);

struct ForwardOptions {
  SelectMode mode = SelectMode::kSample;
  RngStream stream;
  bool training = false;  // enables dropout
  Scalar keep_prob = 1;
  // Dropout draws come from here when set, otherwise from stream.
  std::optional<RngStream> dropout_stream;
  bool keep_attention = false;
  bool need_log_prob = false;
  // Per sentence, selections to use instead of sampling.
  std::vector<std::optional<std::pair<Selection, Selection>>> fixed;
};

struct ModelOutput {
  Tensor logits;                         // 1 x classes
  std::vector<SelectionSample> samples;  // one per sentence (ReSAN only)
  std::vector<ResaTrace> traces;
  Tensor log_prob;  // sum over sentences, set when need_log_prob
  std::size_t tokens = 0;
};

/// Sentence-encoding classifier. Parameter names starting with
/// kSamplerPrefix form the sampler set; everything else is supervised.
class ResanModel {
 public:
  static constexpr const char* kSamplerPrefix = "resan.rss_";
  static constexpr const char* kEmbeddingName = "embed.table";

  ResanModel(ModelConfig config, const Vocabulary& vocab, std::uint64_t seed);

  ResanModel(const ResanModel&) = delete;
  ResanModel& operator=(const ResanModel&) = delete;

  ModelOutput forward(Graph& g, const EncodedExample& ex, const ForwardOptions& options);

  /// Sentence encoding only (1 x d).
  EncodeOutput encode(Graph& g, std::span<const std::size_t> tokens, const ForwardOptions& options,
                      std::size_t sentence = 0);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const std::optional<ResanParams>& resan() const { return resan_; }

  std::vector<Parameter*> sampler_params();
  std::vector<Parameter*> supervised_params();
  /// Supervised arrays subject to weight decay (embeddings excluded).
  std::vector<Parameter*> decayed_params();

  /// Zeroes gradient rows of embedding entries that are not trainable.
  void mask_embedding_grads();
  std::size_t embedding_dim() const { return config_.resa.hidden; }

 private:
  Tensor embed(Graph& g, std::span<const std::size_t> tokens);

  ModelConfig config_;
  ParameterSet params_;
  std::optional<ResanParams> resan_;
  HeadParams head_;
  Parameter fixed_table_;  // used when no embedding row is trainable
  std::vector<unsigned char> trainable_rows_;
  bool trainable_table_ = false;
};

std::size_t feature_width(const ModelConfig& config);

}  // namespace resa
