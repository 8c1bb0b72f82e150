#include "resa/model.hpp"

#include <algorithm>

#include "resa/training.hpp"

namespace resa {

std::vector<EncodedExample> encode_examples(const std::vector<PairExample>& examples,
                                            Vocabulary& vocab, std::mt19937_64& oov_rng) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const PairExample& ex : examples) {
    EncodedExample e;
    for (const auto& t : ex.tokens_a) e.a.push_back(vocab.lookup_or_add(t, oov_rng));
    for (const auto& t : ex.tokens_b) e.b.push_back(vocab.lookup_or_add(t, oov_rng));
    e.label = ex.label;
    e.rating = ex.rating;
    e.planted = ex.planted;
    out.push_back(std::move(e));
  }
  return out;
}

std::size_t feature_width(const ModelConfig& config) {
  const std::size_t d = config.resa.hidden;
  switch (config.task) {
    case TaskKind::kPairClassify: return 4 * d;
    case TaskKind::kPairRegress: return 2 * d;
    case TaskKind::kSingle: break;
  }
  return d;
}

ResanModel::ResanModel(ModelConfig config, const Vocabulary& vocab, std::uint64_t seed)
    : config_(std::move(config)) {
  const std::size_t d = config_.resa.hidden;
  if (vocab.dim() != d)
    throw std::invalid_argument("embedding width " + std::to_string(vocab.dim()) +
                                " differs from model width " + std::to_string(d));
  if (config_.classes < 2) throw std::invalid_argument("model needs at least 2 classes");
  if (config_.encoder == EncoderKind::kResan) resan_ = ResanParams::create(params_, "resan", config_.resa);
  head_ = HeadParams::create(params_, "head", feature_width(config_),
                             config_.head_hidden == 0 ? d : config_.head_hidden, config_.classes);
  params_.initialize(seed);

  trainable_rows_ = vocab.trainable_rows();
  trainable_table_ = std::any_of(trainable_rows_.begin(), trainable_rows_.end(),
                                 [](unsigned char t) { return t != 0; });
  Parameter table(kEmbeddingName, {vocab.size(), d});
  table.value = vocab.table();
  if (trainable_table_) {
    Parameter& p = params_.add(kEmbeddingName, table.shape);
    p.value = table.value;
  } else {
    fixed_table_ = std::move(table);
  }
}

std::vector<Parameter*> ResanModel::sampler_params() { return params_.with_prefix(kSamplerPrefix); }

std::vector<Parameter*> ResanModel::supervised_params() {
  return params_.without_prefix(kSamplerPrefix);
}

std::vector<Parameter*> ResanModel::decayed_params() {
  std::vector<Parameter*> out;
  for (Parameter* p : supervised_params())
    if (p->name != kEmbeddingName) out.push_back(p);
  return out;
}

void ResanModel::mask_embedding_grads() {
  if (!trainable_table_) return;
  Parameter& table = params_.at(kEmbeddingName);
  const std::size_t d = table.shape.cols;
  for (std::size_t r = 0; r < trainable_rows_.size(); ++r)
    if (!trainable_rows_[r]) std::fill_n(table.grad.begin() + r * d, d, Scalar(0));
}

Tensor ResanModel::embed(Graph& g, std::span<const std::size_t> tokens) {
  if (tokens.empty()) throw std::invalid_argument("cannot encode an empty sentence");
  if (trainable_table_) return gather_rows(g, params_.at(kEmbeddingName), tokens);
  const std::size_t d = fixed_table_.shape.cols;
  std::vector<Scalar> v;
  v.reserve(tokens.size() * d);
  for (std::size_t t : tokens) {
    if (t >= fixed_table_.shape.rows) throw std::out_of_range("token id " + std::to_string(t));
    v.insert(v.end(), fixed_table_.value.begin() + t * d, fixed_table_.value.begin() + (t + 1) * d);
  }
  return g.constant({tokens.size(), d}, std::move(v));
}

namespace {

Tensor apply_dropout(const Tensor& t, const ForwardOptions& options, std::uint64_t key) {
  if (!options.training || options.keep_prob >= 1) return t;
  const RngStream& base = options.dropout_stream ? *options.dropout_stream : options.stream;
  auto mask = dropout_mask(t.size(), options.keep_prob,
                           base.derive(SamplerRole::kDropout).derive(key), true);
  return mul(t, t.graph().constant(t.shape(), std::move(mask)));
}

}  // namespace

EncodeOutput ResanModel::encode(Graph& g, std::span<const std::size_t> tokens,
                                const ForwardOptions& options, std::size_t sentence) {
  Tensor x = apply_dropout(embed(g, tokens), options, sentence);
  if (!resan_) {
    EncodeOutput out;
    const std::vector<unsigned char> all(tokens.size(), 1);
    out.encoding = mean_pool(x, all);
    return out;
  }
  ResaOptions ro;
  ro.mode = options.mode;
  ro.stream = options.stream.derive(sentence);
  ro.keep_attention = options.keep_attention;
  ro.need_log_prob = options.need_log_prob;
  if (sentence < options.fixed.size()) ro.fixed = options.fixed[sentence];
  return resan_encode(x, *resan_, config_.resa, ro);
}

ModelOutput ResanModel::forward(Graph& g, const EncodedExample& ex, const ForwardOptions& options) {
  const bool pair = config_.task != TaskKind::kSingle;
  if (pair && ex.b.empty()) throw std::invalid_argument("pair task example lacks a second sentence");
  ModelOutput out;
  std::vector<Tensor> encodings;
  for (std::size_t s = 0; s < (pair ? 2u : 1u); ++s) {
    const auto& tokens = s == 0 ? ex.a : ex.b;
    EncodeOutput e = encode(g, tokens, options, s);
    encodings.push_back(e.encoding);
    out.tokens += tokens.size();
    if (resan_) {
      if (options.need_log_prob)
        out.log_prob = out.log_prob.valid() ? add(out.log_prob, e.sample.log_prob) : e.sample.log_prob;
      out.samples.push_back(std::move(e.sample));
      out.traces.push_back(std::move(e.trace));
    }
  }
  Tensor features = encodings[0];
  if (config_.task == TaskKind::kPairClassify) features = pair_features_classify(encodings[0], encodings[1]);
  if (config_.task == TaskKind::kPairRegress) features = pair_features_regress(encodings[0], encodings[1]);
  features = apply_dropout(features, options, 2);
  out.logits = head_logits(features, head_);
  return out;
}

}  // namespace resa
