#include "resa/encoder.hpp"

#include <cmath>

namespace resa {

ResanParams ResanParams::create(ParameterSet& set, const std::string& prefix,
                                const ResaConfig& config) {
  const std::size_t d = config.hidden;
  ResanParams p;
  p.attention = MaskedAttentionParams::create(set, prefix + ".attn", d, config.attention, config.c);
  p.gate = FusionGateParams::create(set, prefix + ".gate", d);
  if (config.variant == Variant::kSingleRss) {
    p.rss_head = RssParams::create(set, prefix + ".rss_shared", d, config.sampler_hidden(),
                                   config.rss_activation);
    p.rss_dep = p.rss_head;
  } else {
    p.rss_head = RssParams::create(set, prefix + ".rss_head", d, config.sampler_hidden(),
                                   config.rss_activation);
    p.rss_dep = RssParams::create(set, prefix + ".rss_dep", d, config.sampler_hidden(),
                                  config.rss_activation);
  }
  p.pooling = Source2TokenParams::create(set, prefix + ".s2t", d, config.attention, config.c);
  return p;
}

AttentionMask build_rss_mask(std::span<const unsigned char> z_head,
                             std::span<const unsigned char> z_dep) {
  if (z_head.size() != z_dep.size())
    throw ShapeError("build_rss_mask: " + std::to_string(z_head.size()) + " head selections but " +
                     std::to_string(z_dep.size()) + " dependent selections");
  const std::size_t n = z_head.size();
  AttentionMask m(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m.set_open(i, j, z_dep[i] && z_head[j] && i != j);
  return m;
}

AttentionMask base_mask(std::size_t n, BaseMask kind) {
  switch (kind) {
    case BaseMask::kForward: return positional_mask(n, Direction::kForward);
    case BaseMask::kBackward: return positional_mask(n, Direction::kBackward);
    case BaseMask::kDiagonal: break;
  }
  return diagonal_mask(n);
}

namespace {

bool base_open(BaseMask kind, std::size_t i, std::size_t j) {
  switch (kind) {
    case BaseMask::kForward: return i < j;
    case BaseMask::kBackward: return i > j;
    case BaseMask::kDiagonal: break;
  }
  return i != j;
}

std::vector<Scalar> column_values(const Tensor& t) {
  auto v = t.values();
  return {v.begin(), v.end()};
}

std::vector<Scalar> row_means(const Tensor& t) {
  const Shape s = t.shape();
  auto v = t.values();
  std::vector<Scalar> out(s.rows, 0);
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t c = 0; c < s.cols; ++c) out[r] += v[r * s.cols + c];
    out[r] /= Scalar(s.cols);
  }
  return out;
}

}  // namespace

ResaOutput resa_forward(const Tensor& x, const ResanParams& params, const ResaConfig& config,
                        const ResaOptions& options) {
  const std::size_t n = x.rows();
  if (n == 0) throw std::invalid_argument("resa_forward: empty sequence");
  Graph& g = x.graph();
  const bool single = config.variant == Variant::kSingleRss;

  Tensor detached = g.constant(x.shape(), std::vector<Scalar>(x.values().begin(), x.values().end()));
  Tensor h = rss_features(detached);
  Tensor p_head = rss_probabilities(h, params.rss_head);
  Tensor p_dep = single ? p_head : rss_probabilities(h, params.rss_dep);

  ResaOutput out;
  SelectionSample& sample = out.sample;
  sample.p_head = column_values(p_head);
  sample.p_dep = column_values(p_dep);
  if (options.fixed) {
    sample.z_head = options.fixed->first;
    sample.z_dep = options.fixed->second;
    if (sample.z_head.size() != n || sample.z_dep.size() != n)
      throw ShapeError("resa_forward: fixed selections do not match sequence length " + std::to_string(n));
    if (single && sample.z_head != sample.z_dep)
      throw std::invalid_argument("resa_forward: single-sampler variant needs identical selections");
  } else if (single) {
    sample.z_head = rss_sample(sample.p_head, options.stream.derive(SamplerRole::kShared), options.mode);
    sample.z_dep = sample.z_head;
  } else {
    sample.z_head = rss_sample(sample.p_head, options.stream.derive(SamplerRole::kHead), options.mode);
    sample.z_dep = rss_sample(sample.p_dep, options.stream.derive(SamplerRole::kDependent), options.mode);
  }

  sample.joint_log_prob = rss_log_prob_value(sample.z_head, sample.p_head);
  if (!single) sample.joint_log_prob += rss_log_prob_value(sample.z_dep, sample.p_dep);
  if (options.need_log_prob) {
    sample.log_prob = rss_log_prob(sample.z_head, p_head);
    if (!single) sample.log_prob = add(sample.log_prob, rss_log_prob(sample.z_dep, p_dep));
  }

  SelectionPlan plan;
  plan.n = n;
  plan.dependents_of_head.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (!sample.z_head[j]) continue;
    for (std::size_t i = 0; i < n; ++i)
      if (sample.z_dep[i] && base_open(config.base_mask, i, j))
        plan.dependents_of_head[j].push_back(static_cast<std::uint32_t>(i));
  }
  SparseAttentionResult attended = sparse_masked_attention(x, plan, params.attention, options.keep_attention);
  GateResult gated = fusion_gate(x, attended.context, params.gate);
  out.u = gated.output;

  ResaTrace& trace = out.trace;
  trace.z_head = sample.z_head;
  trace.z_dep = sample.z_dep;
  trace.p_head = sample.p_head;
  trace.p_dep = sample.p_dep;
  trace.attention = std::move(attended.attention);
  trace.gate_mean = row_means(gated.gate);
  trace.pair_evaluations = attended.pair_evaluations;
  return out;
}

Tensor resa_dense_reference(const Tensor& x, const ResanParams& params, const ResaConfig& config,
                            std::span<const unsigned char> z_head,
                            std::span<const unsigned char> z_dep) {
  const std::size_t n = x.rows();
  AttentionMask mask = build_rss_mask(z_head, z_dep) + base_mask(n, config.base_mask);
  Tensor s = masked_self_attention(x, mask, params.attention).context;
  return fusion_gate(x, s, params.gate).output;
}

EncodeOutput resan_encode(const Tensor& x, const ResanParams& params, const ResaConfig& config,
                          const ResaOptions& options) {
  ResaOutput r = resa_forward(x, params, config, options);
  Tensor pooled_input = r.u;
  if (config.variant == Variant::kNoUnselectedHeads) {
    std::vector<Tensor> rows;
    for (std::size_t j = 0; j < x.rows(); ++j)
      if (r.sample.z_head[j]) rows.push_back(slice_rows(r.u, j, 1));
    // With no selected head the whole sequence is pooled.
    if (!rows.empty() && rows.size() < x.rows()) pooled_input = concat_rows(rows);
  }
  EncodeOutput out;
  out.encoding = source2token(pooled_input, params.pooling);
  out.sample = std::move(r.sample);
  out.trace = std::move(r.trace);
  return out;
}

Tensor pair_features_classify(const Tensor& premise, const Tensor& hypothesis) {
  if (premise.shape() != hypothesis.shape())
    throw ShapeError("pair_features_classify: " + premise.shape().str() + " vs " +
                     hypothesis.shape().str());
  return concat_cols(concat_cols(premise, hypothesis),
                     concat_cols(sub(premise, hypothesis), mul(premise, hypothesis)));
}

Tensor pair_features_regress(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("pair_features_regress: " + a.shape().str() + " vs " + b.shape().str());
  return concat_cols(mul(a, b), abs(sub(a, b)));
}

HeadParams HeadParams::create(ParameterSet& set, const std::string& prefix, std::size_t in,
                              std::size_t hidden, std::size_t classes) {
  HeadParams p;
  p.w_hidden = &set.add(prefix + ".Wh", {hidden, in});
  p.b_hidden = &set.add(prefix + ".bh", {1, hidden}, true);
  p.w_out = &set.add(prefix + ".Wo", {classes, hidden});
  p.b_out = &set.add(prefix + ".bo", {1, classes}, true);
  return p;
}

Tensor head_logits(const Tensor& features, const HeadParams& params) {
  Graph& g = features.graph();
  Tensor hidden = tanh(add(matmul_nt(features, g.param(*params.w_hidden)), g.param(*params.b_hidden)));
  return add(matmul_nt(hidden, g.param(*params.w_out)), g.param(*params.b_out));
}

RatingOutput rating_head(const Tensor& features, const HeadParams& params) {
  if (params.classes() < 2) throw std::invalid_argument("rating_head: need K >= 2 classes");
  RatingOutput out;
  out.distribution = softmax_rows(head_logits(features, params));
  out.rating = expected_rating(out.distribution.values());
  return out;
}

Scalar expected_rating(std::span<const Scalar> distribution) {
  Scalar r = 0;
  for (std::size_t k = 0; k < distribution.size(); ++k) r += Scalar(k + 1) * distribution[k];
  return r;
}

std::vector<Scalar> rating_target(Scalar rating, std::size_t classes) {
  if (classes < 2) throw std::invalid_argument("rating_target: need K >= 2 classes");
  if (!(rating >= 1 && rating <= Scalar(classes)))
    throw std::out_of_range("rating_target: rating " + std::to_string(rating) + " outside [1, " +
                            std::to_string(classes) + "]");
  std::vector<Scalar> t(classes, 0);
  const auto lower = static_cast<std::size_t>(std::floor(rating));
  if (lower >= classes) {
    t[classes - 1] = 1;
    return t;
  }
  t[lower - 1] = Scalar(lower + 1) - rating;
  t[lower] = rating - Scalar(lower);
  return t;
}

}  // namespace resa
