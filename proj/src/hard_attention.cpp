#include "resa/hard_attention.hpp"

#include <algorithm>
#include <cmath>

namespace resa {

RssParams RssParams::create(ParameterSet& set, const std::string& prefix, std::size_t d,
                            std::size_t hidden, Activation activation) {
  RssParams p;
  p.w_r = &set.add(prefix + ".WR", {hidden, 3 * d});
  p.b_r = &set.add(prefix + ".bR", {1, hidden}, true);
  p.w = &set.add(prefix + ".w", {1, hidden});
  p.b = &set.add(prefix + ".b", {1, 1}, true);
  p.activation = activation;
  return p;
}

namespace {

Tensor activate(const Tensor& t, Activation a) { return a == Activation::kTanh ? tanh(t) : relu(t); }

}  // namespace

Tensor rss_features(const Tensor& x, std::span<const unsigned char> length_mask) {
  const std::size_t n = x.rows();
  if (n == 0) throw std::invalid_argument("rss_features: empty sequence");
  std::vector<unsigned char> all;
  if (length_mask.empty()) {
    all.assign(n, 1);
    length_mask = all;
  }
  Tensor mean = mean_pool(x, length_mask);
  return concat_cols(concat_cols(x, broadcast_rows(mean, n)), mul(x, mean));
}

Tensor rss_probabilities(const Tensor& h, const RssParams& params) {
  if (h.cols() != params.input_width())
    throw ShapeError("rss_probabilities: features " + h.shape().str() + " for a sampler expecting width " +
                     std::to_string(params.input_width()));
  Graph& g = h.graph();
  Tensor hidden = activate(add(matmul_nt(h, g.param(*params.w_r)), g.param(*params.b_r)), params.activation);
  return sigmoid(add(matmul_nt(hidden, g.param(*params.w)), g.param(*params.b)));
}

Selection rss_sample(std::span<const Scalar> p, const RngStream& stream, SelectMode mode) {
  Selection z(p.size(), 1);
  if (mode == SelectMode::kForceAll) return z;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mode == SelectMode::kThreshold)
      z[i] = p[i] >= Scalar(0.5);
    else
      z[i] = stream.uniform(i) < static_cast<double>(p[i]);
  }
  return z;
}

Tensor rss_log_prob(std::span<const unsigned char> z, const Tensor& p) {
  if (z.size() != p.size())
    throw ShapeError("rss_log_prob: " + std::to_string(z.size()) + " selections for " +
                     p.shape().str() + " probabilities");
  Graph& g = p.graph();
  std::vector<Scalar> on(z.size()), off(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    on[i] = z[i] ? 1 : 0;
    off[i] = 1 - on[i];
  }
  Tensor pc = clamp(p, kProbClamp, Scalar(1) - kProbClamp);
  Tensor one = g.scalar(1);
  Tensor lp = add(mul(g.constant(p.shape(), std::move(on)), log(pc)),
                  mul(g.constant(p.shape(), std::move(off)), log(sub(one, pc))));
  return sum(lp);
}

Scalar rss_log_prob_value(std::span<const unsigned char> z, std::span<const Scalar> p) {
  if (z.size() != p.size()) throw ShapeError("rss_log_prob_value: length mismatch");
  Scalar total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const Scalar pc = std::clamp(p[i], kProbClamp, Scalar(1) - kProbClamp);
    total += z[i] ? std::log(pc) : std::log(Scalar(1) - pc);
  }
  return total;
}

IterativeSamplerParams IterativeSamplerParams::create(ParameterSet& set, const std::string& prefix,
                                                      std::size_t d, std::size_t state,
                                                      std::size_t hidden, Activation activation) {
  IterativeSamplerParams p;
  p.w_p = &set.add(prefix + ".Wp", {hidden, state + d});
  p.b_p = &set.add(prefix + ".bp", {1, hidden}, true);
  p.w = &set.add(prefix + ".w", {1, hidden});
  p.b = &set.add(prefix + ".b", {1, 1}, true);
  p.w_hh = &set.add(prefix + ".Whh", {state, state});
  p.w_xh = &set.add(prefix + ".Wxh", {state, d + 1});
  p.b_h = &set.add(prefix + ".bh", {1, state}, true);
  p.activation = activation;
  return p;
}

IterativeSample iterative_sample(const Tensor& x, const IterativeSamplerParams& params,
                                 const RngStream& stream, SelectMode mode) {
  const std::size_t n = x.rows();
  if (n == 0) throw std::invalid_argument("iterative_sample: empty sequence");
  Graph& g = x.graph();
  Tensor w_p = g.param(*params.w_p), b_p = g.param(*params.b_p);
  Tensor w = g.param(*params.w), b = g.param(*params.b);
  Tensor w_hh = g.param(*params.w_hh), w_xh = g.param(*params.w_xh), b_h = g.param(*params.b_h);
  Tensor one = g.scalar(1);

  IterativeSample out;
  Tensor state = g.constant({1, params.state_width()}, Scalar(0));
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor xi = slice_rows(x, i, 1);
    Tensor hidden = activate(add(matmul_nt(concat_cols(state, xi), w_p), b_p), params.activation);
    Tensor p = sigmoid(add(matmul_nt(hidden, w), b));
    const Scalar pv = p.item();
    unsigned char zi = 1;
    if (mode == SelectMode::kThreshold)
      zi = pv >= Scalar(0.5);
    else if (mode == SelectMode::kSample)
      zi = stream.uniform(i) < static_cast<double>(pv);
    out.z.push_back(zi);
    out.p.push_back(pv);
    Tensor pc = clamp(p, kProbClamp, Scalar(1) - kProbClamp);
    terms.push_back(zi ? log(pc) : log(sub(one, pc)));
    Tensor xz = concat_cols(xi, g.scalar(zi ? 1 : 0));
    state = tanh(add(add(matmul_nt(state, w_hh), matmul_nt(xz, w_xh)), b_h));
  }
  out.log_prob = sum(concat_rows(terms));
  return out;
}

std::size_t parameter_count(const RssParams& p) {
  return p.w_r->value.size() + p.b_r->value.size() + p.w->value.size() + p.b->value.size();
}

std::size_t parameter_count(const IterativeSamplerParams& p) {
  return p.w_p->value.size() + p.b_p->value.size() + p.w->value.size() + p.b->value.size() +
         p.w_hh->value.size() + p.w_xh->value.size() + p.b_h->value.size();
}

}  // namespace resa
