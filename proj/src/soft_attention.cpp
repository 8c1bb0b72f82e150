#include "resa/soft_attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace resa {

std::size_t AttentionMask::open_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [](Scalar v) { return !is_masked(v); }));
}

AttentionMask AttentionMask::operator+(const AttentionMask& other) const {
  if (other.n_ != n_)
    throw ShapeError("mask sizes differ: " + std::to_string(n_) + " and " + std::to_string(other.n_));
  AttentionMask out(n_);
  for (std::size_t k = 0; k < entries_.size(); ++k)
    out.entries_[k] = is_masked(entries_[k]) || is_masked(other.entries_[k]) ? kNegInf : Scalar(0);
  return out;
}

AttentionMask AttentionMask::transposed() const {
  AttentionMask out(n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) out.entries_[j * n_ + i] = entries_[i * n_ + j];
  return out;
}

AttentionMask positional_mask(std::size_t n, Direction direction) {
  AttentionMask m(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m.set_open(i, j, direction == Direction::kForward ? i < j : i > j);
  return m;
}

AttentionMask diagonal_mask(std::size_t n) {
  AttentionMask m(n, 0);
  for (std::size_t i = 0; i < n; ++i) m.set_open(i, i, false);
  return m;
}

MaskedAttentionParams MaskedAttentionParams::create(ParameterSet& set, const std::string& prefix,
                                                    std::size_t d, AttentionMode mode, Scalar c) {
  if (c <= 0) throw std::invalid_argument("attention scale c must be positive");
  const std::size_t k = mode == AttentionMode::kMultiDim ? d : 1;
  MaskedAttentionParams p;
  p.w_dep = &set.add(prefix + ".W1", {k, d});
  p.w_head = &set.add(prefix + ".W2", {k, d});
  p.bias = &set.add(prefix + ".b1", {1, k}, true);
  p.c = c;
  return p;
}

AttentionMode MaskedAttentionParams::mode() const {
  return w_dep->shape.rows == 1 && w_dep->shape.cols != 1 ? AttentionMode::kVanilla
                                                           : AttentionMode::kMultiDim;
}

Source2TokenParams Source2TokenParams::create(ParameterSet& set, const std::string& prefix,
                                              std::size_t d, AttentionMode mode, Scalar c) {
  if (c <= 0) throw std::invalid_argument("attention scale c must be positive");
  const std::size_t k = mode == AttentionMode::kMultiDim ? d : 1;
  Source2TokenParams p;
  p.weight = &set.add(prefix + ".W1", {k, d});
  p.bias = &set.add(prefix + ".b1", {1, k}, true);
  p.c = c;
  return p;
}

FusionGateParams FusionGateParams::create(ParameterSet& set, const std::string& prefix,
                                          std::size_t d) {
  FusionGateParams p;
  p.weight = &set.add(prefix + ".Wf", {d, 2 * d});
  p.bias = &set.add(prefix + ".bf", {1, d}, true);
  return p;
}

namespace {

Tensor bounded(const Tensor& pre, Scalar c) { return scale(tanh(scale(pre, Scalar(1) / c)), c); }

// Softmax over the rows of an n x k score block, per column, then the
// expectation of x under it. Returns (1 x d context, n x k probabilities).
std::pair<Tensor, Tensor> attend(const Tensor& scores, std::span<const Scalar> column_mask,
                                 const Tensor& x) {
  Tensor probs = transpose(masked_softmax_rows(transpose(scores), column_mask));
  return {sum_rows(mul(probs, x)), probs};
}

void append_feature_mean(const Tensor& probs, std::vector<Scalar>& out, std::size_t row_width) {
  const Shape s = probs.shape();
  auto v = probs.values();
  const std::size_t start = out.size();
  out.resize(start + row_width, 0);
  for (std::size_t i = 0; i < s.rows; ++i) {
    Scalar acc = 0;
    for (std::size_t f = 0; f < s.cols; ++f) acc += v[i * s.cols + f];
    out[start + i] = acc / Scalar(s.cols);
  }
}

}  // namespace

Tensor masked_compatibility(const Tensor& x_dep, const Tensor& x_head,
                            const MaskedAttentionParams& params, Scalar mask_entry) {
  Graph& g = x_dep.graph();
  Tensor pre = add(add(matmul_nt(x_dep, g.param(*params.w_dep)),
                       matmul_nt(x_head, g.param(*params.w_head))),
                   g.param(*params.bias));
  return add(bounded(pre, params.c), g.scalar(mask_entry));
}

Tensor vanilla_attention(const Tensor& x, const Tensor& query, const MaskedAttentionParams& params) {
  if (x.rows() == 0) throw std::invalid_argument("vanilla_attention: empty sequence");
  Graph& g = x.graph();
  Tensor dep = matmul_nt(x, g.param(*params.w_dep));
  Tensor q = add(matmul_nt(query, g.param(*params.w_head)), g.param(*params.bias));
  const std::vector<Scalar> open(x.rows(), 0);
  return attend(bounded(add(dep, q), params.c), open, x).first;
}

AttentionResult masked_self_attention(const Tensor& x, const AttentionMask& mask,
                                      const MaskedAttentionParams& params,
                                      std::size_t valid_length, bool keep_attention) {
  const std::size_t n = x.rows();
  if (mask.size() != n)
    throw ShapeError("masked_self_attention: mask is " + std::to_string(mask.size()) + "x" +
                     std::to_string(mask.size()) + " for a sequence of " + std::to_string(n));
  const std::size_t len = std::min(valid_length, n);
  if (len == 0) throw std::invalid_argument("masked_self_attention: empty sequence");
  Graph& g = x.graph();
  Tensor xs = len == n ? x : slice_rows(x, 0, len);
  Tensor dep = matmul_nt(xs, g.param(*params.w_dep));
  Tensor head = add(matmul_nt(xs, g.param(*params.w_head)), g.param(*params.bias));

  AttentionResult result;
  std::vector<Tensor> rows;
  std::vector<Scalar> column(len);
  for (std::size_t j = 0; j < len; ++j) {
    for (std::size_t i = 0; i < len; ++i) column[i] = mask.at(i, j);
    auto [ctx, probs] = attend(bounded(add(dep, slice_rows(head, j, 1)), params.c), column, xs);
    rows.push_back(ctx);
    if (keep_attention) append_feature_mean(probs, result.attention, n);
  }
  if (len < n) {
    rows.push_back(g.constant({n - len, x.cols()}, Scalar(0)));
    if (keep_attention) result.attention.resize(n * n, 0);
  }
  result.context = concat_rows(rows);
  return result;
}

GateResult fusion_gate(const Tensor& x, const Tensor& s, const FusionGateParams& params) {
  if (x.shape() != s.shape())
    throw ShapeError("fusion_gate: x is " + x.shape().str() + " but s is " + s.shape().str());
  Graph& g = x.graph();
  Tensor f = sigmoid(add(matmul_nt(concat_cols(x, s), g.param(*params.weight)), g.param(*params.bias)));
  return {add(s, mul(f, sub(x, s))), f};
}

Tensor directional_self_attention(const Tensor& x, Direction direction,
                                  const MaskedAttentionParams& attention,
                                  const FusionGateParams& gate) {
  Tensor s = masked_self_attention(x, positional_mask(x.rows(), direction), attention).context;
  return fusion_gate(x, s, gate).output;
}

Tensor source2token(const Tensor& x, const Source2TokenParams& params, std::size_t valid_length) {
  const std::size_t n = x.rows();
  if (n == 0 || valid_length == 0) throw std::invalid_argument("source2token: empty sequence");
  Graph& g = x.graph();
  Tensor scores = bounded(add(matmul_nt(x, g.param(*params.weight)), g.param(*params.bias)), params.c);
  std::vector<Scalar> open(n, 0);
  for (std::size_t i = std::min(valid_length, n); i < n; ++i) open[i] = kNegInf;
  return attend(scores, open, x).first;
}

SelectionPlan SelectionPlan::from_mask(const AttentionMask& mask) {
  SelectionPlan plan;
  plan.n = mask.size();
  plan.dependents_of_head.resize(plan.n);
  for (std::size_t j = 0; j < plan.n; ++j)
    for (std::size_t i = 0; i < plan.n; ++i)
      if (mask.open(i, j)) plan.dependents_of_head[j].push_back(static_cast<std::uint32_t>(i));
  return plan;
}

std::size_t SelectionPlan::pair_count() const {
  std::size_t total = 0;
  for (const auto& deps : dependents_of_head) total += deps.size();
  return total;
}

SparseAttentionResult sparse_masked_attention(const Tensor& x, const SelectionPlan& plan,
                                              const MaskedAttentionParams& params,
                                              bool keep_attention) {
  const std::size_t n = x.rows(), d = x.cols();
  if (plan.n != n || plan.dependents_of_head.size() != n)
    throw ShapeError("sparse_masked_attention: plan for " + std::to_string(plan.n) +
                     " tokens, sequence has " + std::to_string(n));
  if (n == 0) throw std::invalid_argument("sparse_masked_attention: empty sequence");
  Graph& g = x.graph();
  Tensor dep = matmul_nt(x, g.param(*params.w_dep));
  Tensor head = add(matmul_nt(x, g.param(*params.w_head)), g.param(*params.bias));
  const std::size_t k = dep.cols();
  const Scalar c = params.c;

  // Per head j, block of |deps_j| x k holding tanh values then probabilities.
  std::vector<std::size_t> offset(n + 1, 0);
  for (std::size_t j = 0; j < n; ++j) offset[j + 1] = offset[j] + plan.dependents_of_head[j].size() * k;
  std::vector<Scalar> th(offset[n]), prob(offset[n]);
  std::vector<Scalar> out(n * d, 0);

  auto va = dep.values();
  auto vb = head.values();
  auto vx = x.values();
  std::vector<Scalar> mean(d, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < d; ++f) mean[f] += vx[i * d + f] / Scalar(n);

  SparseAttentionResult result;
  if (keep_attention) result.attention.assign(n * n, 0);
  std::vector<Scalar> mx(k), z(k);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& deps = plan.dependents_of_head[j];
    Scalar* sj = &out[j * d];
    if (deps.empty()) {
      std::copy(mean.begin(), mean.end(), sj);
      if (keep_attention) std::fill_n(&result.attention[j * n], n, Scalar(1) / Scalar(n));
      continue;
    }
    Scalar* t = &th[offset[j]];
    Scalar* p = &prob[offset[j]];
    std::fill(mx.begin(), mx.end(), -std::numeric_limits<Scalar>::infinity());
    for (std::size_t a = 0; a < deps.size(); ++a) {
      const std::size_t i = deps[a];
      for (std::size_t f = 0; f < k; ++f) {
        t[a * k + f] = std::tanh((va[i * k + f] + vb[j * k + f]) / c);
        mx[f] = std::max(mx[f], c * t[a * k + f]);
      }
    }
    std::fill(z.begin(), z.end(), Scalar(0));
    for (std::size_t a = 0; a < deps.size(); ++a)
      for (std::size_t f = 0; f < k; ++f) {
        p[a * k + f] = std::exp(c * t[a * k + f] - mx[f]);
        z[f] += p[a * k + f];
      }
    for (std::size_t a = 0; a < deps.size(); ++a) {
      const std::size_t i = deps[a];
      for (std::size_t f = 0; f < k; ++f) p[a * k + f] /= z[f];
      if (k == 1) {
        for (std::size_t f = 0; f < d; ++f) sj[f] += p[a] * vx[i * d + f];
      } else {
        for (std::size_t f = 0; f < d; ++f) sj[f] += p[a * k + f] * vx[i * d + f];
      }
      if (keep_attention) {
        Scalar acc = 0;
        for (std::size_t f = 0; f < k; ++f) acc += p[a * k + f];
        result.attention[j * n + i] = acc / Scalar(k);
      }
    }
    result.pair_evaluations += deps.size();
  }

  const std::size_t ia = dep.id(), ib = head.id(), ix = x.id();
  result.context = g.record(
      "sparse_masked_attention", {n, d}, std::move(out), {ia, ib, ix},
      [ia, ib, ix, n, d, k, plan, offset, th = std::move(th), prob = std::move(prob)](Graph& g, std::size_t self) {
        auto go = g.grad(self);
        auto vx = g.value(ix);
        auto ga = g.grad_buffer(ia);
        auto gb = g.grad_buffer(ib);
        auto gx = g.grad_buffer(ix);
        std::vector<Scalar> dp, dot(k);
        for (std::size_t j = 0; j < n; ++j) {
          const auto& deps = plan.dependents_of_head[j];
          const Scalar* gj = &go[j * d];
          if (deps.empty()) {
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t f = 0; f < d; ++f) gx[i * d + f] += gj[f] / Scalar(n);
            continue;
          }
          const Scalar* t = &th[offset[j]];
          const Scalar* p = &prob[offset[j]];
          dp.assign(deps.size() * k, 0);
          std::fill(dot.begin(), dot.end(), Scalar(0));
          for (std::size_t a = 0; a < deps.size(); ++a) {
            const std::size_t i = deps[a];
            if (k == 1) {
              Scalar acc = 0;
              for (std::size_t f = 0; f < d; ++f) {
                acc += gj[f] * vx[i * d + f];
                gx[i * d + f] += p[a] * gj[f];
              }
              dp[a] = acc;
            } else {
              for (std::size_t f = 0; f < d; ++f) {
                dp[a * k + f] = gj[f] * vx[i * d + f];
                gx[i * d + f] += p[a * k + f] * gj[f];
              }
            }
            for (std::size_t f = 0; f < k; ++f) dot[f] += p[a * k + f] * dp[a * k + f];
          }
          for (std::size_t a = 0; a < deps.size(); ++a) {
            const std::size_t i = deps[a];
            for (std::size_t f = 0; f < k; ++f) {
              const Scalar tv = t[a * k + f];
              const Scalar du = p[a * k + f] * (dp[a * k + f] - dot[f]) * (Scalar(1) - tv * tv);
              ga[i * k + f] += du;
              gb[j * k + f] += du;
            }
          }
        }
      });
  return result;
}

}  // namespace resa
