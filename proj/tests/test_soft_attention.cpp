#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "resa/soft_attention.hpp"

using namespace resa;

namespace {

using Matrix = std::vector<std::vector<double>>;

struct Fixture {
  ParameterSet set;
  MaskedAttentionParams attn;
  FusionGateParams gate;
  Source2TokenParams s2t;

  Fixture(std::size_t d, AttentionMode mode, std::uint64_t seed) {
    attn = MaskedAttentionParams::create(set, "attn", d, mode);
    gate = FusionGateParams::create(set, "gate", d);
    s2t = Source2TokenParams::create(set, "s2t", d, mode);
    set.initialize(seed);
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<double> n01;
    for (Parameter* p : set.all())
      for (Scalar& v : p->value) v += static_cast<Scalar>(0.5 * n01(rng));
  }
};

std::vector<Scalar> random_values(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<Scalar> v(count);
  for (Scalar& x : v) x = static_cast<Scalar>(n01(rng));
  return v;
}

std::vector<double> affine(const Parameter& w, const double* x, std::size_t d) {
  std::vector<double> out(w.shape.rows, 0);
  for (std::size_t r = 0; r < w.shape.rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r] += w.value[r * d + c] * x[c];
  return out;
}

// Per-feature attention of every head j over dependents i, recomputed directly.
Matrix reference_attention(const std::vector<Scalar>& x, std::size_t n, std::size_t d,
                           const AttentionMask& mask, const MaskedAttentionParams& p) {
  const std::size_t k = p.w_dep->shape.rows;
  Matrix s(n, std::vector<double>(d, 0));
  std::vector<double> xd(x.begin(), x.end());
  for (std::size_t j = 0; j < n; ++j) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) any |= mask.open(i, j);
    for (std::size_t f = 0; f < d; ++f) {
      const std::size_t kf = k == 1 ? 0 : f;
      std::vector<double> w(n, 0);
      double mx = -1e300;
      for (std::size_t i = 0; i < n; ++i) {
        if (!mask.open(i, j)) continue;
        const auto a = affine(*p.w_dep, &xd[i * d], d);
        const auto b = affine(*p.w_head, &xd[j * d], d);
        w[i] = p.c * std::tanh((a[kf] + b[kf] + p.bias->value[kf]) / p.c);
        mx = std::max(mx, w[i]);
      }
      double z = 0;
      for (std::size_t i = 0; i < n; ++i) {
        w[i] = !any ? 1.0 / double(n) : mask.open(i, j) ? std::exp(w[i] - mx) : 0.0;
        z += w[i];
      }
      for (std::size_t i = 0; i < n; ++i) s[j][f] += w[i] / z * xd[i * d + f];
    }
  }
  return s;
}

AttentionMask random_mask(std::size_t n, std::mt19937_64& rng, double open_rate) {
  std::bernoulli_distribution coin(open_rate);
  AttentionMask m(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m.set_open(i, j, i != j && coin(rng));
  return m;
}

}  // namespace

TEST(Masks, ForwardExampleAndSymmetry) {
  const AttentionMask f = positional_mask(3, Direction::kForward);
  const bool expected[3][3] = {{false, true, true}, {false, false, true}, {false, false, false}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(f.open(i, j), expected[i][j]) << i << "," << j;
  EXPECT_EQ(f.at(0, 0), kNegInf);
  EXPECT_EQ(f.at(0, 1), 0);

  for (std::size_t n : {1, 2, 5}) {
    const AttentionMask fw = positional_mask(n, Direction::kForward);
    const AttentionMask bw = positional_mask(n, Direction::kBackward);
    EXPECT_EQ(fw.transposed().entries(), bw.entries());
  }
  const AttentionMask one = positional_mask(1, Direction::kBackward);
  EXPECT_EQ(one.open_count(), 0u);
}

TEST(Masks, DiagonalAndSum) {
  const AttentionMask d = diagonal_mask(4);
  EXPECT_EQ(d.open_count(), 12u);
  const AttentionMask both = d + positional_mask(4, Direction::kForward);
  EXPECT_EQ(both.entries(), positional_mask(4, Direction::kForward).entries());
  for (Scalar v : both.entries()) EXPECT_TRUE(v == 0 || v == kNegInf);
}

TEST(SoftAttention, VanillaZeroParamsGivesMean) {
  Fixture fx(3, AttentionMode::kVanilla, 1);
  for (Parameter* p : fx.set.all()) std::fill(p->value.begin(), p->value.end(), 0);
  Graph g;
  Tensor x = g.constant({2, 3}, {1, 2, 3, 5, 6, 7});
  Tensor q = g.constant({1, 3}, {9, 9, 9});
  Tensor out = vanilla_attention(x, q, fx.attn);
  EXPECT_NEAR(out.at(0, 0), 3, 1e-15);
  EXPECT_NEAR(out.at(0, 2), 5, 1e-15);
}

TEST(SoftAttention, VanillaMatchesRecomputation) {
  const std::size_t n = 3, d = 4;
  Fixture fx(d, AttentionMode::kVanilla, 2);
  const auto xv = random_values(n * d, 3);
  const auto qv = random_values(d, 4);
  Graph g;
  Tensor out = vanilla_attention(g.constant({n, d}, xv), g.constant({1, d}, qv), fx.attn);

  const auto b = affine(*fx.attn.w_head, std::vector<double>(qv.begin(), qv.end()).data(), d);
  std::vector<double> w(n);
  double z = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> xi(xv.begin() + i * d, xv.begin() + (i + 1) * d);
    const auto a = affine(*fx.attn.w_dep, xi.data(), d);
    w[i] = std::exp(fx.attn.c * std::tanh((a[0] + b[0] + fx.attn.bias->value[0]) / fx.attn.c));
    z += w[i];
  }
  for (std::size_t f = 0; f < d; ++f) {
    double expect = 0;
    for (std::size_t i = 0; i < n; ++i) expect += w[i] / z * xv[i * d + f];
    EXPECT_NEAR(out.at(0, f), expect, 1e-12);
  }
}

TEST(SoftAttention, CompatibilityExamples) {
  Fixture fx(3, AttentionMode::kMultiDim, 3);
  Graph g;
  Tensor xi = g.constant({1, 3}, {50, -40, 30});
  Tensor xj = g.constant({1, 3}, {-60, 70, 20});
  Tensor bounded = masked_compatibility(xi, xj, fx.attn, 0);
  for (Scalar v : bounded.values()) EXPECT_LE(std::abs(v), fx.attn.c);

  for (Parameter* p : fx.set.all()) std::fill(p->value.begin(), p->value.end(), 0);
  for (Scalar v : masked_compatibility(xi, xj, fx.attn, 0).values()) EXPECT_EQ(v, 0);
  for (Scalar v : masked_compatibility(xi, xj, fx.attn, kNegInf).values()) EXPECT_TRUE(is_masked(v));
}

TEST(SoftAttention, SingleDependentCopiesIt) {
  Fixture fx(2, AttentionMode::kMultiDim, 4);
  AttentionMask m(2);
  m.set_open(0, 1, true);
  Graph g;
  Tensor x = g.constant({2, 2}, {1.5, -2, 3, 4});
  const AttentionResult r = masked_self_attention(x, m, fx.attn);
  EXPECT_NEAR(r.context.at(1, 0), 1.5, 1e-15);
  EXPECT_NEAR(r.context.at(1, 1), -2, 1e-15);
  // head 0 has no open dependent: uniform mean of all tokens
  EXPECT_NEAR(r.context.at(0, 0), 2.25, 1e-15);
  EXPECT_NEAR(r.context.at(0, 1), 1, 1e-15);
}

TEST(SoftAttention, MaskedSelfAttentionMatchesRecomputation) {
  std::mt19937_64 rng(9);
  for (AttentionMode mode : {AttentionMode::kMultiDim, AttentionMode::kVanilla}) {
    for (int rep = 0; rep < 5; ++rep) {
      const std::size_t n = 4, d = 3;
      Fixture fx(d, mode, 10 + rep);
      const auto xv = random_values(n * d, 20 + rep);
      const AttentionMask m = random_mask(n, rng, 0.5);
      Graph g;
      const AttentionResult r = masked_self_attention(g.constant({n, d}, xv), m, fx.attn, SIZE_MAX, true);
      const Matrix ref = reference_attention(xv, n, d, m, fx.attn);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t f = 0; f < d; ++f) EXPECT_NEAR(r.context.at(j, f), ref[j][f], 1e-12);
      for (std::size_t j = 0; j < n; ++j) {
        double row = 0;
        for (std::size_t i = 0; i < n; ++i) {
          row += r.attention[j * n + i];
          if (m.open(i, j)) continue;
          bool any = false;
          for (std::size_t k = 0; k < n; ++k) any |= m.open(k, j);
          if (any) EXPECT_EQ(r.attention[j * n + i], 0);
        }
        EXPECT_NEAR(row, 1, 1e-12);
      }
    }
  }
}

TEST(SoftAttention, PaddingIsIgnored) {
  const std::size_t d = 3;
  Fixture fx(d, AttentionMode::kMultiDim, 5);
  auto xv = random_values(3 * d, 6);
  Graph g;
  const AttentionResult full = masked_self_attention(g.constant({2, d}, std::vector<Scalar>(xv.begin(), xv.begin() + 2 * d)),
                                                     diagonal_mask(2), fx.attn);
  const AttentionResult padded = masked_self_attention(g.constant({3, d}, xv), diagonal_mask(3), fx.attn, 2);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t f = 0; f < d; ++f) EXPECT_NEAR(padded.context.at(j, f), full.context.at(j, f), 1e-15);
  for (std::size_t f = 0; f < d; ++f) EXPECT_EQ(padded.context.at(2, f), 0);
}

TEST(SoftAttention, MaskSizeMismatchThrows) {
  Fixture fx(2, AttentionMode::kMultiDim, 6);
  Graph g;
  EXPECT_THROW(masked_self_attention(g.constant({3, 2}, 1.0), diagonal_mask(2), fx.attn), ShapeError);
}

TEST(FusionGate, Examples) {
  Fixture fx(2, AttentionMode::kMultiDim, 7);
  Graph g;
  Tensor x = g.constant({2, 2}, {1, 2, 3, 4});
  Tensor s = g.constant({2, 2}, {-1, 0, 5, 8});

  const GateResult same = fusion_gate(x, x, fx.gate);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(same.output.values()[k], x.values()[k], 1e-15);

  std::fill(fx.gate.weight->value.begin(), fx.gate.weight->value.end(), 0);
  std::fill(fx.gate.bias->value.begin(), fx.gate.bias->value.end(), 0);
  const GateResult neutral = fusion_gate(x, s, fx.gate);
  for (std::size_t k = 0; k < 4; ++k)
    EXPECT_NEAR(neutral.output.values()[k], 0.5 * x.values()[k] + 0.5 * s.values()[k], 1e-15);

  std::fill(fx.gate.bias->value.begin(), fx.gate.bias->value.end(), 50);
  const GateResult open = fusion_gate(x, s, fx.gate);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(open.output.values()[k], x.values()[k], 1e-12);
}

TEST(DirectionalAttention, SingleTokenFallsBackToItself) {
  Fixture fx(3, AttentionMode::kMultiDim, 8);
  std::fill(fx.gate.weight->value.begin(), fx.gate.weight->value.end(), 0);
  std::fill(fx.gate.bias->value.begin(), fx.gate.bias->value.end(), 0);
  Graph g;
  Tensor x = g.constant({1, 3}, {0.3, -1, 2});
  Tensor u = directional_self_attention(x, Direction::kForward, fx.attn, fx.gate);
  for (std::size_t f = 0; f < 3; ++f) EXPECT_NEAR(u.at(0, f), x.at(0, f), 1e-15);
}

TEST(DirectionalAttention, EqualsManualPipelineAndDirectionsDiffer) {
  const std::size_t n = 3, d = 3;
  Fixture fx(d, AttentionMode::kMultiDim, 9);
  Graph g;
  Tensor x = g.constant({n, d}, random_values(n * d, 10));
  for (Direction dir : {Direction::kForward, Direction::kBackward}) {
    Tensor u = directional_self_attention(x, dir, fx.attn, fx.gate);
    const AttentionResult s = masked_self_attention(x, positional_mask(n, dir), fx.attn);
    Tensor manual = fusion_gate(x, s.context, fx.gate).output;
    for (std::size_t k = 0; k < n * d; ++k) EXPECT_NEAR(u.values()[k], manual.values()[k], 1e-15);
  }
  Tensor fw = directional_self_attention(x, Direction::kForward, fx.attn, fx.gate);
  Tensor bw = directional_self_attention(x, Direction::kBackward, fx.attn, fx.gate);
  double diff = 0;
  for (std::size_t k = 0; k < n * d; ++k) diff += std::abs(fw.values()[k] - bw.values()[k]);
  EXPECT_GT(diff, 1e-3);
}

TEST(Source2Token, Examples) {
  const std::size_t d = 3;
  Fixture fx(d, AttentionMode::kMultiDim, 11);
  Graph g;
  const auto xv = random_values(4 * d, 12);
  Tensor x = g.constant({4, d}, xv);

  Tensor one = source2token(slice_rows(x, 1, 1), fx.s2t);
  for (std::size_t f = 0; f < d; ++f) EXPECT_NEAR(one.at(0, f), x.at(1, f), 1e-15);

  Tensor out = source2token(x, fx.s2t);
  for (std::size_t f = 0; f < d; ++f) {
    std::vector<double> w(4);
    double z = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      std::vector<double> xi(xv.begin() + i * d, xv.begin() + (i + 1) * d);
      const auto a = affine(*fx.s2t.weight, xi.data(), d);
      w[i] = std::exp(fx.s2t.c * std::tanh((a[f] + fx.s2t.bias->value[f]) / fx.s2t.c));
      z += w[i];
    }
    double expect = 0;
    for (std::size_t i = 0; i < 4; ++i) expect += w[i] / z * xv[i * d + f];
    EXPECT_NEAR(out.at(0, f), expect, 1e-12);
  }

  for (Parameter* p : fx.set.all()) std::fill(p->value.begin(), p->value.end(), 0);
  Tensor mean = source2token(x, fx.s2t);
  for (std::size_t f = 0; f < d; ++f) {
    double m = 0;
    for (std::size_t i = 0; i < 4; ++i) m += xv[i * d + f] / 4;
    EXPECT_NEAR(mean.at(0, f), m, 1e-12);
  }
}

TEST(SparseAttention, MatchesDenseAndCountsPairs) {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 2 + rep % 6, d = 3;
    Fixture fx(d, rep % 2 ? AttentionMode::kVanilla : AttentionMode::kMultiDim, 30 + rep);
    const AttentionMask m = random_mask(n, rng, 0.4);
    Graph g;
    Tensor x = g.constant({n, d}, random_values(n * d, 40 + rep));
    const SelectionPlan plan = SelectionPlan::from_mask(m);
    const SparseAttentionResult sparse = sparse_masked_attention(x, plan, fx.attn, true);
    const AttentionResult dense = masked_self_attention(x, m, fx.attn, SIZE_MAX, true);
    EXPECT_EQ(sparse.pair_evaluations, m.open_count());
    EXPECT_EQ(plan.pair_count(), m.open_count());
    for (std::size_t k = 0; k < n * d; ++k)
      EXPECT_NEAR(sparse.context.values()[k], dense.context.values()[k], 1e-12);
    for (std::size_t k = 0; k < n * n; ++k) EXPECT_NEAR(sparse.attention[k], dense.attention[k], 1e-12);
  }
}
