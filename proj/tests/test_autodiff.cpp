#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "resa/autodiff.hpp"
#include "resa/gradcheck.hpp"
#include "resa/parameters.hpp"

using namespace resa;

namespace {

std::vector<Scalar> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Parameter make_param(const std::string& name, Shape shape, std::vector<Scalar> v) {
  Parameter p(name, shape);
  p.value = std::move(v);
  return p;
}

}  // namespace

TEST(Autodiff, ElementwiseAdd) {
  Graph g;
  Tensor a = g.constant({1, 2}, {1, 2});
  Tensor b = g.constant({1, 2}, {3, 4});
  EXPECT_EQ(vals(add(a, b)), (std::vector<Scalar>{4, 6}));
}

TEST(Autodiff, MatmulIdentity) {
  Graph g;
  Tensor i2 = g.constant({2, 2}, {1, 0, 0, 1});
  Tensor m = g.constant({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(vals(matmul(i2, m)), (std::vector<Scalar>{5, 6, 7, 8}));
}

TEST(Autodiff, MatmulNtMatchesMatmulWithTranspose) {
  Graph g;
  Tensor a = g.constant({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor w = g.constant({4, 3}, {1, 0, 2, -1, 3, 1, 0, 0, 1, 2, 2, 2});
  EXPECT_EQ(vals(matmul_nt(a, w)), vals(matmul(a, transpose(w))));
}

TEST(Autodiff, SigmoidAtZero) {
  Graph g;
  EXPECT_DOUBLE_EQ(sigmoid(g.scalar(0)).item(), 0.5);
}

TEST(Autodiff, BroadcastRowAndColumn) {
  Graph g;
  Tensor m = g.constant({2, 2}, {1, 2, 3, 4});
  Tensor row = g.constant({1, 2}, {10, 20});
  Tensor col = g.constant({2, 1}, {100, 200});
  EXPECT_EQ(vals(add(m, row)), (std::vector<Scalar>{11, 22, 13, 24}));
  EXPECT_EQ(vals(mul(m, col)), (std::vector<Scalar>{100, 200, 600, 800}));
  EXPECT_EQ(vals(sub(m, g.scalar(1))), (std::vector<Scalar>{0, 1, 2, 3}));
}

TEST(Autodiff, ShapeMismatchThrows) {
  Graph g;
  Tensor a = g.constant({2, 3}, 1.0);
  Tensor b = g.constant({3, 2}, 1.0);
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Autodiff, MixingGraphsThrows) {
  Graph g1, g2;
  Tensor a = g1.constant({1, 2}, 1.0);
  Tensor b = g2.constant({1, 2}, 1.0);
  EXPECT_ANY_THROW(add(a, b));
}

TEST(Autodiff, RecordedOrderIsTopological) {
  Graph g;
  Tensor x = g.constant({1, 3}, {1, 2, 3});
  Tensor y = sum(mul(tanh(x), exp(x)));
  for (std::size_t id = 0; id <= y.id(); ++id)
    for (std::size_t in : g.inputs(id)) EXPECT_LT(in, id);
}

TEST(Autodiff, SumOfSquaresGradient) {
  Parameter x = make_param("x", {1, 2}, {1, -2});
  Graph g;
  Tensor t = g.param(x);
  g.backward(sum(mul(t, t)));
  EXPECT_EQ(x.grad, (std::vector<Scalar>{2, -4}));
}

TEST(Autodiff, SigmoidGradientAtZero) {
  Parameter w = make_param("w", {1, 1}, {0});
  Graph g;
  g.backward(sigmoid(g.param(w)));
  EXPECT_DOUBLE_EQ(w.grad[0], 0.25);
}

TEST(Autodiff, GradientsAccumulateAcrossBackwardCalls) {
  Parameter w = make_param("w", {1, 1}, {3});
  for (int i = 0; i < 2; ++i) {
    Graph g;
    Tensor t = g.param(w);
    g.backward(mul(t, t));
  }
  EXPECT_DOUBLE_EQ(w.grad[0], 12);
}

TEST(Autodiff, BackwardRequiresScalarLoss) {
  Graph g;
  Tensor a = g.constant({1, 2}, 1.0);
  EXPECT_ANY_THROW(g.backward(a));
}

TEST(Autodiff, ThreeLayerCompositeMatchesFiniteDifferences) {
  ParameterSet set;
  set.add("l1.W", {5, 4});
  set.add("l1.b", {1, 5}, true);
  set.add("l2.W", {3, 5});
  set.add("l2.b", {1, 3}, true);
  set.add("l3.W", {2, 3});
  set.initialize(11);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  for (Parameter* p : set.all())
    for (Scalar& v : p->value) v += static_cast<Scalar>(0.3 * n01(rng));
  std::vector<Scalar> input(3 * 4);
  for (Scalar& v : input) v = static_cast<Scalar>(n01(rng));

  const auto build = [&](Graph& g) {
    Tensor x = g.constant({3, 4}, input);
    Tensor h1 = tanh(add(matmul_nt(x, g.param(set.at("l1.W"))), g.param(set.at("l1.b"))));
    Tensor h2 = sigmoid(add(matmul_nt(h1, g.param(set.at("l2.W"))), g.param(set.at("l2.b"))));
    Tensor out = matmul_nt(h2, g.param(set.at("l3.W")));
    return sum(log_softmax_rows(out));
  };
  const GradcheckResult r = check_gradient("composite", set.all(), build);
  EXPECT_TRUE(r.passed) << r.max_error;
  EXPECT_EQ(r.coordinates, set.count());
}

TEST(Autodiff, MaskedSoftmaxExamples) {
  Graph g;
  Tensor s = g.constant({1, 3}, {0, 0, 0});
  const std::vector<Scalar> open(3, 0);
  for (Scalar v : masked_softmax_rows(s, open).values()) EXPECT_NEAR(v, 1.0 / 3, 1e-15);

  Tensor s2 = g.constant({1, 2}, {1, 1});
  const std::vector<Scalar> m2{0, kNegInf};
  EXPECT_EQ(vals(masked_softmax_rows(s2, m2)), (std::vector<Scalar>{1, 0}));

  Tensor s3 = g.constant({1, 3}, {4, -7, 0.5});
  const std::vector<Scalar> closed(3, kNegInf);
  for (Scalar v : masked_softmax_rows(s3, closed).values()) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
}

TEST(Autodiff, MaskedSoftmaxIsStableForLargeScores) {
  Graph g;
  Tensor s = g.constant({1, 3}, {1000, 999, -1000});
  const std::vector<Scalar> open(3, 0);
  Tensor p = masked_softmax_rows(s, open);
  for (Scalar v : p.values()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(p.at(0, 0), 1 / (1 + std::exp(-1.0)), 1e-12);
}

TEST(Autodiff, MaskedSoftmaxGradientSkipsMaskedEntries) {
  Parameter s = make_param("s", {1, 3}, {0.3, -0.2, 0.9});
  const std::vector<Scalar> mask{0, kNegInf, 0};
  Graph g;
  Tensor p = masked_softmax_rows(g.param(s), mask);
  g.backward(pick(p, 0, 0));
  EXPECT_EQ(s.grad[1], 0);
  EXPECT_NEAR(s.grad[0] + s.grad[2], 0, 1e-15);
}

TEST(Autodiff, MeanPoolExamples) {
  Graph g;
  Tensor two = g.constant({2, 2}, {1, 3, 3, 5});
  const std::vector<unsigned char> both{1, 1};
  EXPECT_EQ(vals(mean_pool(two, both)), (std::vector<Scalar>{2, 4}));

  Tensor one = g.constant({1, 3}, {0.5, -1, 2});
  const std::vector<unsigned char> single{1};
  EXPECT_EQ(vals(mean_pool(one, single)), vals(one));

  Tensor three = g.constant({3, 2}, {1, 2, 5, 8, 100, 100});
  const std::vector<unsigned char> first_two{1, 1, 0};
  EXPECT_EQ(vals(mean_pool(three, first_two)), (std::vector<Scalar>{3, 5}));

  const std::vector<unsigned char> none{0, 0, 0};
  EXPECT_ANY_THROW(mean_pool(three, none));
}

TEST(Autodiff, GatherRowsScattersGradients) {
  Parameter table = make_param("emb", {3, 2}, {1, 2, 3, 4, 5, 6});
  Graph g;
  const std::vector<std::size_t> rows{2, 0, 2};
  Tensor x = gather_rows(g, table, rows);
  EXPECT_EQ(vals(x), (std::vector<Scalar>{5, 6, 1, 2, 5, 6}));
  g.backward(sum(x));
  EXPECT_EQ(table.grad, (std::vector<Scalar>{1, 1, 0, 0, 2, 2}));
}

TEST(Autodiff, ClampHasZeroGradientOutsideRange) {
  Parameter x = make_param("x", {1, 3}, {-2, 0.5, 2});
  Graph g;
  g.backward(sum(clamp(g.param(x), -1, 1)));
  EXPECT_EQ(x.grad, (std::vector<Scalar>{0, 1, 0}));
}

TEST(Autodiff, ConcatAndSliceRoundTrip) {
  Graph g;
  Tensor a = g.constant({2, 1}, {1, 2});
  Tensor b = g.constant({2, 2}, {3, 4, 5, 6});
  Tensor c = concat_cols(a, b);
  EXPECT_EQ(vals(c), (std::vector<Scalar>{1, 3, 4, 2, 5, 6}));
  const std::vector<Tensor> parts{slice_rows(c, 1, 1), slice_rows(c, 0, 1)};
  EXPECT_EQ(vals(concat_rows(parts)), (std::vector<Scalar>{2, 5, 6, 1, 3, 4}));
}

TEST(FiniteDifference, QuadraticIsExact) {
  Parameter x = make_param("x", {1, 1}, {3});
  const auto grad =
      finite_difference_gradient({&x}, [&] { return x.value[0] * x.value[0]; }, 1e-5);
  EXPECT_NEAR(grad[0], 6.0, 1e-6);
  EXPECT_EQ(x.value[0], 3);
}

TEST(FiniteDifference, ConstantGivesZeros) {
  Parameter x = make_param("x", {2, 2}, {1, 2, 3, 4});
  const auto grad = finite_difference_gradient({&x}, [] { return Scalar(7); });
  for (Scalar v : grad) EXPECT_EQ(v, 0);
}

TEST(FiniteDifference, NonFiniteThrows) {
  Parameter x = make_param("x", {1, 1}, {0});
  EXPECT_ANY_THROW(finite_difference_gradient({&x}, [] { return Scalar(NAN); }));
}

TEST(Parameters, InitializationContract) {
  ParameterSet a, b;
  for (ParameterSet* s : {&a, &b}) {
    s->add("m.W", {4, 6});
    s->add("m.b", {1, 4}, true);
    s->initialize(42);
  }
  const Scalar bound = std::sqrt(6.0 / 10.0);
  EXPECT_DOUBLE_EQ(glorot_bound({4, 6}), bound);
  for (Scalar v : a.at("m.W").value) EXPECT_LE(std::abs(v), bound);
  for (Scalar v : a.at("m.b").value) EXPECT_EQ(v, 0);
  EXPECT_EQ(a.at("m.W").value, b.at("m.W").value);

  ParameterSet c;
  c.add("m.W", {4, 6});
  c.initialize(43);
  EXPECT_NE(a.at("m.W").value, c.at("m.W").value);
}

TEST(Parameters, PrefixSelectionAndFlattenOrder) {
  ParameterSet s;
  s.add("b.x", {1, 2});
  s.add("a.y", {1, 1});
  s.add("b.z", {1, 1});
  EXPECT_EQ(s.with_prefix("b.").size(), 2u);
  EXPECT_EQ(s.without_prefix("b.").size(), 1u);
  s.at("a.y").grad = {1};
  s.at("b.x").grad = {2, 3};
  s.at("b.z").grad = {4};
  EXPECT_EQ(flatten_grads(s.all()), (std::vector<Scalar>{1, 2, 3, 4}));
  EXPECT_EQ(s.count(), 4u);
  EXPECT_THROW(s.add("a.y", {1, 1}), std::invalid_argument);
}
