#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "resa/experiment.hpp"
#include "resa/training.hpp"

using namespace resa;

namespace {

struct Tiny {
  Vocabulary vocab{4};
  std::vector<EncodedExample> data;
  std::unique_ptr<ResanModel> model;

  explicit Tiny(std::size_t n, Variant variant = Variant::kFull, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    for (int t = 0; t < 6; ++t) {
      std::vector<Scalar> v(4);
      for (Scalar& x : v) x = static_cast<Scalar>(n01(rng));
      vocab.add("w" + std::to_string(t), v, false);
    }
    for (std::size_t k = 0; k < 8; ++k) {
      EncodedExample e;
      for (std::size_t i = 0; i < n; ++i) e.a.push_back((k + 2 * i) % 6);
      e.label = k % 2;
      data.push_back(e);
    }
    ModelConfig mc;
    mc.resa.hidden = 4;
    mc.resa.variant = variant;
    model = std::make_unique<ResanModel>(mc, vocab, seed);
  }
};

}  // namespace

TEST(Loss, ClassificationExamples) {
  Graph g;
  Tensor confident = g.constant({1, 2}, {0, -1e4});
  EXPECT_NEAR(supervised_loss(confident, 0).item(), 0, 1e-12);
  Tensor uniform = g.constant({1, 3}, {0.3, 0.3, 0.3});
  EXPECT_NEAR(supervised_loss(uniform, 2).item(), std::log(3.0), 1e-12);

  Parameter w("w", {1, 4});
  w.value = {5, 5, 5, 5};  // squared norm 100
  EXPECT_NEAR(supervised_loss(confident, 0, {&w}, 5e-5).item(), 5e-3, 1e-12);
  EXPECT_NEAR(l2_value({&w}), 100, 1e-12);
  EXPECT_THROW(supervised_loss(uniform, 3), std::out_of_range);
}

TEST(Loss, RegressionIsKlDivergence) {
  Graph g;
  const auto target = rating_target(4.5, 5);
  std::vector<Scalar> logits(5, -50);
  logits[3] = logits[4] = 0;
  EXPECT_NEAR(supervised_loss(g.constant({1, 5}, logits), target).item(), 0, 1e-12);

  Tensor flat = g.constant({1, 5}, 0.0);
  EXPECT_NEAR(supervised_loss(flat, target).item(), std::log(5.0) + std::log(0.5), 1e-12);
}

TEST(Reward, Examples) {
  const Selection ones(5, 1), zeros(5, 0);
  EXPECT_DOUBLE_EQ(reward(-0.7, ones, ones, 5, 0), -0.7);
  EXPECT_NEAR(reward(0, ones, ones, 5, 0.01), -0.02, 1e-15);
  EXPECT_DOUBLE_EQ(reward(-0.3, zeros, zeros, 5, 0.5), -0.3);
  EXPECT_NEAR(reward(0, ones, zeros, 5, 0.01, PenaltyCount::kHeadOnly), -0.01, 1e-15);
  EXPECT_NEAR(reward(0, zeros, ones, 5, 0.01, PenaltyCount::kHeadOnly), 0, 1e-15);
}

TEST(PolicyGradient, EnumerationCountAndConstantReward) {
  Tiny t(2);
  std::size_t configs = 0;
  const auto g = exact_policy_gradient(*t.model, t.data[0], 0, PenaltyCount::kBoth, &configs);
  EXPECT_EQ(configs, 16u);
  EXPECT_EQ(g.size(), flatten_grads(t.model->sampler_params()).size());

  // A zeroed task head predicts 1/2 whatever z is, so R is constant.
  for (Parameter* p : t.model->params().with_prefix("head.")) std::fill(p->value.begin(), p->value.end(), 0);
  for (Scalar v : exact_policy_gradient(*t.model, t.data[0], 0)) EXPECT_NEAR(v, 0, 1e-12);
}

TEST(PolicyGradient, SampleIsRewardTimesScore) {
  Tiny t(3);
  const PolicySample s = policy_gradient_sample(*t.model, t.data[1], 0.01, RngStream(3));
  Graph g;
  ForwardOptions fo;
  fo.stream = RngStream(3);
  fo.need_log_prob = true;
  t.model->params().zero_grad();
  g.backward(t.model->forward(g, t.data[1], fo).log_prob);
  const auto score = flatten_grads(t.model->sampler_params());
  t.model->params().zero_grad();
  for (std::size_t k = 0; k < score.size(); ++k) EXPECT_NEAR(s.gradient[k], s.reward * score[k], 1e-12);
}

TEST(PolicyGradient, DegenerateProbabilitiesStayFinite) {
  Tiny t(3);
  t.model->params().at("resan.rss_head.b").value[0] = 80;
  t.model->params().at("resan.rss_dep.b").value[0] = -80;
  for (std::uint64_t k = 0; k < 5; ++k) {
    const PolicySample s = policy_gradient_sample(*t.model, t.data[0], 0.01, RngStream(k));
    for (Scalar v : s.gradient) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_LT(std::abs(v), 1e3);
    }
  }
}

TEST(PolicyGradient, MonteCarloAgreesWithEnumeration) {
  Tiny t(2, Variant::kFull, 4);
  const EncodedExample& ex = t.data[3];
  const auto exact = exact_policy_gradient(*t.model, ex, 0.02);
  const std::size_t draws = 20000;
  std::vector<double> mean(exact.size(), 0), sq(exact.size(), 0);
  for (std::size_t k = 0; k < draws; ++k) {
    const PolicySample s = policy_gradient_sample(*t.model, ex, 0.02, RngStream(stream_id({7, k})));
    for (std::size_t c = 0; c < exact.size(); ++c) {
      mean[c] += s.gradient[c];
      sq[c] += double(s.gradient[c]) * s.gradient[c];
    }
  }
  std::size_t within = 0;
  for (std::size_t c = 0; c < exact.size(); ++c) {
    const double m = mean[c] / draws;
    const double se = std::sqrt(std::max(0.0, sq[c] / draws - m * m) / draws);
    within += std::abs(m - exact[c]) <= 4 * se + 1e-12;
  }
  EXPECT_GE(double(within) / double(exact.size()), 0.95);
}

TEST(PolicyGradient, EnumerationLimit) {
  Tiny t(7);
  EXPECT_THROW(exact_policy_gradient(*t.model, t.data[0], 0), std::invalid_argument);
  Tiny single(6, Variant::kSingleRss);
  std::size_t configs = 0;
  exact_policy_gradient(*single.model, single.data[0], 0, PenaltyCount::kBoth, &configs);
  EXPECT_EQ(configs, 64u);
}

TEST(PolicyGradient, ReinforceBatchAveragesSamples) {
  Tiny t(3);
  PolicyOptions o;
  o.lambda = 0.01;
  o.samples_per_item = 2;
  o.stream = RngStream(5);
  const auto g1 = reinforce_gradient(*t.model, std::span(t.data).first(2), o);
  const auto g2 = reinforce_gradient(*t.model, std::span(t.data).first(2), o);
  EXPECT_EQ(g1, g2);
  EXPECT_EQ(g1.size(), flatten_grads(t.model->sampler_params()).size());
}

TEST(Adadelta, Examples) {
  Parameter p("p", {1, 2});
  p.value = {1, -1};
  AdadeltaState st;
  p.grad = {0, 0};
  adadelta_step(p, st, 0.95, 1e-6);
  EXPECT_EQ(p.value, (std::vector<Scalar>{1, -1}));

  Parameter q("q", {1, 1});
  q.value = {0};
  q.grad = {1};
  AdadeltaState s;
  adadelta_step(q, s, 0.95, 1e-6);
  const double first = q.value[0];
  EXPECT_NEAR(first, -std::sqrt(1e-6) / std::sqrt(0.05 + 1e-6), 1e-12);
  EXPECT_NEAR(first, -4.47e-3, 1e-5);
  adadelta_step(q, s, 0.95, 1e-6);
  EXPECT_GE(std::abs(q.value[0] - first), std::abs(first));

  // accumulators decay under a zero gradient
  const double acc = s.sq_grad[0];
  q.grad = {0};
  adadelta_step(q, s, 0.95, 1e-6);
  EXPECT_NEAR(s.sq_grad[0], 0.95 * acc, 1e-15);

  q.grad = {NAN};
  EXPECT_THROW(adadelta_step(q, s, 0.95, 1e-6), std::domain_error);
}

TEST(Schedule, Examples) {
  const std::vector<double> improving{1.0, 0.8, 0.6, 0.4, 0.2};
  EXPECT_EQ(train_schedule(improving), Phase::kWarmup);

  PhaseSchedule s(2, 1e-3);
  const std::vector<double> scripted{1.0, 0.9, 0.8999, 0.8998};
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(s.observe(scripted[e]), Phase::kWarmup);
  EXPECT_EQ(s.observe(scripted[3]), Phase::kJoint);
  EXPECT_EQ(s.switched_after(), std::optional<std::size_t>(4));
  for (double l : {0.1, 0.05, 0.01}) EXPECT_EQ(s.observe(l), Phase::kJoint);

  PhaseSchedule capped(5, 1e-3, 2);
  capped.observe(1.0);
  EXPECT_EQ(capped.observe(0.5), Phase::kJoint);
}

TEST(Dropout, Examples) {
  const RngStream s(3);
  for (Scalar v : dropout_mask(50, 1.0, s, true)) EXPECT_EQ(v, 1);
  for (Scalar v : dropout_mask(50, 0.5, s, false)) EXPECT_EQ(v, 1);
  const std::size_t n = 100000;
  const auto m = dropout_mask(n, 0.8, s, true);
  double mean = 0;
  for (Scalar v : m) {
    EXPECT_TRUE(v == 0 || std::abs(v - 1.25) < 1e-12);
    mean += v;
  }
  mean /= n;
  const double se = std::sqrt(0.8 * 0.2) / 0.8 / std::sqrt(double(n));
  EXPECT_NEAR(mean, 1, 3 * se);
}

TEST(Config, ValidateNamesField) {
  TrainConfig c;
  c.keep_prob = 0;
  try {
    c.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("keep_prob"), std::string::npos);
  }
  TrainConfig loo;
  loo.baseline = Baseline::kLeaveOneOut;
  EXPECT_THROW(loo.validate(), std::invalid_argument);
  loo.samples_per_item = 2;
  EXPECT_NO_THROW(loo.validate());
}

TEST(Trainer, WarmupFreezesSamplerThenJointMovesIt) {
  RunConfig run;
  run.synthetic.count = 64;
  run.synthetic_test = 32;
  run.model.resa.hidden = 8;
  run.train.batch_size = 16;
  PreparedData data = prepare_data(run);
  ResanModel model(run.model, data.vocab, 1);
  auto snapshot = [&] {
    std::vector<std::vector<Scalar>> v;
    for (Parameter* p : model.sampler_params()) v.push_back(p->value);
    return v;
  };
  const auto before = snapshot();
  const auto head_before = model.params().at("head.Wo").value;
  TrainConfig tc = run.train;
  tc.patience = 100;
  Trainer trainer(model, tc);
  for (int e = 0; e < 2; ++e) {
    const EpochMetrics m = trainer.run_epoch(data.train, data.dev);
    EXPECT_EQ(m.phase, Phase::kWarmup);
    EXPECT_EQ(snapshot(), before);
  }
  EXPECT_NE(model.params().at("head.Wo").value, head_before);
  trainer.set_phase_joint();
  const EpochMetrics m = trainer.run_epoch(data.train, data.dev);
  EXPECT_EQ(m.phase, Phase::kJoint);
  EXPECT_NE(snapshot(), before);
}

TEST(Trainer, LeaveOneOutBaselineRuns) {
  RunConfig run;
  run.synthetic.count = 32;
  run.synthetic_test = 16;
  run.model.resa.hidden = 8;
  PreparedData data = prepare_data(run);
  ResanModel model(run.model, data.vocab, 2);
  TrainConfig tc = run.train;
  tc.baseline = Baseline::kLeaveOneOut;
  tc.samples_per_item = 3;
  Trainer trainer(model, tc);
  trainer.set_phase_joint();
  const EpochMetrics m = trainer.run_epoch(data.train, data.dev);
  EXPECT_TRUE(std::isfinite(m.train_loss));
  EXPECT_LT(m.mean_reward, 0);
}

TEST(Evaluate, ForceAllSelectsEverything) {
  RunConfig run;
  run.synthetic.count = 16;
  run.synthetic_test = 16;
  run.model.resa.hidden = 8;
  PreparedData data = prepare_data(run);
  ResanModel model(run.model, data.vocab, 3);
  const EvalResult r = evaluate(model, data.test, SelectMode::kForceAll);
  EXPECT_EQ(r.count, 16u);
  EXPECT_DOUBLE_EQ(r.selection_fraction(), 1);
  EXPECT_DOUBLE_EQ(r.planted_recall, 1);
  EXPECT_GE(r.accuracy, 0);
  EXPECT_LE(r.accuracy, 1);
}

TEST(Dropout, SharedStreamGivesIdenticalNoise) {
  RunConfig run;
  run.synthetic.count = 4;
  run.synthetic_test = 4;
  run.model.resa.hidden = 8;
  PreparedData data = prepare_data(run);
  ResanModel model(run.model, data.vocab, 3);
  auto logits = [&](std::uint64_t stream, std::optional<std::uint64_t> dropout) {
    Graph g;
    ForwardOptions fo;
    fo.mode = SelectMode::kForceAll;
    fo.training = true;
    fo.keep_prob = 0.5;
    fo.stream = RngStream(stream);
    if (dropout) fo.dropout_stream = RngStream(*dropout);
    const Tensor l = model.forward(g, data.train[0], fo).logits;
    return std::vector<Scalar>(l.values().begin(), l.values().end());
  };
  EXPECT_EQ(logits(1, 9), logits(2, 9));
  EXPECT_NE(logits(1, std::nullopt), logits(2, std::nullopt));
}
