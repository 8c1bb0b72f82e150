#include "resa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "resa/data.hpp"
#include "resa/encoder.hpp"
#include "resa/model.hpp"
#include "resa/training.hpp"

namespace resa {

std::vector<Scalar> finite_difference_gradient(const std::vector<Parameter*>& params,
                                               const std::function<Scalar()>& f, double eps) {
  std::vector<Scalar> out;
  for (Parameter* p : params) {
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const Scalar saved = p->value[k];
      p->value[k] = saved + static_cast<Scalar>(eps);
      const Scalar up = f();
      p->value[k] = saved - static_cast<Scalar>(eps);
      const Scalar down = f();
      p->value[k] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw std::domain_error("finite_difference_gradient: non-finite loss while perturbing " +
                                p->name + "[" + std::to_string(k) + "]");
      out.push_back(static_cast<Scalar>((double(up) - double(down)) / (2 * eps)));
    }
  }
  return out;
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

GradcheckResult check_gradient(const std::string& name, const std::vector<Parameter*>& params,
                               const LossBuilder& build, const GradcheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    Tensor loss = build(g);
    g.backward(loss);
  }
  const std::vector<Scalar> analytic = flatten_grads(params);
  for (Parameter* p : params) p->zero_grad();
  const std::vector<Scalar> numeric = finite_difference_gradient(
      params,
      [&] {
        Graph g;
        return build(g).item();
      },
      options.eps);
  GradcheckResult r;
  r.name = name;
  r.coordinates = analytic.size();
  for (std::size_t k = 0; k < analytic.size(); ++k)
    r.max_error = std::max(r.max_error, relative_error(analytic[k], numeric[k], options.floor));
  r.passed = r.max_error < options.tolerance;
  return r;
}

namespace {

/// Randomized fixture: a parameter set with uniform values and helpers for
/// inputs and projection constants.
struct Fixture {
  ParameterSet set;
  std::mt19937_64 rng;

  explicit Fixture(std::uint64_t seed) : rng(seed) {}

  std::size_t pick(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  }
  Scalar uniform(double range = 1.0) {
    return static_cast<Scalar>(std::uniform_real_distribution<double>(-range, range)(rng));
  }
  Parameter& input(const std::string& name, Shape s) {
    Parameter& p = set.add(name, s);
    for (Scalar& v : p.value) v = uniform();
    return p;
  }
  /// Glorot weights plus nonzero biases so every term is exercised.
  void randomize() {
    set.initialize(rng());
    for (Parameter* p : set.all())
      if (p->is_bias)
        for (Scalar& v : p->value) v = uniform(0.5);
  }
  std::vector<Scalar> random_values(std::size_t n) {
    std::vector<Scalar> v(n);
    for (Scalar& e : v) e = uniform();
    return v;
  }
  Selection random_selection(std::size_t n) {
    Selection z(n);
    for (auto& b : z) b = static_cast<unsigned char>(rng() & 1u);
    return z;
  }
};

/// sum(t * R) for a fixed random R, so every output entry carries a distinct weight.
Tensor project(const Tensor& t, const std::vector<Scalar>& weights) {
  return sum(mul(t, t.graph().constant(t.shape(), weights)));
}

using CaseFn = std::function<GradcheckResult(std::uint64_t seed, const GradcheckOptions&)>;

struct Case {
  std::string name;
  CaseFn run;
};

GradcheckResult merge(const std::string& name, const std::vector<GradcheckResult>& parts,
                      double tolerance) {
  GradcheckResult r;
  r.name = name;
  for (const auto& p : parts) {
    r.coordinates += p.coordinates;
    r.max_error = std::max(r.max_error, p.max_error);
  }
  r.passed = r.max_error < tolerance;
  return r;
}

const AttentionMode kModes[] = {AttentionMode::kMultiDim, AttentionMode::kVanilla};

std::vector<Case> suite_cases() {
  std::vector<Case> cases;

  for (AttentionMode mode : kModes) {
    const std::string tag = mode == AttentionMode::kMultiDim ? "multi_dim" : "vanilla";

    cases.push_back({"query_attention." + tag, [mode](std::uint64_t seed, const GradcheckOptions& o) {
                       Fixture f(seed);
                       const std::size_t n = f.pick(1, 5), d = f.pick(2, 6);
                       auto params = MaskedAttentionParams::create(f.set, "att", d, mode);
                       f.randomize();
                       Parameter& x = f.input("x", {n, d});
                       Parameter& q = f.input("q", {1, d});
                       const auto w = f.random_values(d);
                       return check_gradient("", f.set.all(), [&](Graph& g) {
                         return project(vanilla_attention(g.param(x), g.param(q), params), w);
                       }, o);
                     }});

    cases.push_back({"compatibility." + tag, [mode](std::uint64_t seed, const GradcheckOptions& o) {
                       Fixture f(seed);
                       const std::size_t d = f.pick(2, 6);
                       auto params = MaskedAttentionParams::create(f.set, "att", d, mode);
                       f.randomize();
                       Parameter& xi = f.input("xi", {1, d});
                       Parameter& xj = f.input("xj", {1, d});
                       const auto w = f.random_values(params.score_width());
                       return check_gradient("", f.set.all(), [&](Graph& g) {
                         return project(masked_compatibility(g.param(xi), g.param(xj), params, 0), w);
                       }, o);
                     }});

    cases.push_back({"masked_self_attention." + tag, [mode](std::uint64_t seed, const GradcheckOptions& o) {
                       Fixture f(seed);
                       const std::size_t n = f.pick(2, 5), d = f.pick(2, 6);
                       auto params = MaskedAttentionParams::create(f.set, "att", d, mode);
                       f.randomize();
                       Parameter& x = f.input("x", {n, d});
                       AttentionMask mask = build_rss_mask(f.random_selection(n), f.random_selection(n));
                       const auto w = f.random_values(n * d);
                       return check_gradient("", f.set.all(), [&](Graph& g) {
                         return project(masked_self_attention(g.param(x), mask, params).context, w);
                       }, o);
                     }});

    cases.push_back({"sparse_attention." + tag, [mode](std::uint64_t seed, const GradcheckOptions& o) {
                       Fixture f(seed);
                       const std::size_t n = f.pick(2, 5), d = f.pick(2, 6);
                       auto params = MaskedAttentionParams::create(f.set, "att", d, mode);
                       f.randomize();
                       Parameter& x = f.input("x", {n, d});
                       const SelectionPlan plan =
                           SelectionPlan::from_mask(build_rss_mask(f.random_selection(n), f.random_selection(n)));
                       const auto w = f.random_values(n * d);
                       return check_gradient("", f.set.all(), [&](Graph& g) {
                         return project(sparse_masked_attention(g.param(x), plan, params).context, w);
                       }, o);
                     }});

    cases.push_back({"directional_attention." + tag, [mode](std::uint64_t seed, const GradcheckOptions& o) {
                       Fixture f(seed);
                       const std::size_t n = f.pick(2, 5), d = f.pick(2, 6);
                       auto att = MaskedAttentionParams::create(f.set, "att", d, mode);
                       auto gate = FusionGateParams::create(f.set, "gate", d);
                       f.randomize();
                       Parameter& x = f.input("x", {n, d});
                       const Direction dir = f.pick(0, 1) ? Direction::kForward : Direction::kBackward;
                       const auto w = f.random_values(n * d);
                       return check_gradient("", f.set.all(), [&](Graph& g) {
                         return project(directional_self_attention(g.param(x), dir, att, gate), w);
                       }, o);
                     }});

    cases.push_back({"source2token." + tag, [mode](std::uint64_t seed, const GradcheckOptions& o) {
                       Fixture f(seed);
                       const std::size_t n = f.pick(1, 5), d = f.pick(2, 6);
                       auto params = Source2TokenParams::create(f.set, "s2t", d, mode);
                       f.randomize();
                       Parameter& x = f.input("x", {n, d});
                       const auto w = f.random_values(d);
                       return check_gradient("", f.set.all(), [&](Graph& g) {
                         return project(source2token(g.param(x), params), w);
                       }, o);
                     }});
  }

  cases.push_back({"fusion_gate", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Fixture f(seed);
                     const std::size_t n = f.pick(1, 5), d = f.pick(2, 6);
                     auto gate = FusionGateParams::create(f.set, "gate", d);
                     f.randomize();
                     Parameter& x = f.input("x", {n, d});
                     Parameter& s = f.input("s", {n, d});
                     const auto w = f.random_values(n * d);
                     return check_gradient("", f.set.all(), [&](Graph& g) {
                       return project(fusion_gate(g.param(x), g.param(s), gate).output, w);
                     }, o);
                   }});

  for (Activation act : {Activation::kTanh, Activation::kRelu}) {
    const std::string tag = act == Activation::kTanh ? "tanh" : "relu";
    cases.push_back({"rss_log_prob." + tag, [act](std::uint64_t seed, const GradcheckOptions& o) {
                       Fixture f(seed);
                       const std::size_t n = f.pick(1, 5), d = f.pick(2, 6);
                       auto params = RssParams::create(f.set, "rss", d, f.pick(2, 6), act);
                       f.randomize();
                       Parameter& x = f.input("x", {n, d});
                       const Selection z = f.random_selection(n);
                       return check_gradient("", f.set.all(), [&](Graph& g) {
                         Tensor p = rss_probabilities(rss_features(g.param(x)), params);
                         return rss_log_prob(z, p);
                       }, o);
                     }});
  }

  cases.push_back({"iterative_log_prob", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Fixture f(seed);
                     const std::size_t n = f.pick(1, 5), d = f.pick(2, 6);
                     auto params = IterativeSamplerParams::create(f.set, "iter", d, d, d);
                     f.randomize();
                     Parameter& x = f.input("x", {n, d});
                     const RngStream stream(seed);
                     return check_gradient("", f.set.all(), [&](Graph& g) {
                       return iterative_sample(g.param(x), params, stream).log_prob;
                     }, o);
                   }});

  for (Variant variant : {Variant::kFull, Variant::kNoUnselectedHeads, Variant::kSingleRss}) {
    const std::string tag = variant == Variant::kFull              ? "full"
                            : variant == Variant::kNoUnselectedHeads ? "no_unselected_heads"
                                                                     : "single_rss";
    cases.push_back({"resan_encode." + tag, [variant](std::uint64_t seed, const GradcheckOptions& o) {
                       Fixture f(seed);
                       ResaConfig config;
                       config.hidden = f.pick(2, 6);
                       config.variant = variant;
                       config.attention = f.pick(0, 1) ? AttentionMode::kMultiDim : AttentionMode::kVanilla;
                       const std::size_t n = f.pick(1, 5);
                       auto params = ResanParams::create(f.set, "resan", config);
                       f.randomize();
                       Parameter& x = f.input("x", {n, config.hidden});
                       ResaOptions ro;
                       Selection zh = f.random_selection(n);
                       ro.fixed = std::make_pair(zh, variant == Variant::kSingleRss ? zh : f.random_selection(n));
                       const auto w = f.random_values(config.hidden);
                       GradcheckResult encoding = check_gradient("", f.set.all(), [&](Graph& g) {
                         return project(resan_encode(g.param(x), params, config, ro).encoding, w);
                       }, o);
                       // The samplers see x through a stop-gradient, so x is held fixed here.
                       GradcheckResult policy = check_gradient("", f.set.without_prefix("x"), [&](Graph& g) {
                         return resan_encode(g.param(x), params, config, ro).sample.log_prob;
                       }, o);
                       return merge("", {encoding, policy}, o.tolerance);
                     }});
  }

  cases.push_back({"classification_loss", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Fixture f(seed);
                     const std::size_t d = f.pick(2, 6), classes = f.pick(2, 4);
                     auto head = HeadParams::create(f.set, "head", 4 * d, d, classes);
                     f.randomize();
                     Parameter& a = f.input("a", {1, d});
                     Parameter& b = f.input("b", {1, d});
                     const std::size_t label = f.pick(0, classes - 1);
                     const std::vector<Parameter*> decayed{head.w_hidden, head.w_out};
                     return check_gradient("", f.set.all(), [&](Graph& g) {
                       Tensor feats = pair_features_classify(g.param(a), g.param(b));
                       return supervised_loss(head_logits(feats, head), label, decayed, 0.1);
                     }, o);
                   }});

  cases.push_back({"regression_loss", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Fixture f(seed);
                     const std::size_t d = f.pick(2, 6), classes = 5;
                     auto head = HeadParams::create(f.set, "head", 2 * d, d, classes);
                     f.randomize();
                     Parameter& a = f.input("a", {1, d});
                     Parameter& b = f.input("b", {1, d});
                     const auto target =
                         rating_target(1 + 4 * std::uniform_real_distribution<Scalar>(0, 1)(f.rng), classes);
                     const std::vector<Parameter*> decayed{head.w_hidden, head.w_out};
                     return check_gradient("", f.set.all(), [&](Graph& g) {
                       Tensor feats = pair_features_regress(g.param(a), g.param(b));
                       return supervised_loss(head_logits(feats, head), target, decayed, 0.1);
                     }, o);
                   }});

  cases.push_back({"pair_model", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Fixture f(seed);
                     const std::size_t d = f.pick(2, 6);
                     Vocabulary vocab(d);
                     std::mt19937_64 oov(seed);
                     for (int t = 0; t < 6; ++t) vocab.lookup_or_add("w" + std::to_string(t), oov);
                     ModelConfig mc;
                     mc.resa.hidden = d;
                     mc.task = TaskKind::kPairClassify;
                     mc.classes = 3;
                     ResanModel model(mc, vocab, seed);
                     for (Parameter* p : model.params().all())
                       if (p->is_bias)
                         for (Scalar& v : p->value) v = f.uniform(0.5);
                     EncodedExample ex;
                     for (std::size_t i = 0, n = f.pick(1, 4); i < n; ++i) ex.a.push_back(f.pick(0, 5));
                     for (std::size_t i = 0, n = f.pick(1, 4); i < n; ++i) ex.b.push_back(f.pick(0, 5));
                     ex.label = f.pick(0, 2);
                     ForwardOptions fo;
                     fo.need_log_prob = true;
                     for (const auto* s : {&ex.a, &ex.b})
                       fo.fixed.emplace_back(std::make_pair(f.random_selection(s->size()),
                                                            f.random_selection(s->size())));
                     const auto decayed = model.decayed_params();
                     GradcheckResult loss = check_gradient("", model.params().all(), [&](Graph& g) {
                       return supervised_loss(model.forward(g, ex, fo).logits, ex.label, decayed, 0.1);
                     }, o);
                     GradcheckResult policy = check_gradient("", model.sampler_params(), [&](Graph& g) {
                       return model.forward(g, ex, fo).log_prob;
                     }, o);
                     return merge("", {loss, policy}, o.tolerance);
                   }});

  return cases;
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options) {
  std::vector<GradcheckResult> results;
  std::uint64_t case_index = 0;
  for (const Case& c : suite_cases()) {
    std::vector<GradcheckResult> parts;
    for (std::size_t i = 0; i < options.instances; ++i)
      parts.push_back(c.run(stream_id({options.seed, case_index, i}), options));
    results.push_back(merge(c.name, parts, options.tolerance));
    ++case_index;
  }
  return results;
}

}  // namespace resa
