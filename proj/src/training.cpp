#include "resa/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace resa {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("TrainConfig: " + what); };
  if (!(gamma >= 0)) fail("gamma must be >= 0");
  if (!(lambda >= 0)) fail("lambda must be >= 0");
  if (!(keep_prob > 0 && keep_prob <= 1)) fail("keep_prob must lie in (0, 1]");
  if (patience == 0) fail("patience must be >= 1");
  if (!(delta >= 0)) fail("delta must be >= 0");
  if (!(rho > 0 && rho < 1)) fail("rho must lie in (0, 1)");
  if (!(eps > 0)) fail("eps must be > 0");
  if (!(learning_rate > 0)) fail("learning_rate must be > 0");
  if (!(sampler_learning_rate >= 0)) fail("sampler_learning_rate must be >= 0");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (samples_per_item == 0) fail("samples_per_item must be >= 1");
  if (!(baseline_decay >= 0 && baseline_decay < 1)) fail("baseline_decay must lie in [0, 1)");
  if (baseline == Baseline::kLeaveOneOut && samples_per_item < 2)
    fail("leave_one_out baseline needs samples_per_item >= 2");
}

Tensor l2_penalty(Graph& g, const std::vector<Parameter*>& params) {
  Tensor total = g.scalar(0);
  for (Parameter* p : params) {
    Tensor t = g.param(*p);
    total = add(total, sum(mul(t, t)));
  }
  return total;
}

Scalar l2_value(const std::vector<Parameter*>& params) {
  Scalar s = 0;
  for (const Parameter* p : params)
    for (Scalar v : p->value) s += v * v;
  return s;
}

namespace {

Tensor add_decay(Tensor loss, const std::vector<Parameter*>& decayed, Scalar gamma) {
  if (gamma == 0 || decayed.empty()) return loss;
  return add(loss, scale(l2_penalty(loss.graph(), decayed), gamma));
}

}  // namespace

Tensor supervised_loss(const Tensor& logits, std::size_t label,
                       const std::vector<Parameter*>& decayed, Scalar gamma) {
  if (logits.rows() != 1) throw ShapeError("supervised_loss: logits must be one row, got " + logits.shape().str());
  if (label >= logits.cols())
    throw std::out_of_range("supervised_loss: label " + std::to_string(label) + " outside " +
                            std::to_string(logits.cols()) + " classes");
  Tensor nll = scale(pick(log_softmax_rows(logits), 0, label), -1);
  return add_decay(nll, decayed, gamma);
}

Tensor supervised_loss(const Tensor& logits, std::span<const Scalar> target,
                       const std::vector<Parameter*>& decayed, Scalar gamma) {
  if (logits.rows() != 1 || target.size() != logits.cols())
    throw ShapeError("supervised_loss: target of width " + std::to_string(target.size()) +
                     " against logits " + logits.shape().str());
  Scalar entropy_term = 0;
  Scalar total = 0;
  for (Scalar t : target) {
    if (!(t >= 0)) throw std::out_of_range("supervised_loss: negative target probability");
    total += t;
    if (t > 0) entropy_term += t * std::log(t);
  }
  if (std::abs(total - 1) > 1e-9) throw std::out_of_range("supervised_loss: target does not sum to 1");
  Graph& g = logits.graph();
  Tensor t = g.constant(logits.shape(), std::vector<Scalar>(target.begin(), target.end()));
  Tensor cross = scale(sum(mul(t, log_softmax_rows(logits))), -1);
  Tensor kl = add(cross, g.scalar(entropy_term));
  return add_decay(kl, decayed, gamma);
}

Scalar reward(Scalar log_likelihood, std::span<const unsigned char> z_head,
              std::span<const unsigned char> z_dep, std::size_t n, Scalar lambda,
              PenaltyCount count) {
  if (n == 0) throw std::invalid_argument("reward: n must be >= 1");
  std::size_t selected = 0;
  for (unsigned char z : z_head) selected += z != 0;
  if (count == PenaltyCount::kBoth)
    for (unsigned char z : z_dep) selected += z != 0;
  return log_likelihood - lambda * Scalar(selected) / Scalar(n);
}

TaskLoss task_loss(const ResanModel& model, const ModelOutput& out, const EncodedExample& ex) {
  TaskLoss tl;
  if (model.config().task == TaskKind::kPairRegress) {
    const auto target = rating_target(ex.rating, model.config().classes);
    tl.loss = supervised_loss(out.logits, target);
  } else {
    tl.loss = supervised_loss(out.logits, ex.label);
  }
  // For ratings the "likelihood" is the negative KL to the sparse target.
  tl.log_likelihood = -tl.loss.item();
  return tl;
}

namespace {

struct Selections {
  Selection head;
  Selection dep;
};

Selections gather_selections(const ModelOutput& out) {
  Selections s;
  for (const auto& sample : out.samples) {
    s.head.insert(s.head.end(), sample.z_head.begin(), sample.z_head.end());
    s.dep.insert(s.dep.end(), sample.z_dep.begin(), sample.z_dep.end());
  }
  return s;
}

Scalar output_reward(const ResanModel& model, const ModelOutput& out, const EncodedExample& ex,
                     Scalar lambda, PenaltyCount penalty) {
  const Selections s = gather_selections(out);
  return reward(task_loss(model, out, ex).log_likelihood, s.head, s.dep, out.tokens, lambda, penalty);
}

void require_sampler(const ResanModel& model, const char* what) {
  if (!model.resan()) throw std::invalid_argument(std::string(what) + ": model has no token samplers");
}

}  // namespace

PolicySample policy_gradient_sample(ResanModel& model, const EncodedExample& ex, Scalar lambda,
                                    const RngStream& stream, PenaltyCount penalty) {
  require_sampler(model, "policy_gradient_sample");
  model.params().zero_grad();
  Graph g;
  ForwardOptions fo;
  fo.mode = SelectMode::kSample;
  fo.stream = stream;
  fo.need_log_prob = true;
  ModelOutput out = model.forward(g, ex, fo);
  PolicySample s;
  s.reward = output_reward(model, out, ex, lambda, penalty);
  g.backward(scale(out.log_prob, s.reward));
  const auto sampler = model.sampler_params();
  s.gradient = flatten_grads(sampler);
  model.params().zero_grad();
  return s;
}

std::vector<Scalar> reinforce_gradient(ResanModel& model, std::span<const EncodedExample> batch,
                                       const PolicyOptions& options) {
  require_sampler(model, "reinforce_gradient");
  if (batch.empty()) throw std::invalid_argument("reinforce_gradient: empty batch");
  std::vector<Scalar> total;
  const std::size_t samples = std::max<std::size_t>(1, options.samples_per_item);
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t k = 0; k < samples; ++k) {
      PolicySample s = policy_gradient_sample(model, batch[i], options.lambda,
                                              options.stream.derive(i).derive(k), options.penalty);
      if (total.empty()) total.assign(s.gradient.size(), 0);
      for (std::size_t c = 0; c < total.size(); ++c) total[c] += s.gradient[c];
    }
  const Scalar inv = Scalar(1) / Scalar(batch.size() * samples);
  for (Scalar& v : total) v *= inv;
  return total;
}

std::vector<Scalar> exact_policy_gradient(ResanModel& model, const EncodedExample& ex, Scalar lambda,
                                          PenaltyCount penalty, std::size_t* configurations) {
  require_sampler(model, "exact_policy_gradient");
  const bool single = model.config().resa.variant == Variant::kSingleRss;
  std::vector<std::size_t> lengths{ex.a.size()};
  if (model.config().task != TaskKind::kSingle) lengths.push_back(ex.b.size());
  std::size_t bits = 0;
  for (std::size_t n : lengths) bits += single ? n : 2 * n;
  if (bits > kMaxEnumeratedBits)
    throw std::invalid_argument("exact_policy_gradient: " + std::to_string(bits) +
                                " selection bits exceed the enumeration limit of " +
                                std::to_string(kMaxEnumeratedBits));

  model.params().zero_grad();
  const std::size_t count = std::size_t{1} << bits;
  for (std::size_t code = 0; code < count; ++code) {
    ForwardOptions fo;
    fo.need_log_prob = true;
    std::size_t bit = 0;
    auto next = [&] { return static_cast<unsigned char>((code >> bit++) & 1u); };
    for (std::size_t n : lengths) {
      Selection head(n), dep(n);
      for (std::size_t i = 0; i < n; ++i) head[i] = next();
      if (single) {
        dep = head;
      } else {
        for (std::size_t i = 0; i < n; ++i) dep[i] = next();
      }
      fo.fixed.emplace_back(std::make_pair(std::move(head), std::move(dep)));
    }
    Graph g;
    ModelOutput out = model.forward(g, ex, fo);
    const Scalar r = output_reward(model, out, ex, lambda, penalty);
    g.backward(scale(exp(out.log_prob), r));
  }
  if (configurations) *configurations = count;
  const auto sampler = model.sampler_params();
  std::vector<Scalar> grad = flatten_grads(sampler);
  model.params().zero_grad();
  return grad;
}

void adadelta_step(Parameter& p, AdadeltaState& state, double rho, double eps, double lr) {
  const std::size_t n = p.value.size();
  if (p.grad.size() != n) throw ShapeError("adadelta_step: gradient size mismatch for " + p.name);
  if (state.sq_grad.empty()) {
    state.sq_grad.assign(n, 0);
    state.sq_update.assign(n, 0);
  }
  if (state.sq_grad.size() != n) throw ShapeError("adadelta_step: state size mismatch for " + p.name);
  for (std::size_t k = 0; k < n; ++k)
    if (!std::isfinite(p.grad[k]))
      throw std::domain_error("adadelta_step: non-finite gradient in parameter " + p.name +
                              " at index " + std::to_string(k));
  for (std::size_t k = 0; k < n; ++k) {
    const double g = p.grad[k];
    const double eg = rho * state.sq_grad[k] + (1 - rho) * g * g;
    const double delta = -std::sqrt(state.sq_update[k] + eps) / std::sqrt(eg + eps) * g;
    state.sq_grad[k] = static_cast<Scalar>(eg);
    state.sq_update[k] = static_cast<Scalar>(rho * state.sq_update[k] + (1 - rho) * delta * delta);
    p.value[k] += static_cast<Scalar>(lr * delta);
  }
}

void Adadelta::step(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) adadelta_step(*p, state_[p->name], rho_, eps_, lr_);
}

const char* phase_name(Phase p) { return p == Phase::kWarmup ? "warmup" : "joint"; }

PhaseSchedule::PhaseSchedule(std::size_t patience, double delta, std::size_t max_warmup_epochs)
    : patience_(patience), delta_(delta), max_warmup_(max_warmup_epochs) {
  if (patience == 0) throw std::invalid_argument("PhaseSchedule: patience must be >= 1");
  if (!(delta >= 0)) throw std::invalid_argument("PhaseSchedule: delta must be >= 0");
}

Phase PhaseSchedule::observe(double dev_loss) {
  ++epochs_;
  if (phase_ == Phase::kJoint) return phase_;
  if (epochs_ == 1) {
    best_ = dev_loss;
  } else {
    const double improvement = (best_ - dev_loss) / std::max(std::abs(best_), 1e-12);
    stalled_ = improvement > delta_ ? 0 : stalled_ + 1;
    best_ = std::min(best_, dev_loss);
  }
  if (stalled_ >= patience_ || (max_warmup_ != 0 && epochs_ >= max_warmup_)) {
    phase_ = Phase::kJoint;
    switched_after_ = epochs_;
  }
  return phase_;
}

Phase train_schedule(std::span<const double> dev_losses, std::size_t patience, double delta,
                     std::size_t max_warmup_epochs) {
  PhaseSchedule s(patience, delta, max_warmup_epochs);
  for (double l : dev_losses) s.observe(l);
  return s.phase();
}

std::vector<Scalar> dropout_mask(std::size_t size, Scalar keep_prob, const RngStream& stream,
                                 bool training) {
  if (!(keep_prob > 0 && keep_prob <= 1))
    throw std::invalid_argument("dropout_mask: keep probability must lie in (0, 1]");
  std::vector<Scalar> mask(size, 1);
  if (!training || keep_prob == 1) return mask;
  const Scalar kept = Scalar(1) / keep_prob;
  for (std::size_t k = 0; k < size; ++k) mask[k] = stream.uniform(k) < double(keep_prob) ? kept : 0;
  return mask;
}

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 0;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0;
}

}  // namespace

EvalResult evaluate(ResanModel& model, std::span<const EncodedExample> data, SelectMode mode,
                    std::uint64_t seed) {
  EvalResult r;
  r.count = data.size();
  if (data.empty()) return r;
  const bool regress = model.config().task == TaskKind::kPairRegress;
  std::vector<double> predicted, gold;
  std::size_t correct = 0, recall_items = 0;
  double head_frac = 0, dep_frac = 0, recall = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const EncodedExample& ex = data[i];
    Graph g;
    ForwardOptions fo;
    fo.mode = mode;
    fo.stream = RngStream(stream_id({seed, i}));
    ModelOutput out = model.forward(g, ex, fo);
    r.loss += task_loss(model, out, ex).loss.item();
    auto logits = out.logits.values();
    if (regress) {
      std::vector<Scalar> prob(logits.begin(), logits.end());
      const Scalar mx = *std::max_element(prob.begin(), prob.end());
      Scalar z = 0;
      for (Scalar& v : prob) z += (v = std::exp(v - mx));
      for (Scalar& v : prob) v /= z;
      const double rating = expected_rating(prob);
      predicted.push_back(rating);
      gold.push_back(ex.rating);
      r.mse += (rating - ex.rating) * (rating - ex.rating);
    } else {
      const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
      correct += static_cast<std::size_t>(best) == ex.label;
    }
    if (!out.samples.empty()) {
      const Selections s = gather_selections(out);
      head_frac += double(std::count(s.head.begin(), s.head.end(), 1)) / double(s.head.size());
      dep_frac += double(std::count(s.dep.begin(), s.dep.end(), 1)) / double(s.dep.size());
      if (!ex.planted.empty()) {
        const auto& z = out.samples[0];
        double hit = 0;
        for (std::size_t pos : ex.planted) hit += z.z_head.at(pos) + z.z_dep.at(pos);
        recall += hit / double(2 * ex.planted.size());
        ++recall_items;
      }
    }
  }
  const double n = double(data.size());
  r.loss /= n;
  r.accuracy = double(correct) / n;
  r.mse /= n;
  r.pearson = regress ? pearson(predicted, gold) : 0;
  r.selection_head = head_frac / n;
  r.selection_dep = dep_frac / n;
  r.planted_recall = recall_items ? recall / double(recall_items) : 0;
  return r;
}

Trainer::Trainer(ResanModel& model, TrainConfig config)
    : model_(model),
      config_(config),
      schedule_(config.patience, config.delta, config.max_warmup_epochs),
      optimizer_(config.rho, config.eps, config.learning_rate),
      sampler_optimizer_(config.rho, config.eps,
                         config.sampler_learning_rate > 0 ? config.sampler_learning_rate
                                                          : config.learning_rate) {
  config_.validate();
}

EpochMetrics Trainer::run_epoch(std::span<const EncodedExample> train,
                                std::span<const EncodedExample> dev) {
  if (train.empty()) throw std::invalid_argument("Trainer: empty training set");
  const auto start = std::chrono::steady_clock::now();
  ++epoch_;
  const bool has_sampler = model_.resan().has_value();
  const Phase phase = has_sampler && (force_joint_ || schedule_.phase() == Phase::kJoint)
                          ? Phase::kJoint
                          : Phase::kWarmup;
  const bool joint = phase == Phase::kJoint;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffler(stream_id({config_.seed, epoch_, 0x5bd1e995}));
  std::shuffle(order.begin(), order.end(), shuffler);

  const auto supervised = model_.supervised_params();
  const auto sampler = model_.sampler_params();
  const auto decayed = model_.decayed_params();
  const std::size_t samples = joint ? config_.samples_per_item : 1;

  EpochMetrics m;
  m.epoch = epoch_;
  m.phase = phase;
  double loss_sum = 0, reward_sum = 0;
  std::size_t draws = 0;
  for (std::size_t begin = 0, step = 0; begin < order.size(); begin += config_.batch_size, ++step) {
    const std::size_t end = std::min(order.size(), begin + config_.batch_size);
    model_.params().zero_grad();
    const Scalar weight = Scalar(1) / Scalar((end - begin) * samples);
    double batch_reward = 0;
    for (std::size_t k = begin; k < end; ++k) {
      const EncodedExample& ex = train[order[k]];
      std::vector<Graph> graphs(samples);
      std::vector<ModelOutput> outs(samples);
      std::vector<TaskLoss> losses(samples);
      std::vector<Scalar> rewards(samples, 0);
      for (std::size_t s = 0; s < samples; ++s) {
        ForwardOptions fo;
        fo.mode = joint ? SelectMode::kSample : SelectMode::kForceAll;
        fo.stream = RngStream(stream_id({config_.seed, epoch_, step, k - begin, s}));
        // Samples of one item share their dropout noise, so reward differences
        // between them come from the selections alone.
        fo.dropout_stream = RngStream(stream_id({config_.seed, epoch_, step, k - begin}));
        fo.training = true;
        fo.keep_prob = static_cast<Scalar>(config_.keep_prob);
        fo.need_log_prob = joint;
        outs[s] = model_.forward(graphs[s], ex, fo);
        losses[s] = task_loss(model_, outs[s], ex);
        if (joint) {
          const Selections sel = gather_selections(outs[s]);
          rewards[s] = reward(losses[s].log_likelihood, sel.head, sel.dep, outs[s].tokens,
                              static_cast<Scalar>(config_.lambda), config_.penalty);
          batch_reward += rewards[s];
        }
      }
      const Scalar reward_total = std::accumulate(rewards.begin(), rewards.end(), Scalar(0));
      for (std::size_t s = 0; s < samples; ++s) {
        Tensor total = losses[s].loss;
        if (joint) {
          Scalar advantage = rewards[s];
          if (config_.baseline == Baseline::kRunningMean && baseline_ready_)
            advantage -= Scalar(baseline_);
          else if (config_.baseline == Baseline::kLeaveOneOut)
            advantage -= (reward_total - rewards[s]) / Scalar(samples - 1);
          total = sub(total, scale(outs[s].log_prob, advantage));
        }
        graphs[s].backward(scale(total, weight));
        loss_sum += losses[s].loss.item();
        ++draws;
      }
    }
    for (Parameter* p : decayed)
      for (std::size_t c = 0; c < p->value.size(); ++c)
        p->grad[c] += static_cast<Scalar>(2 * config_.gamma) * p->value[c];
    model_.mask_embedding_grads();
    optimizer_.step(supervised);
    if (joint) {
      sampler_optimizer_.step(sampler);
      const double mean_r = batch_reward / double((end - begin) * samples);
      reward_sum += batch_reward;
      if (config_.baseline == Baseline::kRunningMean) {
        baseline_ = baseline_ready_ ? config_.baseline_decay * baseline_ + (1 - config_.baseline_decay) * mean_r
                                    : mean_r;
        baseline_ready_ = true;
      }
    }
  }
  model_.params().zero_grad();
  m.train_loss = loss_sum / double(draws) + config_.gamma * l2_value(decayed);
  m.mean_reward = joint ? reward_sum / double(draws) : 0;

  const SelectMode dev_mode = joint ? model_.config().resa.eval_select : SelectMode::kForceAll;
  m.dev = evaluate(model_, dev, dev_mode, stream_id({config_.seed, epoch_, 0xde5}));
  if (has_sampler && !force_joint_) schedule_.observe(m.dev.loss);
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

std::vector<EpochMetrics> Trainer::fit(std::span<const EncodedExample> train,
                                       std::span<const EncodedExample> dev,
                                       const std::function<void(const EpochMetrics&)>& on_epoch) {
  std::vector<EpochMetrics> history;
  for (std::size_t e = 0; e < config_.epochs; ++e) {
    history.push_back(run_epoch(train, dev));
    if (on_epoch) on_epoch(history.back());
  }
  return history;
}

}  // namespace resa
