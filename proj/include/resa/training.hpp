#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "resa/model.hpp"

namespace resa {

/// Which selection vectors enter the penalty sum.
enum class PenaltyCount { kBoth, kHeadOnly };

/// Reward baseline subtracted before the policy-gradient step. kRunningMean
/// tracks an exponential average of batch rewards; kLeaveOneOut uses, for each
/// of samples_per_item draws on one item, the mean reward of the other draws.
enum class Baseline { kNone, kRunningMean, kLeaveOneOut };

struct TrainConfig {
  double gamma = 5e-5;     // L2 weight on supervised arrays (embeddings excluded)
  double lambda = 0.01;    // selection penalty
  double keep_prob = 0.8;  // dropout
  std::size_t patience = 2;
  double delta = 1e-3;
  std::size_t max_warmup_epochs = 0;  // 0 means no cap
  double rho = 0.95;
  double eps = 1e-6;
  double learning_rate = 1.0;
  double sampler_learning_rate = 0;  // 0 means learning_rate
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  Baseline baseline = Baseline::kNone;
  double baseline_decay = 0.9;
  PenaltyCount penalty = PenaltyCount::kBoth;
  std::size_t samples_per_item = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// ---- losses and reward ----------------------------------------------------

/// Sum of squared entries of the given arrays, recorded on g.
Tensor l2_penalty(Graph& g, const std::vector<Parameter*>& params);
Scalar l2_value(const std::vector<Parameter*>& params);

/// -log softmax(logits)[label] + gamma * ||params||^2.
Tensor supervised_loss(const Tensor& logits, std::size_t label,
                       const std::vector<Parameter*>& decayed = {}, Scalar gamma = 0);
/// KL(target || softmax(logits)) + gamma * ||params||^2.
Tensor supervised_loss(const Tensor& logits, std::span<const Scalar> target,
                       const std::vector<Parameter*>& decayed = {}, Scalar gamma = 0);

/// R = log_likelihood - lambda * selected / n.
Scalar reward(Scalar log_likelihood, std::span<const unsigned char> z_head,
              std::span<const unsigned char> z_dep, std::size_t n, Scalar lambda,
              PenaltyCount count = PenaltyCount::kBoth);

/// Loss without regularization and log p(y*) for one forward output.
struct TaskLoss {
  Tensor loss;
  Scalar log_likelihood = 0;
};
TaskLoss task_loss(const ResanModel& model, const ModelOutput& out, const EncodedExample& ex);

// ---- policy gradient ------------------------------------------------------

struct PolicyOptions {
  Scalar lambda = 0.01;
  PenaltyCount penalty = PenaltyCount::kBoth;
  std::size_t samples_per_item = 1;
  RngStream stream;
};

/// One sampled estimate R * grad log pi(z), flattened over model.sampler_params().
struct PolicySample {
  std::vector<Scalar> gradient;
  Scalar reward = 0;
};
PolicySample policy_gradient_sample(ResanModel& model, const EncodedExample& ex, Scalar lambda,
                                    const RngStream& stream,
                                    PenaltyCount penalty = PenaltyCount::kBoth);

/// Mean of samples_per_item estimates per item over the batch: an ascent
/// direction on the expected reward.
std::vector<Scalar> reinforce_gradient(ResanModel& model, std::span<const EncodedExample> batch,
                                       const PolicyOptions& options);

/// Exact gradient of E[R] by enumerating every selection of every sentence.
/// Throws if more than kMaxEnumeratedBits selection bits are involved.
inline constexpr std::size_t kMaxEnumeratedBits = 12;
std::vector<Scalar> exact_policy_gradient(ResanModel& model, const EncodedExample& ex, Scalar lambda,
                                          PenaltyCount penalty = PenaltyCount::kBoth,
                                          std::size_t* configurations = nullptr);

// ---- optimizer ------------------------------------------------------------

struct AdadeltaState {
  std::vector<Scalar> sq_grad;
  std::vector<Scalar> sq_update;
};

/// One Adadelta update of p from p.grad. Throws on a non-finite gradient.
void adadelta_step(Parameter& p, AdadeltaState& state, double rho, double eps, double lr = 1.0);

class Adadelta {
 public:
  Adadelta(double rho = 0.95, double eps = 1e-6, double lr = 1.0) : rho_(rho), eps_(eps), lr_(lr) {}
  void step(const std::vector<Parameter*>& params);
  const AdadeltaState& state(const std::string& name) const { return state_.at(name); }

 private:
  double rho_, eps_, lr_;
  std::map<std::string, AdadeltaState> state_;
};

// ---- schedule and dropout -------------------------------------------------

enum class Phase { kWarmup, kJoint };
const char* phase_name(Phase p);

/// Warmup until the dev loss fails to improve on the best value so far by a
/// relative margin above delta for `patience` consecutive epochs. Joint is
/// absorbing.
class PhaseSchedule {
 public:
  PhaseSchedule(std::size_t patience = 2, double delta = 1e-3, std::size_t max_warmup_epochs = 0);

  Phase phase() const { return phase_; }
  /// Records the dev loss of the epoch just finished; returns the phase for the next.
  Phase observe(double dev_loss);
  std::size_t epochs_seen() const { return epochs_; }
  /// 1-based epoch after which the switch fired.
  std::optional<std::size_t> switched_after() const { return switched_after_; }

 private:
  std::size_t patience_;
  double delta_;
  std::size_t max_warmup_;
  Phase phase_ = Phase::kWarmup;
  std::size_t epochs_ = 0;
  std::size_t stalled_ = 0;
  double best_ = 0;
  std::optional<std::size_t> switched_after_;
};

/// Phase after replaying a dev-loss history.
Phase train_schedule(std::span<const double> dev_losses, std::size_t patience = 2,
                     double delta = 1e-3, std::size_t max_warmup_epochs = 0);

/// Inverted dropout: Bernoulli(keep)/keep in training, ones otherwise.
std::vector<Scalar> dropout_mask(std::size_t size, Scalar keep_prob, const RngStream& stream,
                                 bool training);

// ---- evaluation and training loop -----------------------------------------

struct EvalResult {
  double loss = 0;      // mean task loss
  double accuracy = 0;  // classification
  double mse = 0;       // regression
  double pearson = 0;   // regression
  double selection_head = 0;
  double selection_dep = 0;
  double planted_recall = 0;  // mean over head and dep samplers, examples with planted tokens
  std::size_t count = 0;

  double selection_fraction() const { return 0.5 * (selection_head + selection_dep); }
};

EvalResult evaluate(ResanModel& model, std::span<const EncodedExample> data, SelectMode mode,
                    std::uint64_t seed = 0);

struct EpochMetrics {
  std::size_t epoch = 0;
  Phase phase = Phase::kWarmup;
  double train_loss = 0;
  double mean_reward = 0;
  EvalResult dev;
  double seconds = 0;
};

class Trainer {
 public:
  Trainer(ResanModel& model, TrainConfig config);

  /// Trains one epoch in the current phase, evaluates on dev and advances the schedule.
  EpochMetrics run_epoch(std::span<const EncodedExample> train, std::span<const EncodedExample> dev);
  std::vector<EpochMetrics> fit(std::span<const EncodedExample> train,
                                std::span<const EncodedExample> dev,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {});

  Phase phase() const { return schedule_.phase(); }
  const PhaseSchedule& schedule() const { return schedule_; }
  /// Forces the phase, e.g. to skip warmup.
  void set_phase_joint() { force_joint_ = true; }

 private:
  ResanModel& model_;
  TrainConfig config_;
  PhaseSchedule schedule_;
  Adadelta optimizer_;
  Adadelta sampler_optimizer_;
  double baseline_ = 0;
  bool baseline_ready_ = false;
  bool force_joint_ = false;
  std::size_t epoch_ = 0;
};

}  // namespace resa
