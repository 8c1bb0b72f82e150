#pragma once

#include <span>
#include <string>
#include <vector>

#include "resa/autodiff.hpp"
#include "resa/parameters.hpp"
#include "resa/rng.hpp"

namespace resa {

/// Element-wise nonlinearity inside the selection gate.
enum class Activation { kTanh, kRelu };

enum class SelectMode { kSample, kForceAll, kThreshold };

/// Selection probabilities are clamped to [kProbClamp, 1 - kProbClamp] before
/// taking logs.
inline constexpr Scalar kProbClamp = static_cast<Scalar>(1e-6);

using Selection = std::vector<unsigned char>;

/// Parameters of one token sampler: p_i = sigmoid(w . act(W_R h_i + b_R) + b).
struct RssParams {
  Parameter* w_r = nullptr;  // dh x 3d
  Parameter* b_r = nullptr;  // 1 x dh
  Parameter* w = nullptr;    // 1 x dh
  Parameter* b = nullptr;    // 1 x 1
  Activation activation = Activation::kTanh;

  static RssParams create(ParameterSet& set, const std::string& prefix, std::size_t d,
                          std::size_t hidden, Activation activation = Activation::kTanh);
  std::size_t input_width() const { return w_r->shape.cols; }
};

/// h_i = [x_i; mean(x); x_i * mean(x)], mean over positions with a nonzero
/// length mask entry (all positions when the mask is empty). n x 3d.
Tensor rss_features(const Tensor& x, std::span<const unsigned char> length_mask = {});

/// Per-token selection probabilities, n x 1.
Tensor rss_probabilities(const Tensor& h, const RssParams& params);

/// Independent Bernoulli draws, one per position, each from its own counter in
/// the stream so the result does not depend on evaluation order.
Selection rss_sample(std::span<const Scalar> p, const RngStream& stream, SelectMode mode);

/// sum_i z_i log p_i + (1 - z_i) log(1 - p_i) with clamped p; 1 x 1.
Tensor rss_log_prob(std::span<const unsigned char> z, const Tensor& p);
Scalar rss_log_prob_value(std::span<const unsigned char> z, std::span<const Scalar> p);

/// Recurrent left-to-right sampler used as the sequential baseline.
struct IterativeSamplerParams {
  Parameter* w_p = nullptr;   // dh x (state + d)
  Parameter* b_p = nullptr;   // 1 x dh
  Parameter* w = nullptr;     // 1 x dh
  Parameter* b = nullptr;     // 1 x 1
  Parameter* w_hh = nullptr;  // state x state
  Parameter* w_xh = nullptr;  // state x (d + 1)
  Parameter* b_h = nullptr;   // 1 x state
  Activation activation = Activation::kTanh;

  static IterativeSamplerParams create(ParameterSet& set, const std::string& prefix, std::size_t d,
                                       std::size_t state, std::size_t hidden,
                                       Activation activation = Activation::kTanh);
  std::size_t state_width() const { return w_hh->shape.rows; }
};

struct IterativeSample {
  Selection z;
  std::vector<Scalar> p;
  Tensor log_prob;  // 1 x 1, differentiable in the sampler parameters
};

/// p_i = sigmoid(w . act(W_p [h_{i-1}; x_i] + b_p) + b), z_i ~ p_i,
/// h_i = tanh(W_hh h_{i-1} + W_xh [x_i; z_i] + b_h), h_0 = 0.
IterativeSample iterative_sample(const Tensor& x, const IterativeSamplerParams& params,
                                 const RngStream& stream, SelectMode mode = SelectMode::kSample);

std::size_t parameter_count(const RssParams& p);
std::size_t parameter_count(const IterativeSamplerParams& p);

}  // namespace resa
