#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resa/autodiff.hpp"
#include "resa/parameters.hpp"

namespace resa {

/// Feature-wise (vector) alignment scores, or one scalar score per token pair
/// broadcast across features.
enum class AttentionMode { kMultiDim, kVanilla };

enum class Direction { kForward, kBackward };

/// n x n additive mask over {0, -inf}. Entry (i, j) gates the attention of
/// head token j to dependent token i.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(std::size_t n, Scalar fill = kNegInf) : n_(n), entries_(n * n, fill) {}

  std::size_t size() const { return n_; }
  Scalar at(std::size_t dep, std::size_t head) const { return entries_[dep * n_ + head]; }
  bool open(std::size_t dep, std::size_t head) const { return !is_masked(at(dep, head)); }
  void set_open(std::size_t dep, std::size_t head, bool open) {
    entries_[dep * n_ + head] = open ? Scalar(0) : kNegInf;
  }
  std::size_t open_count() const;
  const std::vector<Scalar>& entries() const { return entries_; }

  /// Entry-wise sum: a pair stays open only if open in both.
  AttentionMask operator+(const AttentionMask& other) const;
  AttentionMask transposed() const;

 private:
  std::size_t n_ = 0;
  std::vector<Scalar> entries_;
};

/// Forward: open iff dep < head. Backward: open iff dep > head. Diagonal closed.
AttentionMask positional_mask(std::size_t n, Direction direction);
/// Everything open except the diagonal.
AttentionMask diagonal_mask(std::size_t n);

/// Weights of c * tanh((W1 x_i + W2 x_j + b1) / c). W1 acts on the dependent
/// x_i, W2 on the head (or query) x_j. Width of the score is d in multi-dim
/// mode and 1 in vanilla mode.
struct MaskedAttentionParams {
  Parameter* w_dep = nullptr;
  Parameter* w_head = nullptr;
  Parameter* bias = nullptr;
  Scalar c = 5.0;

  static MaskedAttentionParams create(ParameterSet& set, const std::string& prefix, std::size_t d,
                                      AttentionMode mode, Scalar c = 5.0);
  AttentionMode mode() const;
  std::size_t score_width() const { return w_dep->shape.rows; }
};

/// Query-free scores c * tanh((W1 x_i + b1) / c).
struct Source2TokenParams {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  Scalar c = 5.0;

  static Source2TokenParams create(ParameterSet& set, const std::string& prefix, std::size_t d,
                                   AttentionMode mode, Scalar c = 5.0);
};

/// F = sigmoid(Wf [x; s] + bf); u = F * x + (1 - F) * s.
struct FusionGateParams {
  Parameter* weight = nullptr;  // d x 2d
  Parameter* bias = nullptr;    // 1 x d

  static FusionGateParams create(ParameterSet& set, const std::string& prefix, std::size_t d);
};

/// Attention of a single query over a sequence; returns 1 x d.
Tensor vanilla_attention(const Tensor& x, const Tensor& query, const MaskedAttentionParams& params);

/// Compatibility of head x_j to dependent x_i with additive mask entry; 1 x k.
Tensor masked_compatibility(const Tensor& x_dep, const Tensor& x_head,
                            const MaskedAttentionParams& params, Scalar mask_entry);

struct AttentionResult {
  Tensor context;  // n x d, row j is s_j
  // Row j holds P^j averaged over features (n x n), filled on request.
  std::vector<Scalar> attention;
};

/// Dense masked self-attention over every (dependent, head) pair. Positions at
/// or beyond valid_length are padding: they never serve as dependents and their
/// head rows are zero. A head with no open dependent gets the uniform mean.
AttentionResult masked_self_attention(const Tensor& x, const AttentionMask& mask,
                                      const MaskedAttentionParams& params,
                                      std::size_t valid_length = SIZE_MAX,
                                      bool keep_attention = false);

struct GateResult {
  Tensor output;  // u
  Tensor gate;    // F
};

GateResult fusion_gate(const Tensor& x, const Tensor& s, const FusionGateParams& params);

Tensor directional_self_attention(const Tensor& x, Direction direction,
                                  const MaskedAttentionParams& attention,
                                  const FusionGateParams& gate);

/// Compresses a sequence into 1 x d with query-free, per-feature softmax over
/// the first valid_length tokens.
Tensor source2token(const Tensor& x, const Source2TokenParams& params,
                    std::size_t valid_length = SIZE_MAX);

/// Which dependents each head may attend to. Heads with an empty list fall back
/// to the uniform mean over all dependents.
struct SelectionPlan {
  std::size_t n = 0;
  std::vector<std::vector<std::uint32_t>> dependents_of_head;

  static SelectionPlan from_mask(const AttentionMask& mask);
  std::size_t pair_count() const;
};

struct SparseAttentionResult {
  Tensor context;
  std::size_t pair_evaluations = 0;  // compatibility scores actually computed
  std::vector<Scalar> attention;     // as in AttentionResult
};

/// Production path: evaluates compatibilities only for planned pairs.
SparseAttentionResult sparse_masked_attention(const Tensor& x, const SelectionPlan& plan,
                                              const MaskedAttentionParams& params,
                                              bool keep_attention = false);

}  // namespace resa
