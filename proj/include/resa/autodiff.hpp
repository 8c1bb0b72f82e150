#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace resa {

#ifdef RESA_USE_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

// Additive stand-in for -inf in attention masks. Softmax treats any entry at or
// below kMaskedThreshold as switched off and assigns it probability exactly 0.
inline constexpr Scalar kNegInf = static_cast<Scalar>(-1e30);
inline constexpr Scalar kMaskedThreshold = static_cast<Scalar>(-1e29);

inline bool is_masked(Scalar v) { return v <= kMaskedThreshold; }

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major rank-2 extent. Vectors are 1 x d rows, scalars are 1 x 1.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

struct Parameter;
class Graph;

/// Handle to a node recorded in a Graph. Cheap to copy; the graph owns storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const;
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Shape& shape() const;
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
  std::size_t size() const { return shape().size(); }

  std::span<const Scalar> values() const;
  Scalar at(std::size_t r, std::size_t c) const;
  Scalar item() const;

  /// Gradient after Graph::backward; zeros if the node received none.
  std::vector<Scalar> grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Forward values are computed eagerly when a primitive is
/// applied; backward() replays the tape in reverse recording order.
class Graph {
 public:
  // Receives the graph and the id of the node being differentiated. The node's
  // gradient is populated; implementations accumulate into their inputs.
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor constant(Shape shape, std::vector<Scalar> values);
  Tensor constant(Shape shape, Scalar fill);
  Tensor scalar(Scalar v) { return constant({1, 1}, std::vector<Scalar>{v}); }

  /// Leaf bound to a trainable parameter; backward() accumulates into param.grad.
  Tensor param(Parameter& p);

  /// Records a primitive application. `backward` may be empty for constants.
  Tensor record(std::string_view kind, Shape shape, std::vector<Scalar> value,
                std::vector<std::size_t> inputs, BackwardFn backward);

  /// Reverse sweep from a 1 x 1 loss; accumulates into bound parameters.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

  const Shape& shape(std::size_t id) const { return nodes_.at(id).shape; }
  std::span<const Scalar> value(std::size_t id) const { return nodes_[id].value; }
  std::span<const Scalar> grad(std::size_t id) const { return nodes_[id].grad; }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  std::string_view kind(std::size_t id) const { return nodes_[id].kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  /// Gradient buffer of an input node, allocated zeroed on first touch.
  std::span<Scalar> grad_buffer(std::size_t id);

 private:
  struct Node {
    std::string_view kind;
    Shape shape;
    std::vector<Scalar> value;
    std::vector<Scalar> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
};

void check_same_graph(const Tensor& a, const Tensor& b);

// ---- primitives -----------------------------------------------------------
//
// Broadcasting (add, sub, mul): each extent must match or be 1 on one side;
// the result takes the larger extent. This covers row vectors against
// matrices, column vectors against matrices and 1 x 1 scalars.

Tensor matmul(const Tensor& a, const Tensor& b);  // (m x k)(k x n)
/// a * w^T for a weight stored out x in: (m x k)(n x k)^T -> m x n.
Tensor matmul_nt(const Tensor& a, const Tensor& w);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
Tensor concat_cols(const Tensor& a, const Tensor& b);  // feature axis
Tensor concat_rows(std::span<const Tensor> parts);     // sequence axis
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor transpose(const Tensor& a);
Tensor broadcast_rows(const Tensor& row, std::size_t n);  // 1 x d -> n x d

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor clamp(const Tensor& a, Scalar lo, Scalar hi);  // zero gradient outside

Tensor sum(const Tensor& a);       // -> 1 x 1
Tensor sum_rows(const Tensor& a);  // reduce over rows -> 1 x cols
Tensor pick(const Tensor& a, std::size_t r, std::size_t c);  // -> 1 x 1

/// Row-wise softmax of scores + mask. Entries whose mask is the -inf sentinel
/// get probability 0; a row with every entry masked becomes uniform. The mask
/// is a constant of the same shape as scores, or a single row broadcast.
Tensor masked_softmax_rows(const Tensor& scores, std::span<const Scalar> mask);
Tensor softmax_rows(const Tensor& scores);
Tensor log_softmax_rows(const Tensor& scores);

/// Mean over rows whose length_mask entry is nonzero. Throws if none are.
Tensor mean_pool(const Tensor& seq, std::span<const unsigned char> length_mask);

/// Rows of a parameter table, e.g. word embeddings. Gradients scatter back.
Tensor gather_rows(Graph& g, Parameter& table, std::span<const std::size_t> rows);

}  // namespace resa
