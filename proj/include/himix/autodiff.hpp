#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "himix/tensor.hpp"

/// Reverse-mode automatic differentiation over dense double tensors.
///
/// A Graph owns every node created during one forward pass. Nodes are appended
/// in creation order, so parents always precede children and backward is a
/// single reverse sweep. Graphs are single-threaded and used once.
namespace himix::ad {

enum class OpKind {
  kLeaf,
  kConstant,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRow,
  kReshape,
  kSoftmax,
  kActivation,
  kReduce,
  kSumAll,
  kLayerNorm,
  kSliceRows,
  kSliceCols,
  kConcat,
  kConcatRows,
  kConcatCols,
  kStack,
  kWindowMean,
  kBce,
  kSoftmaxCrossEntropy,
};

enum class Activation { kRelu, kGelu, kSigmoid };
enum class Reduction { kMean, kMax, kSum };

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  int id() const { return id_; }
  Graph* graph() const { return graph_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  /// Receives the graph, the node's own id and its accumulated output gradient.
  using BackwardFn = std::function<void(Graph&, int, const Tensor&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  /// Leaf that reads `value` in place. The referenced tensor must outlive the graph.
  Var leaf_ref(const Tensor& value, bool requires_grad);

  /// Accumulates d(loss)/d(node) for every node that requires a gradient.
  /// Throws if loss is not a scalar of this graph or backward already ran.
  void backward(Var loss);

  /// Gradient of a node after backward, or nullptr when none was produced.
  const Tensor* grad(Var v) const;
  bool requires_grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  OpKind op(Var v) const;
  std::span<const int> parents(Var v) const;
  std::size_t last_backward_visits() const { return visits_; }

  // Op implementation interface.
  Var record(OpKind op, Tensor value, std::vector<int> parents, BackwardFn fn);
  const Tensor& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Zero-initialised gradient buffer for `id`, or nullptr if it needs none.
  Tensor* grad_buffer(int id);
  void check_owns(Var v) const;

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    OpKind op = OpKind::kConstant;
    std::vector<int> parents;
    bool requires_grad = false;
    bool has_grad = false;
    Tensor grad;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::size_t visits_ = 0;
};

// Linear algebra.
Var matmul(Var a, Var b);
Var transpose(Var a);

// Elementwise, same shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Adds row vector `b` [n] to every row of `a` [m x n].
Var add_row(Var a, Var b);

Var reshape(Var a, Shape shape);

/// Max-subtracted softmax along `axis`.
Var softmax(Var x, std::size_t axis);
/// GELU uses the exact form x * Phi(x) with Phi the standard normal CDF.
Var activation(Activation kind, Var x);
inline Var relu(Var x) { return activation(Activation::kRelu, x); }
inline Var gelu(Var x) { return activation(Activation::kGelu, x); }
inline Var sigmoid(Var x) { return activation(Activation::kSigmoid, x); }

/// Removes `axis`. Max routes the gradient to the first maximal entry.
Var reduce(Reduction kind, Var x, std::size_t axis);
Var sum_all(Var x);

/// Row-wise layer normalization of [m x n] with affine gain and bias [n].
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

Var slice_rows(Var a, std::size_t start, std::size_t count);
Var slice_cols(Var a, std::size_t start, std::size_t count);
/// Concatenates rank-1 tensors.
Var concat(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// Stacks equally shaped tensors along a new leading axis.
Var stack(std::span<const Var> parts);

/// Averages non-overlapping window x window regions of a row-major
/// [grid_h*grid_w x d] token grid. Output [M x d], windows in row-major order.
Var window_mean(Var tokens, std::size_t grid_h, std::size_t grid_w, std::size_t window);

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7].
Var bce(Var probs, std::span<const double> labels);

/// -log softmax(logits)[target] for a rank-1 logit vector.
Var softmax_cross_entropy(Var logits, std::size_t target);

inline constexpr double kProbClamp = 1e-7;

}  // namespace himix::ad
