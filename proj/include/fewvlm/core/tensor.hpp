// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fewvlm {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Graph;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  const Graph* graph = nullptr;  // recording graph, null for leaves
  std::int64_t node = -1;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

/// Handle to a dense row-major f64 array. Copies share storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Mutable access is for leaves only (parameters, optimizer updates).
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double at(std::size_t i) const { return impl_->data.at(i); }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy detached from any graph.
  Tensor clone(bool requires_grad = false) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& shared() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend class Graph;
  friend Tensor make_tensor(Shape, std::vector<double>, bool);
  std::shared_ptr<detail::TensorImpl> impl_;
};

enum class OpKind : std::uint8_t {
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kTranspose,
  kReshape,
  kConcat,
  kSlice,
  kEmbedding,
  kSoftmax,
  kLogSoftmax,
  kLayerNorm,
  kTanh,
  kGelu,
  kExp,
  kMean,
  kSum,
  kCrossEntropy,
  kCosineSimilarity,
};

std::string_view op_name(OpKind kind);

/// Define-by-run tape. While a Graph is alive and active on a thread, ops
/// whose inputs require grad append a node; nodes are stored in insertion
/// order, which is a topological order by construction.
class Graph {
 public:
  struct Node {
    OpKind kind;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    // Reads output->grad and accumulates into inputs' grads.
    std::function<void(Node&)> backward;
  };

  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Reverse sweep from a scalar loss that was recorded on this graph.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }

  /// Graph currently recording on this thread, or null (inference mode).
  static Graph* active();

  /// Node indices in the order the last backward() visited them.
  const std::vector<std::size_t>& visit_log() const { return visit_log_; }

  Tensor record(OpKind kind, std::vector<Tensor> inputs, Shape shape, std::vector<double> values,
                std::function<void(Node&)> backward);

 private:
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_log_;
  Graph* previous_ = nullptr;
};

/// Suspends recording for the current scope (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Graph* saved_;
};

// Forward ops. Shapes are checked and ShapeError names the op on mismatch.

/// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise with broadcasting of `b` when b has the same shape, is a
/// scalar ([1]), or matches the last extent of `a` (row broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Rank-2 transpose.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
/// Joins along `axis`; all other extents must agree.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Rows of `table` [V,d] selected by `ids` -> [n,d].
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// Along the last axis, max-subtracted.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
/// Normalizes the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor tanh(const Tensor& a);
/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
Tensor gelu(const Tensor& a);
Tensor exp(const Tensor& a);
/// Reductions over all elements -> [1].
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
/// Sum over rows of -log softmax(logits[t])[targets[t]] -> [1].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
/// Pairwise cosines of the rows of a [m,d] and b [n,d] -> [m,n]. Rank-1
/// inputs are treated as single rows.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-12);

}  // namespace fewvlm
