// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/core/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fewvlm {

namespace {

thread_local Graph* g_active = nullptr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(std::string_view op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

std::string two_shapes(const Tensor& a, const Tensor& b) {
  return shape_str(a.shape()) + " vs " + shape_str(b.shape());
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (g_active == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

Tensor finish(OpKind kind, std::vector<Tensor> inputs, Shape shape, std::vector<double> values,
              bool record, std::function<void(Graph::Node&)> backward) {
  if (record) return g_active->record(kind, std::move(inputs), std::move(shape), std::move(values), std::move(backward));
  return Tensor::from(std::move(shape), std::move(values));
}

// Returns grad buffer of input i if it participates in differentiation.
double* input_grad(Graph::Node& n, std::size_t i) {
  auto& in = *n.inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.ensure_grad().data();
}

enum class Broadcast { kSame, kScalar, kRow };

Broadcast broadcast_kind(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1 && b.rank() <= 1) return Broadcast::kScalar;
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) return Broadcast::kRow;
  shape_fail(op, "cannot broadcast " + two_shapes(a, b));
}

inline std::size_t bidx(Broadcast k, std::size_t i, std::size_t row) {
  switch (k) {
    case Broadcast::kSame: return i;
    case Broadcast::kScalar: return 0;
    case Broadcast::kRow: return i % row;
  }
  return i;
}

Tensor elementwise_binary(OpKind kind, const Tensor& a, const Tensor& b) {
  const std::string_view name = op_name(kind);
  const Broadcast bk = broadcast_kind(name, a, b);
  const std::size_t n = a.numel();
  const std::size_t row = b.numel();
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double y = bd[bidx(bk, i, row)];
    switch (kind) {
      case OpKind::kAdd: out[i] = ad[i] + y; break;
      case OpKind::kSub: out[i] = ad[i] - y; break;
      default: out[i] = ad[i] * y; break;
    }
  }
  const bool rec = wants_grad({&a, &b});
  return finish(kind, {a, b}, a.shape(), std::move(out), rec, [kind, bk, n, row](Graph::Node& node) {
    const double* g = node.output->grad.data();
    const double* av = node.inputs[0]->data.data();
    const double* bv = node.inputs[1]->data.data();
    if (double* ga = input_grad(node, 0)) {
      for (std::size_t i = 0; i < n; ++i)
        ga[i] += kind == OpKind::kMul ? g[i] * bv[bidx(bk, i, row)] : g[i];
    }
    if (double* gb = input_grad(node, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = bidx(bk, i, row);
        switch (kind) {
          case OpKind::kAdd: gb[j] += g[i]; break;
          case OpKind::kSub: gb[j] -= g[i]; break;
          default: gb[j] += g[i] * av[i]; break;
        }
      }
    }
  });
}

template <class F, class D>
Tensor elementwise_unary(OpKind kind, const Tensor& a, F f, D dfdx_from_xy) {
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i]);
  return finish(kind, {a}, a.shape(), std::move(out), wants_grad({&a}), [n, dfdx_from_xy](Graph::Node& node) {
    double* ga = input_grad(node, 0);
    if (ga == nullptr) return;
    const double* g = node.output->grad.data();
    const double* x = node.inputs[0]->data.data();
    const double* y = node.output->data.data();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * dfdx_from_xy(x[i], y[i]);
  });
}

std::size_t last_dim(std::string_view op, const Tensor& a) {
  if (a.rank() == 0) shape_fail(op, "needs rank >= 1, got " + shape_str(a.shape()));
  return a.shape().back();
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kTanh: return "tanh";
    case OpKind::kGelu: return "gelu";
    case OpKind::kExp: return "exp";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kCosineSimilarity: return "cosine_similarity";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t e : shape)
    if (e == 0) throw ShapeError("tensor: zero extent in " + shape_str(shape));
  if (numel_of(shape) != values.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " needs " + std::to_string(numel_of(shape)) +
                     " values, got " + std::to_string(values.size()));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return make_tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return make_tensor({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) throw ShapeError("at: rank-2 access on " + shape_str(shape()));
  return impl_->data.at(r * dim(1) + c);
}

Tensor Tensor::clone(bool requires_grad) const { return make_tensor(shape(), impl_->data, requires_grad); }

// ---------------------------------------------------------------------------
// Graph

Graph::Graph() : previous_(g_active) { g_active = this; }

Graph::~Graph() { g_active = previous_; }

Graph* Graph::active() { return g_active; }

Tensor Graph::record(OpKind kind, std::vector<Tensor> inputs, Shape shape, std::vector<double> values,
                     std::function<void(Node&)> backward) {
  Tensor out = make_tensor(std::move(shape), std::move(values), true);
  out.impl_->graph = this;
  out.impl_->node = static_cast<std::int64_t>(nodes_.size());
  Node node{kind, {}, out.impl_, std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) node.inputs.push_back(t.impl_);
  nodes_.push_back(std::move(node));
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  if (loss.impl()->graph != this || loss.impl()->node < 0)
    throw std::logic_error("backward: loss was not recorded on this graph");
  loss.impl()->ensure_grad()[0] += 1.0;
  visit_log_.clear();
  for (std::int64_t i = loss.impl()->node; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.output->grad.empty()) continue;
    visit_log_.push_back(static_cast<std::size_t>(i));
    n.backward(n);
  }
}

NoGradGuard::NoGradGuard() : saved_(g_active) { g_active = nullptr; }

NoGradGuard::~NoGradGuard() { g_active = saved_; }

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail("matmul", two_shapes(a, b));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return finish(OpKind::kMatmul, {a, b}, {m, n}, std::move(out), wants_grad({&a, &b}), [m, k, n](Graph::Node& node) {
    ConstMap g(node.output->grad.data(), m, n);
    if (double* ga = input_grad(node, 0))
      MutMap(ga, m, k).noalias() += g * ConstMap(node.inputs[1]->data.data(), k, n).transpose();
    if (double* gb = input_grad(node, 1))
      MutMap(gb, k, n).noalias() += ConstMap(node.inputs[0]->data.data(), m, k).transpose() * g;
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise_binary(OpKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise_binary(OpKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise_binary(OpKind::kMul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  const std::size_t n = a.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return finish(OpKind::kScale, {a}, a.shape(), std::move(out), wants_grad({&a}), [n, factor](Graph::Node& node) {
    if (double* ga = input_grad(node, 0)) {
      const double* g = node.output->grad.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += factor * g[i];
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) shape_fail("transpose", "needs rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), n, m) = ConstMap(a.data().data(), m, n).transpose();
  return finish(OpKind::kTranspose, {a}, {n, m}, std::move(out), wants_grad({&a}), [m, n](Graph::Node& node) {
    if (double* ga = input_grad(node, 0))
      MutMap(ga, m, n) += ConstMap(node.output->grad.data(), n, m).transpose();
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) shape_fail("reshape", shape_str(a.shape()) + " -> " + shape_str(shape));
  const std::size_t n = a.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  return finish(OpKind::kReshape, {a}, std::move(shape), std::move(out), wants_grad({&a}), [n](Graph::Node& node) {
    if (double* ga = input_grad(node, 0)) {
      const double* g = node.output->grad.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) shape_fail("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) shape_fail("concat", "rank mismatch " + shape_str(ref) + " vs " + shape_str(p.shape()));
    for (std::size_t d = 0; d < ref.size(); ++d)
      if (d != axis && p.dim(d) != ref[d]) shape_fail("concat", "extent mismatch " + shape_str(ref) + " vs " + shape_str(p.shape()));
    extents.push_back(p.dim(axis));
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  const std::size_t total = out_shape[axis];
  std::vector<double> out(numel_of(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const std::size_t block = extents[p] * inner;
      std::copy_n(parts[p].data().data() + o * block, block, out.data() + (o * total + off) * inner);
      off += extents[p];
    }
  }
  bool rec = false;
  for (const auto& p : parts) rec = rec || wants_grad({&p});
  return finish(OpKind::kConcat, parts, std::move(out_shape), std::move(out), rec,
                [extents, outer, inner, total](Graph::Node& node) {
                  const double* g = node.output->grad.data();
                  std::size_t off = 0;
                  for (std::size_t p = 0; p < extents.size(); ++p) {
                    const std::size_t block = extents[p] * inner;
                    if (double* gp = input_grad(node, p)) {
                      for (std::size_t o = 0; o < outer; ++o) {
                        const double* src = g + (o * total + off) * inner;
                        for (std::size_t i = 0; i < block; ++i) gp[o * block + i] += src[i];
                      }
                    }
                    off += extents[p];
                  }
                });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank() || begin >= end || end > a.dim(axis))
    shape_fail("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                            std::to_string(axis) + " of " + shape_str(a.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const std::size_t full = a.dim(axis), len = end - begin;
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.data().data() + (o * full + begin) * inner, len * inner, out.data() + o * len * inner);
  return finish(OpKind::kSlice, {a}, std::move(out_shape), std::move(out), wants_grad({&a}),
                [outer, inner, full, begin, len](Graph::Node& node) {
                  double* ga = input_grad(node, 0);
                  if (ga == nullptr) return;
                  const double* g = node.output->grad.data();
                  for (std::size_t o = 0; o < outer; ++o) {
                    double* dst = ga + (o * full + begin) * inner;
                    const double* src = g + o * len * inner;
                    for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                  }
                });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) shape_fail("embedding", "table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) shape_fail("embedding", "empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab)
      shape_fail("embedding", "id " + std::to_string(rows[i]) + " outside table " + shape_str(table.shape()));
    std::copy_n(table.data().data() + rows[i] * d, d, out.data() + i * d);
  }
  const std::size_t n = rows.size();
  return finish(OpKind::kEmbedding, {table}, {n, d}, std::move(out), wants_grad({&table}),
                [rows = std::move(rows), d](Graph::Node& node) {
                  double* gt = input_grad(node, 0);
                  if (gt == nullptr) return;
                  const double* g = node.output->grad.data();
                  for (std::size_t i = 0; i < rows.size(); ++i)
                    for (std::size_t j = 0; j < d; ++j) gt[rows[i] * d + j] += g[i * d + j];
                });
}

Tensor softmax(const Tensor& a) {
  const std::size_t d = last_dim("softmax", a);
  const std::size_t rows = a.numel() / d;
  std::vector<double> out(a.numel());
  const double* x = a.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    double* yr = out.data() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < d; ++j) yr[j] /= z;
  }
  return finish(OpKind::kSoftmax, {a}, a.shape(), std::move(out), wants_grad({&a}), [rows, d](Graph::Node& node) {
    double* ga = input_grad(node, 0);
    if (ga == nullptr) return;
    const double* g = node.output->grad.data();
    const double* y = node.output->data.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
      for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t d = last_dim("log_softmax", a);
  const std::size_t rows = a.numel() / d;
  std::vector<double> out(a.numel());
  const double* x = a.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] - lse;
  }
  return finish(OpKind::kLogSoftmax, {a}, a.shape(), std::move(out), wants_grad({&a}), [rows, d](Graph::Node& node) {
    double* ga = input_grad(node, 0);
    if (ga == nullptr) return;
    const double* g = node.output->grad.data();
    const double* y = node.output->data.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < d; ++j) gs += g[r * d + j];
      for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += g[r * d + j] - std::exp(y[r * d + j]) * gs;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = last_dim("layer_norm", x);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    shape_fail("layer_norm", "x " + shape_str(x.shape()) + " gain " + shape_str(gain.shape()) + " bias " +
                                 shape_str(bias.shape()));
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const double* xv = x.data().data();
  const double* gv = gain.data().data();
  const double* bv = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return finish(OpKind::kLayerNorm, {x, gain, bias}, x.shape(), std::move(out), wants_grad({&x, &gain, &bias}),
                [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph::Node& node) {
                  const double* g = node.output->grad.data();
                  const double* gv = node.inputs[1]->data.data();
                  if (double* gg = input_grad(node, 1))
                    for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += g[i] * xhat[i];
                  if (double* gb = input_grad(node, 2))
                    for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += g[i];
                  double* gx = input_grad(node, 0);
                  if (gx == nullptr) return;
                  const double inv_d = 1.0 / static_cast<double>(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dh = g[r * d + j] * gv[j];
                      m1 += dh;
                      m2 += dh * xhat[r * d + j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dh = g[r * d + j] * gv[j];
                      gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                    }
                  }
                });
}

Tensor tanh(const Tensor& a) {
  return elementwise_unary(
      OpKind::kTanh, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return elementwise_unary(
      OpKind::kGelu, a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); });
}

Tensor exp(const Tensor& a) {
  return elementwise_unary(
      OpKind::kExp, a, [](double x) { return std::exp(std::min(x, 700.0)); },
      [](double x, double y) { return x > 700.0 ? 0.0 : y; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const std::size_t n = a.numel();
  return finish(OpKind::kSum, {a}, {1}, {s}, wants_grad({&a}), [n](Graph::Node& node) {
    if (double* ga = input_grad(node, 0)) {
      const double g = node.output->grad[0];
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    }
  });
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const std::size_t n = a.numel();
  return finish(OpKind::kMean, {a}, {1}, {s / static_cast<double>(n)}, wants_grad({&a}), [n](Graph::Node& node) {
    if (double* ga = input_grad(node, 0)) {
      const double g = node.output->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    shape_fail("cross_entropy", "logits " + shape_str(logits.shape()) + " with " + std::to_string(targets.size()) + " targets");
  const std::size_t rows = logits.dim(0), v = logits.dim(1);
  std::vector<int> tgt(targets.begin(), targets.end());
  const double* x = logits.data().data();
  std::vector<double> probs(rows * v);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= v)
      shape_fail("cross_entropy", "target " + std::to_string(tgt[r]) + " outside " + std::to_string(v) + " classes");
    const double* xr = x + r * v;
    const double mx = *std::max_element(xr, xr + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += (probs[r * v + j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] /= z;
    loss += mx + std::log(z) - xr[tgt[r]];
  }
  return finish(OpKind::kCrossEntropy, {logits}, {1}, {loss}, wants_grad({&logits}),
                [rows, v, tgt = std::move(tgt), probs = std::move(probs)](Graph::Node& node) {
                  double* gx = input_grad(node, 0);
                  if (gx == nullptr) return;
                  const double g = node.output->grad[0];
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < v; ++j) gx[r * v + j] += g * probs[r * v + j];
                    gx[r * v + tgt[r]] -= g;
                  }
                });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
  auto rows_of = [](const Tensor& t) { return t.rank() == 1 ? std::size_t{1} : t.dim(0); };
  if (a.rank() < 1 || a.rank() > 2 || b.rank() < 1 || b.rank() > 2 || a.shape().back() != b.shape().back())
    shape_fail("cosine_similarity", two_shapes(a, b));
  const std::size_t m = rows_of(a), n = rows_of(b), d = a.shape().back();
  auto normalize = [d, eps](const double* src, std::size_t rows, std::vector<double>& unit, std::vector<double>& norms) {
    unit.resize(rows * d);
    norms.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += src[r * d + j] * src[r * d + j];
      norms[r] = std::max(std::sqrt(s), eps);
      for (std::size_t j = 0; j < d; ++j) unit[r * d + j] = src[r * d + j] / norms[r];
    }
  };
  std::vector<double> ua, na, ub, nb;
  normalize(a.data().data(), m, ua, na);
  normalize(b.data().data(), n, ub, nb);
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(ua.data(), m, d) * ConstMap(ub.data(), n, d).transpose();
  Shape shape = (a.rank() == 1 && b.rank() == 1) ? Shape{1} : Shape{m, n};
  return finish(OpKind::kCosineSimilarity, {a, b}, std::move(shape), out, wants_grad({&a, &b}),
                [m, n, d, ua = std::move(ua), na = std::move(na), ub = std::move(ub), nb = std::move(nb),
                 cos = out](Graph::Node& node) {
                  const double* g = node.output->grad.data();
                  // d cos_ij / d a_i = (ub_j - cos_ij ua_i) / |a_i|, symmetric for b.
                  if (double* ga = input_grad(node, 0)) {
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) {
                        const double gij = g[i * n + j] / na[i];
                        if (gij == 0.0) continue;
                        for (std::size_t k = 0; k < d; ++k)
                          ga[i * d + k] += gij * (ub[j * d + k] - cos[i * n + j] * ua[i * d + k]);
                      }
                  }
                  if (double* gb = input_grad(node, 1)) {
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) {
                        const double gij = g[i * n + j] / nb[j];
                        if (gij == 0.0) continue;
                        for (std::size_t k = 0; k < d; ++k)
                          gb[j * d + k] += gij * (ua[i * d + k] - cos[i * n + j] * ub[j * d + k]);
                      }
                  }
                });
}

}  // namespace fewvlm
