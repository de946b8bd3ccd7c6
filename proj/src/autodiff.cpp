#include "himix/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

namespace himix::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Eigen's vectorised products peel loop heads according to the address of
// the operands, which changes the summation order. Products therefore run on
// Eigen-owned (maximally aligned) copies so results never depend on where
// the heap placed a tensor.
RowMat owned(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMap(t.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename A, typename B>
void product_into(double* dst, const A& a, const B& b, bool accumulate) {
  RowMat c(a.rows(), b.cols());
  c.noalias() = a * b;
  const double* src = c.data();
  const std::size_t size = static_cast<std::size_t>(c.size());
  if (accumulate) {
    for (std::size_t i = 0; i < size; ++i) dst[i] += src[i];
  } else {
    std::copy(src, src + size, dst);
  }
}

Graph& common_graph(std::initializer_list<Var> vars) {
  Graph* g = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw Error("operation on an empty Var");
    if (g == nullptr) {
      g = v.graph();
    } else if (g != v.graph()) {
      throw Error("operands belong to different graphs");
    }
  }
  return *g;
}

Graph& common_graph(std::span<const Var> vars) {
  if (vars.empty()) throw ShapeError("operation needs at least one operand");
  Graph& g = common_graph({vars.front()});
  for (const Var& v : vars) g.check_owns(v);
  return g;
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(v.shape()));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = OpKind::kConstant;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.op = OpKind::kLeaf;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::leaf_ref(const Tensor& value, bool requires_grad) {
  Node n;
  n.external = &value;
  n.op = OpKind::kLeaf;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::record(OpKind op, Tensor value, std::vector<int> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.requires_grad = std::any_of(parents.begin(), parents.end(), [this](int p) { return nodes_[p].requires_grad; });
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Graph::value(int id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

Tensor* Graph::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(value(id).shape, 0.0);
    n.has_grad = true;
  }
  return &n.grad;
}

void Graph::check_owns(Var v) const {
  if (v.graph() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
    throw Error("node does not belong to this graph");
  }
}

const Tensor* Graph::grad(Var v) const {
  check_owns(v);
  const Node& n = nodes_[v.id()];
  return n.has_grad ? &n.grad : nullptr;
}

bool Graph::requires_grad(Var v) const {
  check_owns(v);
  return nodes_[v.id()].requires_grad;
}

OpKind Graph::op(Var v) const {
  check_owns(v);
  return nodes_[v.id()].op;
}

std::span<const int> Graph::parents(Var v) const {
  check_owns(v);
  return nodes_[v.id()].parents;
}

void Graph::backward(Var loss) {
  check_owns(loss);
  if (backward_done_) throw Error("backward already ran on this graph");
  if (value(loss.id()).size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(value(loss.id()).shape));
  }
  backward_done_ = true;
  visits_ = 0;
  Tensor* seed = grad_buffer(loss.id());
  if (seed == nullptr) return;
  seed->data[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    ++visits_;
    if (n.backward) n.backward(*this, id, n.grad);
  }
}

Var matmul(Var a, Var b) {
  Graph& g = common_graph({a, b});
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  product_into(out.data.data(), owned(a.value(), m, k), owned(b.value(), k, n), false);
  const int ia = a.id(), ib = b.id();
  return g.record(OpKind::kMatMul, std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& g, int, const Tensor& dc) {
    const RowMat dC = owned(dc, m, n);
    if (Tensor* da = g.grad_buffer(ia)) {
      product_into(da->data.data(), dC, owned(g.value(ib), k, n).transpose(), true);
    }
    if (Tensor* db = g.grad_buffer(ib)) {
      product_into(db->data.data(), owned(g.value(ia), m, k).transpose(), dC, true);
    }
  });
}

Var transpose(Var a) {
  Graph& g = common_graph({a});
  require_rank(a, 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out({n, m});
  MutMap(out.data.data(), n, m) = ConstMap(a.value().data.data(), m, n).transpose();
  const int ia = a.id();
  return g.record(OpKind::kTranspose, std::move(out), {ia}, [ia, m, n](Graph& g, int, const Tensor& d) {
    if (Tensor* da = g.grad_buffer(ia)) {
      MutMap(da->data.data(), m, n) += ConstMap(d.data.data(), n, m).transpose();
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = common_graph({a, b});
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  const int ia = a.id(), ib = b.id();
  return g.record(OpKind::kAdd, std::move(out), {ia, ib}, [ia, ib](Graph& g, int, const Tensor& d) {
    for (int p : {ia, ib}) {
      if (Tensor* dp = g.grad_buffer(p)) {
        for (std::size_t i = 0; i < d.size(); ++i) dp->data[i] += d.data[i];
      }
    }
  });
}

Var sub(Var a, Var b) {
  Graph& g = common_graph({a, b});
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
  const int ia = a.id(), ib = b.id();
  return g.record(OpKind::kSub, std::move(out), {ia, ib}, [ia, ib](Graph& g, int, const Tensor& d) {
    if (Tensor* da = g.grad_buffer(ia)) {
      for (std::size_t i = 0; i < d.size(); ++i) da->data[i] += d.data[i];
    }
    if (Tensor* db = g.grad_buffer(ib)) {
      for (std::size_t i = 0; i < d.size(); ++i) db->data[i] -= d.data[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = common_graph({a, b});
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  const int ia = a.id(), ib = b.id();
  return g.record(OpKind::kMul, std::move(out), {ia, ib}, [ia, ib](Graph& g, int, const Tensor& d) {
    if (Tensor* da = g.grad_buffer(ia)) {
      const auto& bv = g.value(ib).data;
      for (std::size_t i = 0; i < d.size(); ++i) da->data[i] += d.data[i] * bv[i];
    }
    if (Tensor* db = g.grad_buffer(ib)) {
      const auto& av = g.value(ia).data;
      for (std::size_t i = 0; i < d.size(); ++i) db->data[i] += d.data[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Graph& g = common_graph({a});
  Tensor out = a.value();
  for (double& x : out.data) x *= factor;
  const int ia = a.id();
  return g.record(OpKind::kScale, std::move(out), {ia}, [ia, factor](Graph& g, int, const Tensor& d) {
    if (Tensor* da = g.grad_buffer(ia)) {
      for (std::size_t i = 0; i < d.size(); ++i) da->data[i] += factor * d.data[i];
    }
  });
}

Var add_row(Var a, Var b) {
  Graph& g = common_graph({a, b});
  require_rank(a, 2, "add_row");
  require_rank(b, 1, "add_row");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (b.shape()[0] != n) {
    throw ShapeError("add_row: row length " + std::to_string(n) + " vs bias " + shape_str(b.shape()));
  }
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out.data[r * n + c] += bv[c];
  }
  const int ia = a.id(), ib = b.id();
  return g.record(OpKind::kAddRow, std::move(out), {ia, ib}, [ia, ib, m, n](Graph& g, int, const Tensor& d) {
    if (Tensor* da = g.grad_buffer(ia)) {
      for (std::size_t i = 0; i < d.size(); ++i) da->data[i] += d.data[i];
    }
    if (Tensor* db = g.grad_buffer(ib)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) db->data[c] += d.data[r * n + c];
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  Graph& g = common_graph({a});
  if (numel(shape) != a.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), a.value().data);
  const int ia = a.id();
  return g.record(OpKind::kReshape, std::move(out), {ia}, [ia](Graph& g, int, const Tensor& d) {
    if (Tensor* da = g.grad_buffer(ia)) {
      for (std::size_t i = 0; i < d.size(); ++i) da->data[i] += d.data[i];
    }
  });
}

Var softmax(Var x, std::size_t axis) {
  Graph& g = common_graph({x});
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  const auto& xv = x.value().data;
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < s.len; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out.data[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out.data[base + j * s.inner] /= total;
    }
  }
  const int ix = x.id();
  return g.record(OpKind::kSoftmax, std::move(out), {ix}, [ix, s](Graph& g, int self, const Tensor& d) {
    Tensor* dx = g.grad_buffer(ix);
    if (!dx) return;
    const auto& y = g.value(self).data;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t k = base + j * s.inner;
          dot += d.data[k] * y[k];
        }
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t k = base + j * s.inner;
          dx->data[k] += y[k] * (d.data[k] - dot);
        }
      }
    }
  });
}

Var activation(Activation kind, Var x) {
  Graph& g = common_graph({x});
  Tensor out = x.value();
  for (double& v : out.data) {
    switch (kind) {
      case Activation::kRelu:
        v = v < 0.0 ? 0.0 : v;
        break;  // NaN passes through
      case Activation::kGelu:
        v = v * normal_cdf(v);
        break;
      case Activation::kSigmoid:
        v = 1.0 / (1.0 + std::exp(-v));
        break;
    }
  }
  const int ix = x.id();
  return g.record(OpKind::kActivation, std::move(out), {ix}, [ix, kind](Graph& g, int self, const Tensor& d) {
    Tensor* dx = g.grad_buffer(ix);
    if (!dx) return;
    const auto& xv = g.value(ix).data;
    const auto& yv = g.value(self).data;
    for (std::size_t i = 0; i < d.size(); ++i) {
      double local = 0.0;
      switch (kind) {
        case Activation::kRelu:
          local = xv[i] > 0.0 ? 1.0 : 0.0;
          break;
        case Activation::kGelu:
          local = normal_cdf(xv[i]) + xv[i] * normal_pdf(xv[i]);
          break;
        case Activation::kSigmoid:
          local = yv[i] * (1.0 - yv[i]);
          break;
      }
      dx->data[i] += d.data[i] * local;
    }
  });
}

Var reduce(Reduction kind, Var x, std::size_t axis) {
  Graph& g = common_graph({x});
  const AxisSplit s = split_axis(x.shape(), axis, "reduce");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto& xv = x.value().data;
  Tensor out(out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (kind == Reduction::kMax) argmax->resize(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      const std::size_t dst = o * s.inner + in;
      if (kind == Reduction::kMax) {
        std::size_t best = base;
        // A NaN entry wins so that non-finite inputs are never masked.
        for (std::size_t j = 1; j < s.len && !std::isnan(xv[best]); ++j) {
          const double v = xv[base + j * s.inner];
          if (v > xv[best] || std::isnan(v)) best = base + j * s.inner;
        }
        out.data[dst] = xv[best];
        (*argmax)[dst] = best;
      } else {
        double total = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) total += xv[base + j * s.inner];
        out.data[dst] = kind == Reduction::kMean ? total / static_cast<double>(s.len) : total;
      }
    }
  }
  const int ix = x.id();
  return g.record(OpKind::kReduce, std::move(out), {ix}, [ix, kind, s, argmax](Graph& g, int, const Tensor& d) {
    Tensor* dx = g.grad_buffer(ix);
    if (!dx) return;
    if (kind == Reduction::kMax) {
      for (std::size_t i = 0; i < d.size(); ++i) dx->data[(*argmax)[i]] += d.data[i];
      return;
    }
    const double f = kind == Reduction::kMean ? 1.0 / static_cast<double>(s.len) : 1.0;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const double gv = f * d.data[o * s.inner + in];
        const std::size_t base = o * s.len * s.inner + in;
        for (std::size_t j = 0; j < s.len; ++j) dx->data[base + j * s.inner] += gv;
      }
    }
  });
}

Var sum_all(Var x) {
  Graph& g = common_graph({x});
  double total = 0.0;
  for (double v : x.value().data) total += v;
  const int ix = x.id();
  return g.record(OpKind::kSumAll, Tensor::scalar(total), {ix}, [ix](Graph& g, int, const Tensor& d) {
    if (Tensor* dx = g.grad_buffer(ix)) {
      for (double& v : dx->data) v += d.data[0];
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = common_graph({x, gain, bias});
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw ShapeError("layer_norm: affine params must be [" + std::to_string(n) + "], got " + shape_str(gain.shape()) +
                     " and " + shape_str(bias.shape()));
  }
  const auto& xv = x.value().data;
  const auto& gv = gain.value().data;
  const auto& bv = bias.value().data;
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto rstd = std::make_shared<std::vector<double>>(m);
  Tensor out({m, n});
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mean) * rs;
      (*xhat)[r * n + c] = h;
      out.data[r * n + c] = h * gv[c] + bv[c];
    }
  }
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return g.record(OpKind::kLayerNorm, std::move(out), {ix, ig, ib},
                  [ix, ig, ib, m, n, xhat, rstd](Graph& g, int, const Tensor& d) {
                    const auto& h = *xhat;
                    if (Tensor* dg = g.grad_buffer(ig)) {
                      for (std::size_t i = 0; i < m * n; ++i) dg->data[i % n] += d.data[i] * h[i];
                    }
                    if (Tensor* db = g.grad_buffer(ib)) {
                      for (std::size_t i = 0; i < m * n; ++i) db->data[i % n] += d.data[i];
                    }
                    Tensor* dx = g.grad_buffer(ix);
                    if (!dx) return;
                    const auto& gv = g.value(ig).data;
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t r = 0; r < m; ++r) {
                      double sum_dh = 0.0, sum_dh_h = 0.0;
                      for (std::size_t c = 0; c < n; ++c) {
                        const double dh = d.data[r * n + c] * gv[c];
                        sum_dh += dh;
                        sum_dh_h += dh * h[r * n + c];
                      }
                      for (std::size_t c = 0; c < n; ++c) {
                        const double dh = d.data[r * n + c] * gv[c];
                        dx->data[r * n + c] += (*rstd)[r] * (dh - inv_n * sum_dh - h[r * n + c] * inv_n * sum_dh_h);
                      }
                    }
                  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  Graph& g = common_graph({a});
  require_rank(a, 2, "slice_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (count == 0 || start + count > m) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_str(a.shape()));
  }
  const auto& av = a.value().data;
  Tensor out({count, n}, std::vector<double>(av.begin() + static_cast<std::ptrdiff_t>(start * n),
                                             av.begin() + static_cast<std::ptrdiff_t>((start + count) * n)));
  const int ia = a.id();
  return g.record(OpKind::kSliceRows, std::move(out), {ia}, [ia, start, n](Graph& g, int, const Tensor& d) {
    if (Tensor* da = g.grad_buffer(ia)) {
      for (std::size_t i = 0; i < d.size(); ++i) da->data[start * n + i] += d.data[i];
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Graph& g = common_graph({a});
  require_rank(a, 2, "slice_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (count == 0 || start + count > n) {
    throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_str(a.shape()));
  }
  const auto& av = a.value().data;
  Tensor out({m, count});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < count; ++c) out.data[r * count + c] = av[r * n + start + c];
  }
  const int ia = a.id();
  return g.record(OpKind::kSliceCols, std::move(out), {ia}, [ia, start, count, m, n](Graph& g, int, const Tensor& d) {
    if (Tensor* da = g.grad_buffer(ia)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < count; ++c) {
          da->data[r * n + start + c] += d.data[r * count + c];
        }
      }
    }
  });
}

namespace {

// Shared by concat, concat_rows and stack: the output is the parts laid end to end.
Var join_flat(Graph& g, OpKind op, std::span<const Var> parts, Shape out_shape) {
  Tensor out(std::move(out_shape));
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const auto& pv = p.value().data;
    std::copy(pv.begin(), pv.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += pv.size();
  }
  auto ids_copy = ids;
  return g.record(op, std::move(out), std::move(ids),
                  [ids = std::move(ids_copy), offsets](Graph& g, int, const Tensor& d) {
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (Tensor* dp = g.grad_buffer(ids[k])) {
                        for (std::size_t i = 0; i < dp->size(); ++i) dp->data[i] += d.data[offsets[k] + i];
                      }
                    }
                  });
}

}  // namespace

Var concat(std::span<const Var> parts) {
  Graph& g = common_graph(parts);
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_rank(p, 1, "concat");
    total += p.shape()[0];
  }
  return join_flat(g, OpKind::kConcat, parts, {total});
}

Var concat_rows(std::span<const Var> parts) {
  Graph& g = common_graph(parts);
  const std::size_t n = parts.front().shape().size() == 2 ? parts.front().shape()[1] : 0;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.shape()[1] != n) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                       shape_str(p.shape()));
    }
    rows += p.shape()[0];
  }
  return join_flat(g, OpKind::kConcatRows, parts, {rows, n});
}

Var concat_cols(std::span<const Var> parts) {
  Graph& g = common_graph(parts);
  const std::size_t m = parts.front().shape().size() == 2 ? parts.front().shape()[0] : 0;
  std::size_t cols = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.shape()[0] != m) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
    }
    ids.push_back(p.id());
    widths.push_back(p.shape()[1]);
    cols += p.shape()[1];
  }
  Tensor out({m, cols});
  std::size_t c0 = 0;
  for (const Var& p : parts) {
    const auto& pv = p.value().data;
    const std::size_t w = p.shape()[1];
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.data.begin() + static_cast<std::ptrdiff_t>(r * cols + c0));
    }
    c0 += w;
  }
  auto ids_copy = ids;
  return g.record(OpKind::kConcatCols, std::move(out), std::move(ids),
                  [ids = std::move(ids_copy), widths, m, cols](Graph& g, int, const Tensor& d) {
                    std::size_t c0 = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      const std::size_t w = widths[k];
                      if (Tensor* dp = g.grad_buffer(ids[k])) {
                        for (std::size_t r = 0; r < m; ++r) {
                          for (std::size_t c = 0; c < w; ++c) dp->data[r * w + c] += d.data[r * cols + c0 + c];
                        }
                      }
                      c0 += w;
                    }
                  });
}

Var stack(std::span<const Var> parts) {
  Graph& g = common_graph(parts);
  const Shape inner = parts.front().shape();
  for (const Var& p : parts) {
    if (p.shape() != inner) {
      throw ShapeError("stack: shape mismatch " + shape_str(inner) + " vs " + shape_str(p.shape()));
    }
  }
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  return join_flat(g, OpKind::kStack, parts, std::move(out_shape));
}

Var window_mean(Var tokens, std::size_t grid_h, std::size_t grid_w, std::size_t window) {
  Graph& g = common_graph({tokens});
  require_rank(tokens, 2, "window_mean");
  const std::size_t n = tokens.shape()[0], d = tokens.shape()[1];
  if (grid_h * grid_w != n) {
    throw ShapeError("window_mean: " + std::to_string(n) + " tokens do not form a " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " grid");
  }
  if (window == 0 || grid_h % window != 0 || grid_w % window != 0) {
    throw ShapeError("window_mean: window " + std::to_string(window) + " does not tile a " + std::to_string(grid_h) +
                     "x" + std::to_string(grid_w) + " grid");
  }
  const std::size_t wy = grid_h / window, wx = grid_w / window;
  const double inv = 1.0 / static_cast<double>(window * window);
  const auto& tv = tokens.value().data;
  Tensor out({wy * wx, d});
  for (std::size_t by = 0; by < wy; ++by) {
    for (std::size_t bx = 0; bx < wx; ++bx) {
      double* dst = out.data.data() + (by * wx + bx) * d;
      for (std::size_t i = 0; i < window; ++i) {
        for (std::size_t j = 0; j < window; ++j) {
          const double* src = tv.data() + ((by * window + i) * grid_w + bx * window + j) * d;
          for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
      }
      for (std::size_t c = 0; c < d; ++c) dst[c] *= inv;
    }
  }
  const int it = tokens.id();
  return g.record(OpKind::kWindowMean, std::move(out), {it},
                  [it, grid_w, window, wy, wx, d, inv](Graph& g, int, const Tensor& dout) {
                    Tensor* dt = g.grad_buffer(it);
                    if (!dt) return;
                    for (std::size_t by = 0; by < wy; ++by) {
                      for (std::size_t bx = 0; bx < wx; ++bx) {
                        const double* src = dout.data.data() + (by * wx + bx) * d;
                        for (std::size_t i = 0; i < window; ++i) {
                          for (std::size_t j = 0; j < window; ++j) {
                            double* dst = dt->data.data() + ((by * window + i) * grid_w + bx * window + j) * d;
                            for (std::size_t c = 0; c < d; ++c) dst[c] += inv * src[c];
                          }
                        }
                      }
                    }
                  });
}

Var bce(Var probs, std::span<const double> labels) {
  Graph& g = common_graph({probs});
  const auto& pv = probs.value().data;
  if (pv.size() != labels.size()) {
    throw ShapeError("bce: " + std::to_string(pv.size()) + " predictions vs " + std::to_string(labels.size()) +
                     " labels");
  }
  if (pv.empty()) throw ShapeError("bce: empty batch");
  const double b = static_cast<double>(pv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double p = std::clamp(pv[i], kProbClamp, 1.0 - kProbClamp);
    total += labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  std::vector<double> y(labels.begin(), labels.end());
  const int ip = probs.id();
  return g.record(OpKind::kBce, Tensor::scalar(-total / b), {ip},
                  [ip, y = std::move(y), b](Graph& g, int, const Tensor& d) {
                    Tensor* dp = g.grad_buffer(ip);
                    if (!dp) return;
                    const auto& pv = g.value(ip).data;
                    for (std::size_t i = 0; i < pv.size(); ++i) {
                      const double p = pv[i];
                      if (p < kProbClamp || p > 1.0 - kProbClamp) continue;
                      dp->data[i] += -d.data[0] * (y[i] / p - (1.0 - y[i]) / (1.0 - p)) / b;
                    }
                  });
}

Var softmax_cross_entropy(Var logits, std::size_t target) {
  Graph& g = common_graph({logits});
  require_rank(logits, 1, "softmax_cross_entropy");
  const auto& z = logits.value().data;
  if (target >= z.size()) throw ShapeError("softmax_cross_entropy: target class out of range");
  const double mx = *std::max_element(z.begin(), z.end());
  auto probs = std::make_shared<std::vector<double>>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    (*probs)[i] = std::exp(z[i] - mx);
    total += (*probs)[i];
  }
  for (double& p : *probs) p /= total;
  const double loss = -(z[target] - mx - std::log(total));
  const int il = logits.id();
  return g.record(OpKind::kSoftmaxCrossEntropy, Tensor::scalar(loss), {il},
                  [il, probs, target](Graph& g, int, const Tensor& d) {
                    if (Tensor* dz = g.grad_buffer(il)) {
                      for (std::size_t i = 0; i < probs->size(); ++i) {
                        dz->data[i] += d.data[0] * ((*probs)[i] - (i == target ? 1.0 : 0.0));
                      }
                    }
                  });
}

}  // namespace himix::ad
