#include "sthq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sthq::ad {

namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& detail) {
  throw ShapeError(std::string(op_name(kind)) + ": " + detail);
}

Var make(Graph& g, OpKind kind, std::vector<std::size_t> parents, Tensor value,
         Graph::Backprop backprop) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string(op_name(kind)) + ": non-finite value in output of shape " +
                         shape_string(value.shape()));
  }
  return g.record(kind, std::move(parents), std::move(value), std::move(backprop));
}

Graph& same_graph(OpKind kind, Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph()) {
    shape_fail(kind, "operands belong to different graphs");
  }
  return a.graph();
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Output shape of a broadcasting binary op.
Shape broadcast_shape(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1 || is_suffix(b.shape(), a.shape())) return a.shape();
  if (a.size() == 1 || is_suffix(a.shape(), b.shape())) return b.shape();
  shape_fail(kind, "cannot broadcast " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
}

// Reduce an output-shaped gradient onto an operand that was broadcast (index i mod n).
void accumulate_broadcast(Tensor& target, std::span<const double> grad, double sign = 1.0) {
  const std::size_t n = target.size();
  auto t = target.data();
  for (std::size_t i = 0; i < grad.size(); ++i) t[i % n] += sign * grad[i];
}

template <typename F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

std::size_t last_axis(OpKind kind, const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) shape_fail(kind, "needs a non-empty last axis");
  return x.shape().back();
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::matmul: return "matmul";
    case OpKind::relu: return "relu";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::sum: return "sum";
    case OpKind::squared_error: return "squared_error";
    case OpKind::reshape: return "reshape";
    case OpKind::slice: return "slice";
    case OpKind::concat: return "concat";
    case OpKind::gather: return "gather";
    case OpKind::conv2d: return "conv2d";
    case OpKind::upsample2x: return "upsample2x";
    case OpKind::sq_dist: return "sq_dist";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph_->value(index_); }
const Tensor& Var::grad() const { return graph_->grad(index_); }

Var Graph::add_leaf(OpKind kind, Tensor value, bool requires_grad) {
  if (!value.all_finite()) {
    throw NonFiniteError("leaf: non-finite input of shape " + shape_string(value.shape()));
  }
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  has_grads_ = false;
  return Var(this, nodes_.size() - 1);
}

Var Graph::variable(Tensor value) { return add_leaf(OpKind::leaf, std::move(value), true); }

Var Graph::constant(Tensor value) { return add_leaf(OpKind::constant, std::move(value), false); }

Var Graph::input(const std::string& name, Tensor value, bool requires_grad) {
  if (names_.count(name)) throw std::invalid_argument("input '" + name + "' bound twice");
  Var v = add_leaf(requires_grad ? OpKind::leaf : OpKind::constant, std::move(value), requires_grad);
  names_[name] = v.index();
  return v;
}

Var Graph::named(const std::string& name) {
  auto it = names_.find(name);
  if (it == names_.end()) throw std::invalid_argument("no input named '" + name + "'");
  return Var(this, it->second);
}

Var Graph::record(OpKind kind, std::vector<std::size_t> parents, Tensor value, Backprop backprop) {
  Node node;
  node.kind = kind;
  node.requires_grad = std::any_of(parents.begin(), parents.end(),
                                   [this](std::size_t p) { return nodes_[p].requires_grad; });
  node.parents = std::move(parents);
  node.value = std::move(value);
  if (node.requires_grad) node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  has_grads_ = false;
  return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::grad(std::size_t index) const {
  const Node& node = nodes_.at(index);
  if (!has_grads_ || !node.requires_grad) {
    throw std::logic_error("no gradient available for node " + std::to_string(index) +
                           " (call backward first; constants carry no gradient)");
  }
  return node.grad;
}

void Graph::backward(Var output) {
  if (&output.graph() != this) throw std::invalid_argument("backward: output from another graph");
  if (output.size() != 1) {
    throw ShapeError("backward: output must be a scalar, got shape " + shape_string(output.shape()));
  }
  for (Node& node : nodes_) {
    node.grad = node.requires_grad ? Tensor(node.value.shape(), 0.0) : Tensor();
  }
  has_grads_ = true;
  if (!nodes_[output.index()].requires_grad) return;
  nodes_[output.index()].grad[0] = 1.0;
  for (std::size_t i = output.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.requires_grad && node.backprop) node.backprop(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  Graph& g = same_graph(OpKind::add, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(broadcast_shape(OpKind::add, av, bv));
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i % av.size()] + bv[i % bv.size()];
  const std::size_t ia = a.index(), ib = b.index();
  return make(g, OpKind::add, {ia, ib}, std::move(out), [ia, ib](Graph& gr, std::size_t self) {
    auto go = gr.grad_mut(self).data();
    if (gr.needs_grad(ia)) accumulate_broadcast(gr.grad_mut(ia), go);
    if (gr.needs_grad(ib)) accumulate_broadcast(gr.grad_mut(ib), go);
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(OpKind::sub, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(broadcast_shape(OpKind::sub, av, bv));
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i % av.size()] - bv[i % bv.size()];
  const std::size_t ia = a.index(), ib = b.index();
  return make(g, OpKind::sub, {ia, ib}, std::move(out), [ia, ib](Graph& gr, std::size_t self) {
    auto go = gr.grad_mut(self).data();
    if (gr.needs_grad(ia)) accumulate_broadcast(gr.grad_mut(ia), go);
    if (gr.needs_grad(ib)) accumulate_broadcast(gr.grad_mut(ib), go, -1.0);
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(OpKind::mul, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(broadcast_shape(OpKind::mul, av, bv));
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i % av.size()] * bv[i % bv.size()];
  const std::size_t ia = a.index(), ib = b.index();
  return make(g, OpKind::mul, {ia, ib}, std::move(out), [ia, ib](Graph& gr, std::size_t self) {
    auto go = gr.grad_mut(self).data();
    const Tensor& av = gr.value(ia);
    const Tensor& bv = gr.value(ib);
    if (gr.needs_grad(ia)) {
      auto ga = gr.grad_mut(ia).data();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i % av.size()] += go[i] * bv[i % bv.size()];
    }
    if (gr.needs_grad(ib)) {
      auto gb = gr.grad_mut(ib).data();
      for (std::size_t i = 0; i < go.size(); ++i) gb[i % bv.size()] += go[i] * av[i % av.size()];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = map_values(x.value(), [factor](double v) { return v * factor; });
  const std::size_t ix = x.index();
  return make(x.graph(), OpKind::scale, {ix}, std::move(out), [ix, factor](Graph& gr, std::size_t self) {
    auto go = gr.grad_mut(self).data();
    auto gx = gr.grad_mut(ix).data();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += factor * go[i];
  });
}

Var relu(Var x) {
  Tensor out = map_values(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  const std::size_t ix = x.index();
  return make(x.graph(), OpKind::relu, {ix}, std::move(out), [ix](Graph& gr, std::size_t self) {
    auto go = gr.grad_mut(self).data();
    auto xv = gr.value(ix).data();
    auto gx = gr.grad_mut(ix).data();
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += go[i];
    }
  });
}

Var log(Var x) {
  Tensor out = map_values(x.value(), [](double v) { return std::log(v); });
  const std::size_t ix = x.index();
  return make(x.graph(), OpKind::log, {ix}, std::move(out), [ix](Graph& gr, std::size_t self) {
    auto go = gr.grad_mut(self).data();
    auto xv = gr.value(ix).data();
    auto gx = gr.grad_mut(ix).data();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / xv[i];
  });
}

Var exp(Var x) {
  Tensor out = map_values(x.value(), [](double v) { return std::exp(v); });
  const std::size_t ix = x.index();
  return make(x.graph(), OpKind::exp, {ix}, std::move(out), [ix](Graph& gr, std::size_t self) {
    auto go = gr.grad_mut(self).data();
    auto yv = gr.value(self).data();
    auto gx = gr.grad_mut(ix).data();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * yv[i];
  });
}

Var softmax(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = last_axis(OpKind::softmax, xv);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < xv.size() / n; ++r) {
    const double* in = xv.data().data() + r * n;
    double* o = out.data().data() + r * n;
    const double peak = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(in[j] - peak));
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  const std::size_t ix = x.index();
  return make(x.graph(), OpKind::softmax, {ix}, std::move(out), [ix, n](Graph& gr, std::size_t self) {
    const Tensor& y = gr.value(self);
    auto go = gr.grad_mut(self).data();
    auto gx = gr.grad_mut(ix).data();
    for (std::size_t r = 0; r < y.size() / n; ++r) {
      const std::size_t base = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += go[base + j] * y[base + j];
      for (std::size_t j = 0; j < n; ++j) gx[base + j] += y[base + j] * (go[base + j] - dot);
    }
  });
}

Var log_softmax(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = last_axis(OpKind::log_softmax, xv);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < xv.size() / n; ++r) {
    const double* in = xv.data().data() + r * n;
    double* o = out.data().data() + r * n;
    const double peak = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(in[j] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
  }
  const std::size_t ix = x.index();
  return make(x.graph(), OpKind::log_softmax, {ix}, std::move(out), [ix, n](Graph& gr, std::size_t self) {
    const Tensor& y = gr.value(self);
    auto go = gr.grad_mut(self).data();
    auto gx = gr.grad_mut(ix).data();
    for (std::size_t r = 0; r < y.size() / n; ++r) {
      const std::size_t base = r * n;
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += go[base + j];
      for (std::size_t j = 0; j < n; ++j) gx[base + j] += go[base + j] - std::exp(y[base + j]) * total;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var x) {
  const auto xs = x.value().data();
  const double total = std::accumulate(xs.begin(), xs.end(), 0.0);
  const std::size_t ix = x.index();
  return make(x.graph(), OpKind::sum, {ix}, Tensor::scalar(total), [ix](Graph& gr, std::size_t self) {
    const double go = gr.grad_mut(self)[0];
    for (double& v : gr.grad_mut(ix).data()) v += go;
  });
}

Var mean(Var x) {
  if (x.size() == 0) shape_fail(OpKind::sum, "mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var squared_error(Var a, Var b) {
  Graph& g = same_graph(OpKind::squared_error, a, b);
  if (a.shape() != b.shape()) {
    shape_fail(OpKind::squared_error, "shape mismatch " + shape_string(a.shape()) + " vs " +
                                          shape_string(b.shape()));
  }
  const auto av = a.value().data();
  const auto bv = b.value().data();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += (av[i] - bv[i]) * (av[i] - bv[i]);
  const std::size_t ia = a.index(), ib = b.index();
  return make(g, OpKind::squared_error, {ia, ib}, Tensor::scalar(total), [ia, ib](Graph& gr, std::size_t self) {
    const double go = gr.grad_mut(self)[0];
    const auto av = gr.value(ia).data();
    const auto bv = gr.value(ib).data();
    if (gr.needs_grad(ia)) {
      auto ga = gr.grad_mut(ia).data();
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += 2.0 * go * (av[i] - bv[i]);
    }
    if (gr.needs_grad(ib)) {
      auto gb = gr.grad_mut(ib).data();
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= 2.0 * go * (av[i] - bv[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  Graph& g = same_graph(OpKind::matmul, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    shape_fail(OpKind::matmul, "incompatible shapes " + shape_string(av.shape()) + " and " +
                                   shape_string(bv.shape()));
  }
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Tensor out({n, m});
  const double* A = av.data().data();
  const double* B = bv.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * m;
      double* crow = C + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  const std::size_t ia = a.index(), ib = b.index();
  return make(g, OpKind::matmul, {ia, ib}, std::move(out), [ia, ib, n, k, m](Graph& gr, std::size_t self) {
    const double* G = gr.grad_mut(self).data().data();
    const double* A = gr.value(ia).data().data();
    const double* B = gr.value(ib).data().data();
    if (gr.needs_grad(ia)) {
      // dA = G * B^T
      double* GA = gr.grad_mut(ia).data().data();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += G[i * m + j] * B[p * m + j];
          GA[i * k + p] += acc;
        }
      }
    }
    if (gr.needs_grad(ib)) {
      // dB = A^T * G
      double* GB = gr.grad_mut(ib).data().data();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) GB[p * m + j] += aip * G[i * m + j];
        }
      }
    }
  });
}

Var sq_dist(Var points, Var centers) {
  Graph& g = same_graph(OpKind::sq_dist, points, centers);
  const Tensor& zv = points.value();
  const Tensor& cv = centers.value();
  if (zv.rank() != 2 || cv.rank() != 2 || zv.dim(1) != cv.dim(1)) {
    shape_fail(OpKind::sq_dist, "points " + shape_string(zv.shape()) + " and centers " +
                                    shape_string(cv.shape()) + " must be [m,d] and [L,d]");
  }
  const std::size_t m = zv.dim(0), L = cv.dim(0), d = zv.dim(1);
  std::vector<double> center_norms(L, 0.0);
  for (std::size_t j = 0; j < L; ++j) {
    for (std::size_t k = 0; k < d; ++k) center_norms[j] += cv.at(j, k) * cv.at(j, k);
  }
  Tensor out({m, L});
  for (std::size_t i = 0; i < m; ++i) {
    const double* z = zv.data().data() + i * d;
    double znorm = 0.0;
    for (std::size_t k = 0; k < d; ++k) znorm += z[k] * z[k];
    for (std::size_t j = 0; j < L; ++j) {
      const double* c = cv.data().data() + j * d;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += z[k] * c[k];
      out.at(i, j) = znorm - 2.0 * dot + center_norms[j];
    }
  }
  const std::size_t iz = points.index(), ic = centers.index();
  return make(g, OpKind::sq_dist, {iz, ic}, std::move(out), [iz, ic, m, L, d](Graph& gr, std::size_t self) {
    const Tensor& G = gr.grad_mut(self);
    const double* Z = gr.value(iz).data().data();
    const double* C = gr.value(ic).data().data();
    const bool want_z = gr.needs_grad(iz), want_c = gr.needs_grad(ic);
    double* GZ = want_z ? gr.grad_mut(iz).data().data() : nullptr;
    double* GC = want_c ? gr.grad_mut(ic).data().data() : nullptr;
    for (std::size_t i = 0; i < m; ++i) {
      const double* z = Z + i * d;
      for (std::size_t j = 0; j < L; ++j) {
        const double w = 2.0 * G.at(i, j);
        if (w == 0.0) continue;
        const double* c = C + j * d;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = w * (z[k] - c[k]);
          if (want_z) GZ[i * d + k] += diff;
          if (want_c) GC[j * d + k] -= diff;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    shape_fail(OpKind::reshape, "cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  const std::size_t ix = x.index();
  return make(x.graph(), OpKind::reshape, {ix}, x.value().reshaped(std::move(shape)),
              [ix](Graph& gr, std::size_t self) {
                auto go = gr.grad_mut(self).data();
                auto gx = gr.grad_mut(ix).data();
                for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
              });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank() || begin >= end || end > xv.dim(axis)) {
    shape_fail(OpKind::slice, "range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                                  std::to_string(axis) + " of " + shape_string(xv.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  const std::size_t extent = xv.dim(axis), width = end - begin;
  Shape out_shape = xv.shape();
  out_shape[axis] = width;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.data().data() + (o * extent + begin) * inner, width * inner,
                out.data().data() + o * width * inner);
  }
  const std::size_t ix = x.index();
  return make(x.graph(), OpKind::slice, {ix}, std::move(out),
              [ix, outer, inner, extent, width, begin](Graph& gr, std::size_t self) {
                const double* go = gr.grad_mut(self).data().data();
                double* gx = gr.grad_mut(ix).data().data();
                for (std::size_t o = 0; o < outer; ++o) {
                  for (std::size_t i = 0; i < width * inner; ++i) {
                    gx[(o * extent + begin) * inner + i] += go[o * width * inner + i];
                  }
                }
              });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) shape_fail(OpKind::concat, "no operands");
  Graph& g = parts.front().graph();
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) shape_fail(OpKind::concat, "axis out of range for " + shape_string(first));
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (&p.graph() != &g) shape_fail(OpKind::concat, "operands belong to different graphs");
    Shape s = p.shape();
    if (s.size() != first.size()) shape_fail(OpKind::concat, "rank mismatch " + shape_string(s) + " vs " + shape_string(first));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        shape_fail(OpKind::concat, "shape mismatch " + shape_string(s) + " vs " + shape_string(first));
      }
    }
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor out(out_shape);
  std::vector<std::size_t> ids, offsets, widths;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.value().data().data() + o * w * inner, w * inner,
                  out.data().data() + (o * total + offset) * inner);
    }
    ids.push_back(p.index());
    offsets.push_back(offset);
    widths.push_back(w);
    offset += w;
  }
  return make(g, OpKind::concat, ids, std::move(out),
              [ids, offsets, widths, outer, inner, total](Graph& gr, std::size_t self) {
                const double* go = gr.grad_mut(self).data().data();
                for (std::size_t k = 0; k < ids.size(); ++k) {
                  if (!gr.needs_grad(ids[k])) continue;
                  double* gp = gr.grad_mut(ids[k]).data().data();
                  const std::size_t w = widths[k];
                  for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t i = 0; i < w * inner; ++i) {
                      gp[o * w * inner + i] += go[(o * total + offsets[k]) * inner + i];
                    }
                  }
                }
              });
}

Var gather(Var x, std::shared_ptr<const std::vector<std::size_t>> indices, Shape out_shape) {
  if (!indices || shape_size(out_shape) != indices->size()) {
    shape_fail(OpKind::gather, "index count does not match output shape " + shape_string(out_shape));
  }
  const Tensor& xv = x.value();
  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < indices->size(); ++i) {
    const std::size_t src = (*indices)[i];
    if (src >= xv.size()) shape_fail(OpKind::gather, "index " + std::to_string(src) + " out of range for " + shape_string(xv.shape()));
    out[i] = xv[src];
  }
  const std::size_t ix = x.index();
  return make(x.graph(), OpKind::gather, {ix}, std::move(out), [ix, indices](Graph& gr, std::size_t self) {
    auto go = gr.grad_mut(self).data();
    auto gx = gr.grad_mut(ix).data();
    for (std::size_t i = 0; i < go.size(); ++i) gx[(*indices)[i]] += go[i];
  });
}

// ---------------------------------------------------------------------------
// Convolution

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t padding) {
  Graph& g = same_graph(OpKind::conv2d, x, weight);
  same_graph(OpKind::conv2d, x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3) ||
      bv.size() != wv.dim(0) || stride == 0) {
    shape_fail(OpKind::conv2d, "input " + shape_string(xv.shape()) + ", weight " + shape_string(wv.shape()) +
                                   ", bias " + shape_string(bv.shape()));
  }
  const std::size_t N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t Co = wv.dim(0), K = wv.dim(2);
  if (H + 2 * padding < K || W + 2 * padding < K) {
    shape_fail(OpKind::conv2d, "kernel larger than padded input " + shape_string(xv.shape()));
  }
  const std::size_t Ho = (H + 2 * padding - K) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - K) / stride + 1;
  Tensor out({N, Co, Ho, Wo});
  const double* X = xv.data().data();
  const double* Wt = wv.data().data();
  double* Y = out.data().data();
  const auto P = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Co; ++co) {
      double* y = Y + (n * Co + co) * Ho * Wo;
      std::fill_n(y, Ho * Wo, bv[co]);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* xc = X + (n * Ci + ci) * H * W;
        for (std::size_t kh = 0; kh < K; ++kh) {
          for (std::size_t kw = 0; kw < K; ++kw) {
            const double w = Wt[((co * Ci + ci) * K + kh) * K + kw];
            for (std::size_t oh = 0; oh < Ho; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - P;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              const double* xrow = xc + ih * W;
              double* yrow = y + oh * Wo;
              for (std::size_t ow = 0; ow < Wo; ++ow) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) - P;
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                yrow[ow] += w * xrow[iw];
              }
            }
          }
        }
      }
    }
  }
  const std::size_t ix = x.index(), iw = weight.index(), ib = bias.index();
  return make(g, OpKind::conv2d, {ix, iw, ib}, std::move(out),
              [=](Graph& gr, std::size_t self) {
                const double* G = gr.grad_mut(self).data().data();
                const double* X = gr.value(ix).data().data();
                const double* Wt = gr.value(iw).data().data();
                double* GX = gr.needs_grad(ix) ? gr.grad_mut(ix).data().data() : nullptr;
                double* GW = gr.needs_grad(iw) ? gr.grad_mut(iw).data().data() : nullptr;
                if (gr.needs_grad(ib)) {
                  double* GB = gr.grad_mut(ib).data().data();
                  for (std::size_t n = 0; n < N; ++n) {
                    for (std::size_t co = 0; co < Co; ++co) {
                      const double* gy = G + (n * Co + co) * Ho * Wo;
                      double acc = 0.0;
                      for (std::size_t i = 0; i < Ho * Wo; ++i) acc += gy[i];
                      GB[co] += acc;
                    }
                  }
                }
                if (!GX && !GW) return;
                for (std::size_t n = 0; n < N; ++n) {
                  for (std::size_t co = 0; co < Co; ++co) {
                    const double* gy = G + (n * Co + co) * Ho * Wo;
                    for (std::size_t ci = 0; ci < Ci; ++ci) {
                      const double* xc = X + (n * Ci + ci) * H * W;
                      double* gxc = GX ? GX + (n * Ci + ci) * H * W : nullptr;
                      for (std::size_t kh = 0; kh < K; ++kh) {
                        for (std::size_t kw = 0; kw < K; ++kw) {
                          const std::size_t widx = ((co * Ci + ci) * K + kh) * K + kw;
                          const double w = Wt[widx];
                          double gw = 0.0;
                          for (std::size_t oh = 0; oh < Ho; ++oh) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - P;
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t ow = 0; ow < Wo; ++ow) {
                              const std::ptrdiff_t iwp = static_cast<std::ptrdiff_t>(ow * stride + kw) - P;
                              if (iwp < 0 || iwp >= static_cast<std::ptrdiff_t>(W)) continue;
                              const double gval = gy[oh * Wo + ow];
                              gw += gval * xc[ih * W + iwp];
                              if (gxc) gxc[ih * W + iwp] += gval * w;
                            }
                          }
                          if (GW) GW[widx] += gw;
                        }
                      }
                    }
                  }
                }
              });
}

Var upsample2x(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) shape_fail(OpKind::upsample2x, "expects [N,C,H,W], got " + shape_string(xv.shape()));
  const std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, C, 2 * H, 2 * W});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* src = xv.data().data() + nc * H * W;
    double* dst = out.data().data() + nc * 4 * H * W;
    for (std::size_t h = 0; h < 2 * H; ++h) {
      for (std::size_t w = 0; w < 2 * W; ++w) dst[h * 2 * W + w] = src[(h / 2) * W + w / 2];
    }
  }
  const std::size_t ix = x.index();
  return make(x.graph(), OpKind::upsample2x, {ix}, std::move(out), [ix, N, C, H, W](Graph& gr, std::size_t self) {
    const double* go = gr.grad_mut(self).data().data();
    double* gx = gr.grad_mut(ix).data().data();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const double* src = go + nc * 4 * H * W;
      double* dst = gx + nc * H * W;
      for (std::size_t h = 0; h < 2 * H; ++h) {
        for (std::size_t w = 0; w < 2 * W; ++w) dst[(h / 2) * W + w / 2] += src[h * 2 * W + w];
      }
    }
  });
}

}  // namespace sthq::ad
