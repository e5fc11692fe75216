// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/numerics/graph.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

namespace recfound {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

template <typename T>
MapC<T> as_mat(const Tensor<T>& t) {
  return MapC<T>(t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
MapM<T> as_mat(Tensor<T>& t) {
  return MapM<T>(t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return Shape{rows, cols}; }

}  // namespace

template <typename T>
std::string Graph<T>::path(std::string_view op) const {
  std::string p;
  for (const auto& s : scopes_) {
    p += s;
    p += '/';
  }
  p += op;
  return p;
}

template <typename T>
void Graph<T>::check_id(Id id) const {
  if (id >= nodes_.size()) throw StateError("graph node id " + std::to_string(id) + " is not declared");
}

template <typename T>
const Tensor<T>& Graph<T>::value(Id id) const {
  check_id(id);
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

template <typename T>
T Graph<T>::scalar(Id id) const {
  const auto& v = value(id);
  if (v.size() != 1) throw ShapeError("node '" + nodes_[id].label + "' is not scalar: " + shape_string(v.shape()));
  return v[0];
}

template <typename T>
Tensor<T>& Graph<T>::grad(Id id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape(), T{0});
  return n.grad;
}

template <typename T>
void Graph<T>::shape_fail(std::string_view op, const std::string& detail) const {
  throw ShapeError("shape mismatch at node '" + path(op) + "': " + detail);
}

template <typename T>
void Graph<T>::check_finite(Id id) const {
  const auto& v = value(id);
  const Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> a(v.raw(), static_cast<Eigen::Index>(v.size()));
  // x - x is 0 for finite x and NaN otherwise.
  if ((a - a).sum() == T(0)) return;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError("non-finite value in forward pass at node '" + nodes_[id].label + "' (element " +
                         std::to_string(i) + ")");
    }
  }
}

template <typename T>
typename Graph<T>::Id Graph<T>::push(Tensor<T> value, std::string label, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.label = std::move(label);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  Id id = nodes_.size() - 1;
  check_finite(id);
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::input(Tensor<T> value, std::string_view label) {
  return push(std::move(value), path(label), false);
}

template <typename T>
typename Graph<T>::Id Graph<T>::param(const std::string& name) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return it->second;
  if (!params_->contains(name)) throw StateError("graph references undeclared parameter '" + name + "'");
  const auto& e = params_->entry(name);
  Node n;
  n.external = &e.value;
  n.label = name;
  n.param_name = name;
  n.requires_grad = e.trainable && grad_enabled_;
  nodes_.push_back(std::move(n));
  Id id = nodes_.size() - 1;
  check_finite(id);
  param_nodes_.emplace(name, id);
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::linear(Id x, Id w) {
  check_id(x);
  check_id(w);
  const auto& X = val(x);
  const auto& W = val(w);
  if (W.rank() != 2 || X.cols() != W.dim(1)) {
    shape_fail("linear", "input " + shape_string(X.shape()) + " vs weight " + shape_string(W.shape()));
  }
  const std::size_t n = X.rows(), out = W.dim(0);
  Tensor<T> Y(matrix_shape(n, out));
  as_mat(Y).noalias() = as_mat(X) * as_mat(W).transpose();
  const bool rg = requires_grad(x) || requires_grad(w);
  Id id = push(std::move(Y), path("linear"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, x, w]() {
      const auto& dY = nodes_[id].grad;
      if (requires_grad(x)) as_mat(grad(x)).noalias() += as_mat(dY) * as_mat(val(w));
      if (requires_grad(w)) as_mat(grad(w)).noalias() += as_mat(dY).transpose() * as_mat(val(x));
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::add(Id a, Id b) {
  check_id(a);
  check_id(b);
  const auto& A = val(a);
  const auto& B = val(b);
  if (A.size() != B.size() || A.cols() != B.cols()) {
    shape_fail("add", shape_string(A.shape()) + " + " + shape_string(B.shape()));
  }
  Tensor<T> Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += B[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  Id id = push(std::move(Y), path("add"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, a, b]() {
      const auto& dY = nodes_[id].grad;
      for (Id in : {a, b}) {
        if (!requires_grad(in)) continue;
        auto& g = grad(in);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dY[i];
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::add_bias(Id x, Id bias) {
  check_id(x);
  check_id(bias);
  const auto& X = val(x);
  const auto& b = val(bias);
  if (b.size() != X.cols()) shape_fail("add_bias", shape_string(X.shape()) + " + bias " + shape_string(b.shape()));
  Tensor<T> Y = X;
  const std::size_t c = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r) {
    for (std::size_t j = 0; j < c; ++j) Y[r * c + j] += b[j];
  }
  const bool rg = requires_grad(x) || requires_grad(bias);
  Id id = push(std::move(Y), path("add_bias"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, x, bias]() {
      const auto& dY = nodes_[id].grad;
      if (requires_grad(x)) {
        auto& g = grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dY[i];
      }
      if (requires_grad(bias)) {
        auto& g = grad(bias);
        const std::size_t c = g.size();
        for (std::size_t r = 0; r < dY.size() / c; ++r) {
          for (std::size_t j = 0; j < c; ++j) g[j] += dY[r * c + j];
        }
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::mul(Id a, Id b) {
  check_id(a);
  check_id(b);
  const auto& A = val(a);
  const auto& B = val(b);
  if (A.size() != B.size() || A.cols() != B.cols()) {
    shape_fail("mul", shape_string(A.shape()) + " * " + shape_string(B.shape()));
  }
  Tensor<T> Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= B[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  Id id = push(std::move(Y), path("mul"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, a, b]() {
      const auto& dY = nodes_[id].grad;
      if (requires_grad(a)) {
        auto& g = grad(a);
        const auto& Bv = val(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dY[i] * Bv[i];
      }
      if (requires_grad(b)) {
        auto& g = grad(b);
        const auto& Av = val(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dY[i] * Av[i];
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::scale(Id x, T c) {
  check_id(x);
  Tensor<T> Y = val(x);
  for (auto& v : Y.data()) v *= c;
  const bool rg = requires_grad(x);
  Id id = push(std::move(Y), path("scale"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, x, c]() {
      const auto& dY = nodes_[id].grad;
      auto& g = grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dY[i] * c;
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::tanh(Id x) {
  check_id(x);
  Tensor<T> Y = val(x);
  for (auto& v : Y.data()) v = std::tanh(v);
  const bool rg = requires_grad(x);
  Id id = push(std::move(Y), path("tanh"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, x]() {
      const auto& dY = nodes_[id].grad;
      const auto& Yv = nodes_[id].value;
      auto& g = grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dY[i] * (T(1) - Yv[i] * Yv[i]);
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::gelu(Id x) {
  check_id(x);
  const T k = T(0.7978845608028654);  // sqrt(2/pi)
  const T c = T(0.044715);
  const auto& X = val(x);
  const auto n = static_cast<Eigen::Index>(X.size());
  const Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> xa(X.raw(), n);
  auto t = std::make_shared<Eigen::Array<T, Eigen::Dynamic, 1>>((k * (xa + c * xa * xa * xa)).tanh());
  Tensor<T> Y(X.shape());
  Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(Y.raw(), n) = T(0.5) * xa * (T(1) + *t);
  const bool rg = requires_grad(x);
  Id id = push(std::move(Y), path("gelu"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, x, k, c, t]() {
      const auto& dY = nodes_[id].grad;
      const auto& Xv = val(x);
      auto& g = grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = Xv[i];
        const T ti = (*t)[static_cast<Eigen::Index>(i)];
        const T d = T(0.5) * (T(1) + ti) + T(0.5) * v * (T(1) - ti * ti) * k * (T(1) + T(3) * c * v * v);
        g[i] += dY[i] * d;
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::layer_norm(Id x, T eps) {
  check_id(x);
  const auto& X = val(x);
  const std::size_t n = X.rows(), c = X.cols();
  Tensor<T> Y(X.shape());
  std::vector<T> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = X.raw() + r * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(c);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    T* yr = Y.raw() + r * c;
    for (std::size_t j = 0; j < c; ++j) yr[j] = (xr[j] - mu) * inv_std[r];
  }
  const bool rg = requires_grad(x);
  Id id = push(std::move(Y), path("layer_norm"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, x, inv_std = std::move(inv_std)]() {
      const auto& dY = nodes_[id].grad;
      const auto& Yv = nodes_[id].value;
      auto& g = grad(x);
      const std::size_t c = Yv.cols();
      for (std::size_t r = 0; r < Yv.rows(); ++r) {
        const T* dy = dY.raw() + r * c;
        const T* y = Yv.raw() + r * c;
        T mean_dy = 0, mean_dyy = 0;
        for (std::size_t j = 0; j < c; ++j) {
          mean_dy += dy[j];
          mean_dyy += dy[j] * y[j];
        }
        mean_dy /= T(c);
        mean_dyy /= T(c);
        T* gr = g.raw() + r * c;
        for (std::size_t j = 0; j < c; ++j) gr[j] += inv_std[r] * (dy[j] - mean_dy - y[j] * mean_dyy);
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::gather_rows(Id table, std::vector<std::size_t> ids) {
  check_id(table);
  const auto& Tb = val(table);
  const std::size_t c = Tb.cols();
  if (ids.empty()) shape_fail("gather_rows", "empty index list");
  for (std::size_t i : ids) {
    if (i >= Tb.rows()) {
      shape_fail("gather_rows", "row " + std::to_string(i) + " out of range for table " + shape_string(Tb.shape()));
    }
  }
  Tensor<T> Y(matrix_shape(ids.size(), c));
  for (std::size_t r = 0; r < ids.size(); ++r) std::copy_n(Tb.raw() + ids[r] * c, c, Y.raw() + r * c);
  const bool rg = requires_grad(table);
  Id id = push(std::move(Y), path("gather_rows"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, table, ids = std::move(ids)]() {
      const auto& dY = nodes_[id].grad;
      auto& g = grad(table);
      const std::size_t c = g.cols();
      for (std::size_t r = 0; r < ids.size(); ++r) {
        for (std::size_t j = 0; j < c; ++j) g[ids[r] * c + j] += dY[r * c + j];
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::concat_rows(Id a, Id b) {
  check_id(a);
  check_id(b);
  const auto& A = val(a);
  const auto& B = val(b);
  if (A.cols() != B.cols()) shape_fail("concat_rows", shape_string(A.shape()) + " ++ " + shape_string(B.shape()));
  Tensor<T> Y(matrix_shape(A.rows() + B.rows(), A.cols()));
  std::copy_n(A.raw(), A.size(), Y.raw());
  std::copy_n(B.raw(), B.size(), Y.raw() + A.size());
  const bool rg = requires_grad(a) || requires_grad(b);
  Id id = push(std::move(Y), path("concat_rows"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, a, b]() {
      const auto& dY = nodes_[id].grad;
      const std::size_t na = val(a).size();
      if (requires_grad(a)) {
        auto& g = grad(a);
        for (std::size_t i = 0; i < na; ++i) g[i] += dY[i];
      }
      if (requires_grad(b)) {
        auto& g = grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dY[na + i];
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::split_rows(Id x, std::size_t begin, std::size_t count) {
  check_id(x);
  const auto& X = val(x);
  const std::size_t c = X.cols();
  if (count == 0 || begin + count > X.rows()) {
    shape_fail("split_rows", "rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                 ") of " + shape_string(X.shape()));
  }
  Tensor<T> Y(matrix_shape(count, c));
  std::copy_n(X.raw() + begin * c, count * c, Y.raw());
  const bool rg = requires_grad(x);
  Id id = push(std::move(Y), path("split_rows"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, x, begin]() {
      const auto& dY = nodes_[id].grad;
      auto& g = grad(x);
      const std::size_t off = begin * g.cols();
      for (std::size_t i = 0; i < dY.size(); ++i) g[off + i] += dY[i];
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::masked_softmax(Id logits, std::vector<std::uint8_t> keep) {
  check_id(logits);
  const auto& Z = val(logits);
  if (keep.size() != Z.size()) shape_fail("masked_softmax", "mask length does not match " + shape_string(Z.shape()));
  const std::size_t n = Z.rows(), c = Z.cols();
  Tensor<T> P(Z.shape(), T{0});
  for (std::size_t r = 0; r < n; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (keep[r * c + j]) mx = std::max(mx, Z[r * c + j]);
    }
    if (!std::isfinite(mx)) shape_fail("masked_softmax", "row " + std::to_string(r) + " has every entry masked");
    T denom = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (keep[r * c + j]) {
        P[r * c + j] = std::exp(Z[r * c + j] - mx);
        denom += P[r * c + j];
      }
    }
    for (std::size_t j = 0; j < c; ++j) P[r * c + j] /= denom;
  }
  const bool rg = requires_grad(logits);
  Id id = push(std::move(P), path("masked_softmax"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, logits, keep = std::move(keep)]() {
      const auto& dP = nodes_[id].grad;
      const auto& Pv = nodes_[id].value;
      auto& g = grad(logits);
      const std::size_t c = Pv.cols();
      for (std::size_t r = 0; r < Pv.rows(); ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += Pv[r * c + j] * dP[r * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          if (keep[r * c + j]) g[r * c + j] += Pv[r * c + j] * (dP[r * c + j] - dot);
        }
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::gate_rows(Id h, Id gates, std::vector<std::size_t> row_group, std::size_t column,
                                          T s) {
  check_id(h);
  check_id(gates);
  const auto& H = val(h);
  const auto& G = val(gates);
  if (row_group.size() != H.rows()) shape_fail("gate_rows", "row_group length does not match " + shape_string(H.shape()));
  if (column >= G.cols()) shape_fail("gate_rows", "column out of range for gates " + shape_string(G.shape()));
  for (std::size_t grp : row_group) {
    if (grp >= G.rows()) shape_fail("gate_rows", "group index out of range for gates " + shape_string(G.shape()));
  }
  const std::size_t c = H.cols();
  Tensor<T> Y = H;
  for (std::size_t r = 0; r < H.rows(); ++r) {
    const T f = s * G.at(row_group[r], column);
    for (std::size_t j = 0; j < c; ++j) Y[r * c + j] *= f;
  }
  const bool rg = requires_grad(h) || requires_grad(gates);
  Id id = push(std::move(Y), path("gate_rows"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, h, gates, row_group = std::move(row_group), column, s]() {
      const auto& dY = nodes_[id].grad;
      const auto& Hv = val(h);
      const auto& Gv = val(gates);
      const std::size_t c = Hv.cols();
      if (requires_grad(h)) {
        auto& g = grad(h);
        for (std::size_t r = 0; r < Hv.rows(); ++r) {
          const T f = s * Gv.at(row_group[r], column);
          for (std::size_t j = 0; j < c; ++j) g[r * c + j] += dY[r * c + j] * f;
        }
      }
      if (requires_grad(gates)) {
        auto& g = grad(gates);
        for (std::size_t r = 0; r < Hv.rows(); ++r) {
          T acc = 0;
          for (std::size_t j = 0; j < c; ++j) acc += dY[r * c + j] * Hv[r * c + j];
          g.at(row_group[r], column) += s * acc;
        }
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::attention(Id q, Id k, Id v, AttentionLayout layout) {
  check_id(q);
  check_id(k);
  check_id(v);
  const auto& Q = val(q);
  const auto& K = val(k);
  const auto& V = val(v);
  const std::size_t B = layout.batch, S = layout.seq, H = layout.heads;
  const std::size_t D = Q.cols();
  if (Q.rows() != B * S || K.rows() != B * S || V.rows() != B * S || K.cols() != D || V.cols() != D) {
    shape_fail("attention", "q " + shape_string(Q.shape()) + ", k " + shape_string(K.shape()) + ", v " +
                                shape_string(V.shape()) + " for batch " + std::to_string(B) + " x seq " +
                                std::to_string(S));
  }
  if (H == 0 || D % H != 0) shape_fail("attention", "model width " + std::to_string(D) + " not divisible by heads");
  if (layout.key_mask.size() != B * S) shape_fail("attention", "key mask length mismatch");
  const std::size_t dh = D / H;
  const T sc = T(1) / std::sqrt(T(dh));
  // probs layout: (b, h, i, j)
  std::vector<T> probs(B * H * S * S, T{0});
  Tensor<T> O(matrix_shape(B * S, D), T{0});
  const auto& mask = layout.key_mask;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < S; ++i) {
        if (!mask[b * S + i]) continue;
        T* p = probs.data() + ((b * H + h) * S + i) * S;
        const T* qi = Q.raw() + (b * S + i) * D + h * dh;
        const std::size_t jmax = layout.causal ? i + 1 : S;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < jmax; ++j) {
          if (!mask[b * S + j]) continue;
          const T* kj = K.raw() + (b * S + j) * D + h * dh;
          T s = 0;
          for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
          p[j] = s * sc;
          mx = std::max(mx, p[j]);
        }
        T denom = 0;
        for (std::size_t j = 0; j < jmax; ++j) {
          if (!mask[b * S + j]) continue;
          p[j] = std::exp(p[j] - mx);
          denom += p[j];
        }
        T* oi = O.raw() + (b * S + i) * D + h * dh;
        for (std::size_t j = 0; j < jmax; ++j) {
          if (!mask[b * S + j]) continue;
          p[j] /= denom;
          const T* vj = V.raw() + (b * S + j) * D + h * dh;
          for (std::size_t e = 0; e < dh; ++e) oi[e] += p[j] * vj[e];
        }
      }
    }
  }
  const bool rg = requires_grad(q) || requires_grad(k) || requires_grad(v);
  Id id = push(std::move(O), path("attention"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, q, k, v, layout = std::move(layout), probs = std::move(probs), dh, sc]() {
      const auto& dO = nodes_[id].grad;
      const auto& Qv = val(q);
      const auto& Kv = val(k);
      const auto& Vv = val(v);
      const std::size_t B = layout.batch, S = layout.seq, H = layout.heads, D = Qv.cols();
      const auto& mask = layout.key_mask;
      Tensor<T>* gq = requires_grad(q) ? &grad(q) : nullptr;
      Tensor<T>* gk = requires_grad(k) ? &grad(k) : nullptr;
      Tensor<T>* gv = requires_grad(v) ? &grad(v) : nullptr;
      std::vector<T> dp(S);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
          for (std::size_t i = 0; i < S; ++i) {
            if (!mask[b * S + i]) continue;
            const T* p = probs.data() + ((b * H + h) * S + i) * S;
            const T* doi = dO.raw() + (b * S + i) * D + h * dh;
            const std::size_t jmax = layout.causal ? i + 1 : S;
            T dot = 0;
            for (std::size_t j = 0; j < jmax; ++j) {
              dp[j] = 0;
              if (!mask[b * S + j]) continue;
              const T* vj = Vv.raw() + (b * S + j) * D + h * dh;
              T s = 0;
              for (std::size_t e = 0; e < dh; ++e) s += doi[e] * vj[e];
              dp[j] = s;
              dot += p[j] * s;
              if (gv) {
                T* gvj = gv->raw() + (b * S + j) * D + h * dh;
                for (std::size_t e = 0; e < dh; ++e) gvj[e] += p[j] * doi[e];
              }
            }
            const T* qi = Qv.raw() + (b * S + i) * D + h * dh;
            T* gqi = gq ? gq->raw() + (b * S + i) * D + h * dh : nullptr;
            for (std::size_t j = 0; j < jmax; ++j) {
              if (!mask[b * S + j]) continue;
              const T ds = p[j] * (dp[j] - dot) * sc;
              const T* kj = Kv.raw() + (b * S + j) * D + h * dh;
              if (gqi) {
                for (std::size_t e = 0; e < dh; ++e) gqi[e] += ds * kj[e];
              }
              if (gk) {
                T* gkj = gk->raw() + (b * S + j) * D + h * dh;
                for (std::size_t e = 0; e < dh; ++e) gkj[e] += ds * qi[e];
              }
            }
          }
        }
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::mean_pool(Id h, std::size_t batch, std::size_t seq, std::span<const std::uint8_t> mask) {
  check_id(h);
  const auto& Hv = val(h);
  if (Hv.rows() != batch * seq || mask.size() != batch * seq) {
    shape_fail("mean_pool", shape_string(Hv.shape()) + " for batch " + std::to_string(batch) + " x seq " +
                                std::to_string(seq));
  }
  const std::size_t d = Hv.cols();
  Tensor<T> Y(matrix_shape(batch, d), T{0});
  std::vector<T> inv_count(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < seq; ++t) {
      if (!mask[b * seq + t]) continue;
      ++count;
      for (std::size_t j = 0; j < d; ++j) Y[b * d + j] += Hv[(b * seq + t) * d + j];
    }
    if (count == 0) throw DataError("mean_pool at '" + path("mean_pool") + "': sample " + std::to_string(b) + " has no unmasked positions");
    inv_count[b] = T(1) / T(count);
    for (std::size_t j = 0; j < d; ++j) Y[b * d + j] *= inv_count[b];
  }
  const bool rg = requires_grad(h);
  Id id = push(std::move(Y), path("mean_pool"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, h, seq, mask = std::vector<std::uint8_t>(mask.begin(), mask.end()),
                           inv_count = std::move(inv_count)]() {
      const auto& dY = nodes_[id].grad;
      auto& g = grad(h);
      const std::size_t d = g.cols();
      for (std::size_t b = 0; b < inv_count.size(); ++b) {
        for (std::size_t t = 0; t < seq; ++t) {
          if (!mask[b * seq + t]) continue;
          for (std::size_t j = 0; j < d; ++j) g[(b * seq + t) * d + j] += dY[b * d + j] * inv_count[b];
        }
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::l2_normalize(Id x) {
  check_id(x);
  const auto& X = val(x);
  const std::size_t n = X.rows(), c = X.cols();
  Tensor<T> Y(X.shape());
  std::vector<T> inv_norm(n);
  for (std::size_t r = 0; r < n; ++r) {
    T ss = 0;
    for (std::size_t j = 0; j < c; ++j) ss += X[r * c + j] * X[r * c + j];
    if (!(ss > T(0))) {
      throw NumericError("zero-norm embedding at node '" + path("l2_normalize") + "' (row " + std::to_string(r) + ")");
    }
    inv_norm[r] = T(1) / std::sqrt(ss);
    for (std::size_t j = 0; j < c; ++j) Y[r * c + j] = X[r * c + j] * inv_norm[r];
  }
  const bool rg = requires_grad(x);
  Id id = push(std::move(Y), path("l2_normalize"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, x, inv_norm = std::move(inv_norm)]() {
      const auto& dY = nodes_[id].grad;
      const auto& Yv = nodes_[id].value;
      auto& g = grad(x);
      const std::size_t c = Yv.cols();
      for (std::size_t r = 0; r < Yv.rows(); ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += Yv[r * c + j] * dY[r * c + j];
        for (std::size_t j = 0; j < c; ++j) g[r * c + j] += (dY[r * c + j] - Yv[r * c + j] * dot) * inv_norm[r];
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::cross_entropy(Id logits, std::vector<std::size_t> rows, std::vector<std::size_t> targets) {
  check_id(logits);
  const auto& Z = val(logits);
  const std::size_t C = Z.cols();
  if (rows.size() != targets.size() || rows.empty()) {
    shape_fail("cross_entropy", "need one target per selected row and at least one row");
  }
  Tensor<T> L(matrix_shape(rows.size(), 1));
  std::vector<T> probs(rows.size() * C);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= Z.rows()) shape_fail("cross_entropy", "row index out of range for " + shape_string(Z.shape()));
    if (targets[i] >= C) {
      shape_fail("cross_entropy", "target id " + std::to_string(targets[i]) + " >= class count " + std::to_string(C));
    }
    const T* z = Z.raw() + rows[i] * C;
    T mx = *std::max_element(z, z + C);
    T denom = 0;
    T* p = probs.data() + i * C;
    for (std::size_t j = 0; j < C; ++j) {
      p[j] = std::exp(z[j] - mx);
      denom += p[j];
    }
    for (std::size_t j = 0; j < C; ++j) p[j] /= denom;
    L[i] = std::log(denom) + mx - z[targets[i]];
  }
  const bool rg = requires_grad(logits);
  Id id = push(std::move(L), path("cross_entropy"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, logits, rows = std::move(rows), targets = std::move(targets),
                           probs = std::move(probs), C]() {
      const auto& dL = nodes_[id].grad;
      auto& g = grad(logits);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        T* gz = g.raw() + rows[i] * C;
        const T* p = probs.data() + i * C;
        for (std::size_t j = 0; j < C; ++j) gz[j] += dL[i] * p[j];
        gz[targets[i]] -= dL[i];
      }
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::sum(Id x) {
  check_id(x);
  T s = 0;
  for (T v : val(x).data()) s += v;
  const bool rg = requires_grad(x);
  Id id = push(Tensor<T>(Shape{1}, std::vector<T>{s}), path("sum"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, x]() {
      const T d = nodes_[id].grad[0];
      for (auto& g : grad(x).data()) g += d;
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::mean(Id x) {
  check_id(x);
  const auto& X = val(x);
  T s = 0;
  for (T v : X.data()) s += v;
  const T inv = T(1) / T(X.size());
  const bool rg = requires_grad(x);
  Id id = push(Tensor<T>(Shape{1}, std::vector<T>{s * inv}), path("mean"), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, x, inv]() {
      const T d = nodes_[id].grad[0] * inv;
      for (auto& g : grad(x).data()) g += d;
    };
  }
  return id;
}

template <typename T>
typename Graph<T>::Id Graph<T>::custom_unary(Id x, std::function<T(T)> f, std::function<T(T, T)> df,
                                             std::string_view label) {
  check_id(x);
  Tensor<T> Y = val(x);
  for (auto& v : Y.data()) v = f(v);
  const bool rg = requires_grad(x);
  Id id = push(std::move(Y), path(label), rg);
  if (rg) {
    nodes_[id].backprop = [this, id, x, df = std::move(df)]() {
      const auto& dY = nodes_[id].grad;
      const auto& X = val(x);
      const auto& Yv = nodes_[id].value;
      auto& g = grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dY[i] * df(X[i], Yv[i]);
    };
  }
  return id;
}

template <typename T>
ParamStore<T> Graph<T>::backward(Id loss) {
  if (!grad_enabled_) throw StateError("backward called on a forward-only graph");
  check_id(loss);
  if (value(loss).size() != 1) {
    throw ShapeError("backward from non-scalar node '" + nodes_[loss].label + "' " + shape_string(value(loss).shape()));
  }
  if (requires_grad(loss)) {
    grad(loss)[0] = T(1);
    for (Id id = loss + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.empty() || !n.backprop) continue;
      n.backprop();
    }
  }
  ParamStore<T> out;
  for (const auto& e : params_->entries()) {
    if (!e.trainable) continue;
    auto it = param_nodes_.find(e.name);
    Tensor<T> g = (it != param_nodes_.end() && !nodes_[it->second].grad.empty()) ? nodes_[it->second].grad
                                                                                    : Tensor<T>(e.value.shape(), T{0});
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) throw NumericError("non-finite gradient for parameter '" + e.name + "'");
    }
    out.add(e.name, std::move(g), true);
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;
template class Graph<long double>;

}  // namespace recfound
