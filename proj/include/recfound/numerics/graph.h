// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recfound/numerics/param_store.h"
#include "recfound/numerics/tensor.h"

namespace recfound {

// Gradient convention (shared by every module):
//   * activations are row matrices: one token (or one sample) per row;
//   * a weight W has shape (out, in) and maps a row x to W x, so a layer
//     computes Y = X W^T;
//   * dL/dW has the shape of W and equals sum over rows of dy x^T.
//
// The graph is a tape: each op evaluates eagerly, records its output, and
// registers a closure that pushes the output gradient into its inputs.
// Every op output is checked for NaN/Inf; a failure reports the node path.

struct AttentionLayout {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t heads = 1;
  bool causal = true;
  std::vector<std::uint8_t> key_mask;  // batch*seq, 1 = real token
};

template <typename T>
class Graph {
 public:
  using Id = std::size_t;
  using Scalar = T;

  // grad_enabled = false builds a forward-only graph: no parameter requires a
  // gradient, so no backward closures are recorded.
  explicit Graph(const ParamStore<T>& params, bool grad_enabled = true)
      : params_(&params), grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  class Scope {
   public:
    Scope(Graph& g, const std::string& name) : g_(&g) { g_->scopes_.push_back(name); }
    ~Scope() { g_->scopes_.pop_back(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* g_;
  };
  Scope scope(const std::string& name) { return Scope(*this, name); }

  // Leaves.
  Id input(Tensor<T> value, std::string_view label);
  Id param(const std::string& name);

  // Dense ops.
  Id linear(Id x, Id w);  // x (n, in), w (out, in) -> (n, out)
  Id add(Id a, Id b);
  Id add_bias(Id x, Id bias);  // bias has x.cols() entries, broadcast over rows
  Id mul(Id a, Id b);
  Id scale(Id x, T c);
  Id tanh(Id x);
  Id gelu(Id x);
  Id layer_norm(Id x, T eps = T(1e-5));
  Id gather_rows(Id table, std::vector<std::size_t> ids);
  Id concat_rows(Id a, Id b);
  Id split_rows(Id x, std::size_t begin, std::size_t count);

  // Row-wise softmax restricted to entries with keep=1; the rest are exactly 0.
  Id masked_softmax(Id logits, std::vector<std::uint8_t> keep);
  // out[i] = h[i] * s * gates[row_group[i], column]
  Id gate_rows(Id h, Id gates, std::vector<std::size_t> row_group, std::size_t column, T s);
  // Multi-head softmax attention; rows of q/k/v are (batch, seq) flattened.
  Id attention(Id q, Id k, Id v, AttentionLayout layout);
  // (batch*seq, d) -> (batch, d), averaging rows with mask=1.
  Id mean_pool(Id h, std::size_t batch, std::size_t seq, std::span<const std::uint8_t> mask);
  Id l2_normalize(Id x);
  // Per-row negative log-likelihood of targets[i] for each selected row.
  // Output has one row per entry of `rows`.
  Id cross_entropy(Id logits, std::vector<std::size_t> rows, std::vector<std::size_t> targets);
  Id sum(Id x);
  Id mean(Id x);

  // Elementwise op with caller-supplied derivative df(x, y); used by tests.
  Id custom_unary(Id x, std::function<T(T)> f, std::function<T(T, T)> df, std::string_view label);

  const Tensor<T>& value(Id id) const;
  T scalar(Id id) const;
  const std::string& label(Id id) const { return nodes_.at(id).label; }
  bool requires_grad(Id id) const { return nodes_.at(id).requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }
  bool uses_param(const std::string& name) const { return param_nodes_.contains(name); }

  // Reverse pass from a scalar node. Returns gradients for every trainable
  // parameter in the store (zeros for parameters the graph never touched).
  ParamStore<T> backward(Id loss);

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    std::string label;
    std::string param_name;
    bool requires_grad = false;
    std::function<void()> backprop;
  };

  std::string path(std::string_view op) const;
  Id push(Tensor<T> value, std::string label, bool requires_grad);
  const Tensor<T>& val(Id id) const { return value(id); }
  Tensor<T>& grad(Id id);
  void check_finite(Id id) const;
  void check_id(Id id) const;
  [[noreturn]] void shape_fail(std::string_view op, const std::string& detail) const;

  const ParamStore<T>* params_;
  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
  std::vector<std::string> scopes_;
  std::map<std::string, Id> param_nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;
extern template class Graph<long double>;

}  // namespace recfound
