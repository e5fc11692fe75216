// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "recfound/numerics/graph.h"

namespace recfound {

// Builds a graph over the given parameters and returns its scalar loss node.
template <typename T>
using LossBuilder = std::function<typename Graph<T>::Id(Graph<T>&)>;

template <typename T>
struct ForwardBackward {
  T loss{};
  ParamStore<T> grads;  // exactly the trainable names of the input store
};

template <typename T>
ForwardBackward<T> forward_backward(const LossBuilder<T>& build, const ParamStore<T>& params) {
  Graph<T> g(params);
  auto loss = build(g);
  ForwardBackward<T> out;
  out.loss = g.scalar(loss);
  out.grads = g.backward(loss);
  return out;
}

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_error() const;
  bool passed(double tolerance) const { return max_error() < tolerance; }
};

// |a - n| / max(|a|, |n|, 1e-8).
double grad_rel_error(double analytic, double numeric);

// Keeps the worst entry seen so far.
void note_grad_entry(GradCheckEntry& entry, std::size_t index, double analytic, double numeric);

// Central-difference verification of every trainable parameter entry.
// Analytic gradients come from a 64-bit graph. Each entry is first probed in
// 64-bit; when that difference is not conclusive (error above 1e-6, which
// happens for near-zero gradients where round-off dominates) the perturbed
// losses are re-evaluated in extended precision and that result is kept.
// `build` must accept both Graph<double>& and Graph<long double>&.
// Parameters the graph never reads have an exact zero gradient and are
// reported without probing.
template <typename Build>
GradCheckReport grad_check(const Build& build, const ParamStore<double>& params, double eps) {
  using Ext = long double;
  constexpr double kConclusive = 1e-6;
  if (!(eps > 0.0)) throw ConfigError("grad_check: step size must be positive");
  Graph<double> g(params);
  const auto loss = build(g);
  const ParamStore<double> analytic = g.backward(loss);
  ParamStore<double> probe = params;
  ParamStore<Ext> probe_ext = params.template cast<Ext>();
  auto central = [&]<typename T>(ParamStore<T>& store, Tensor<T>& p, std::size_t i) {
    const T saved = p[i];
    const T h = static_cast<T>(eps);
    p[i] = saved + h;
    Graph<T> gu(store, false);
    const T up = gu.scalar(build(gu));
    p[i] = saved - h;
    Graph<T> gd(store, false);
    const T down = gd.scalar(build(gd));
    p[i] = saved;
    return static_cast<double>((up - down) / (2 * h));
  };

  GradCheckReport report;
  for (const auto& entry : params.entries()) {
    if (!entry.trainable) continue;
    GradCheckEntry out{entry.name};
    if (!g.uses_param(entry.name)) {
      report.entries.push_back(std::move(out));
      continue;
    }
    const auto& ga = analytic.get(entry.name);
    auto& p = probe.get(entry.name);
    auto& pe = probe_ext.get(entry.name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      double numeric = central(probe, p, i);
      if (grad_rel_error(ga[i], numeric) > kConclusive) numeric = central(probe_ext, pe, i);
      note_grad_entry(out, i, ga[i], numeric);
    }
    report.entries.push_back(std::move(out));
  }
  return report;
}

}  // namespace recfound
