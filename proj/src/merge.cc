// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/merge/merge.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recfound/error.h"
#include "recfound/tmole/tmole.h"

namespace recfound {

void MergeConfig::validate() const {
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("merge density must be in (0, 1]");
}

std::size_t kept_count(std::size_t n, double density) {
  const double raw = std::ceil(density * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, std::max<std::size_t>(n, 1));
}

std::vector<double> trim(std::span<const double> values, double density) {
  const std::size_t k = kept_count(values.size(), density);
  std::vector<double> out(values.size(), 0.0);
  if (k >= values.size()) {
    std::copy(values.begin(), values.end(), out.begin());
    return out;
  }
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double ma = std::abs(values[a]), mb = std::abs(values[b]);
                      return ma != mb ? ma > mb : a < b;
                    });
  for (std::size_t i = 0; i < k; ++i) out[idx[i]] = values[idx[i]];
  return out;
}

namespace {

double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

double elect_and_mean(std::vector<double> values) {
  const double total = sorted_sum(values);
  if (total == 0.0) return 0.0;
  std::vector<double> agree;
  for (double v : values) {
    if (v != 0.0 && (v > 0.0) == (total > 0.0)) agree.push_back(v);
  }
  if (agree.empty()) return 0.0;
  // Offset from the smallest value so identical inputs return that value exactly.
  const double anchor = agree.front();
  double dev = 0.0;
  for (double v : agree) dev += v - anchor;
  return anchor + dev / static_cast<double>(agree.size());
}

DeltaSet ties_merge(const std::vector<DeltaSet>& deltas, const MergeConfig& cfg) {
  cfg.validate();
  if (deltas.empty()) throw StateError("ties_merge needs at least one checkpoint");
  const DeltaSet& ref = deltas.front();
  for (std::size_t c = 1; c < deltas.size(); ++c) {
    if (deltas[c].size() != ref.size()) {
      throw ShapeError("checkpoint " + std::to_string(c) + " has " + std::to_string(deltas[c].size()) +
                       " merge tensors, expected " + std::to_string(ref.size()));
    }
    for (const auto& [name, t] : ref) {
      auto it = deltas[c].find(name);
      if (it == deltas[c].end()) throw ShapeError("checkpoint " + std::to_string(c) + " lacks tensor '" + name + "'");
      if (it->second.shape() != t.shape()) {
        throw ShapeError("tensor '" + name + "' has shape " + shape_string(it->second.shape()) + " in checkpoint " +
                         std::to_string(c) + ", expected " + shape_string(t.shape()));
      }
    }
  }
  DeltaSet merged;
  for (const auto& [name, t] : ref) {
    std::vector<std::vector<double>> trimmed;
    trimmed.reserve(deltas.size());
    for (const auto& d : deltas) trimmed.push_back(trim(d.at(name).data(), cfg.density));
    Tensor<double> out(t.shape());
    std::vector<double> column(deltas.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (std::size_t c = 0; c < deltas.size(); ++c) column[c] = trimmed[c][i];
      out[i] = elect_and_mean(column);
    }
    merged.emplace(name, std::move(out));
  }
  return merged;
}

DeltaSet compute_delta(const ParamStore<float>& base, const ParamStore<float>& checkpoint, const MergeConfig& cfg) {
  DeltaSet delta;
  for (const auto& e : checkpoint.entries()) {
    if (!e.trainable) continue;
    if (!cfg.include_task_embedding && e.name == task_embedding_name()) continue;
    if (!base.contains(e.name)) throw ShapeError("base checkpoint lacks tensor '" + e.name + "'");
    const auto& b = base.get(e.name);
    if (b.shape() != e.value.shape()) {
      throw ShapeError("tensor '" + e.name + "' has shape " + shape_string(e.value.shape()) + " but base has " +
                       shape_string(b.shape()));
    }
    Tensor<double> d(b.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = double(e.value[i]) - double(b[i]);
    delta.emplace(e.name, std::move(d));
  }
  return delta;
}

ParamStore<float> apply_delta(const ParamStore<float>& base, const DeltaSet& delta) {
  for (const auto& [name, d] : delta) {
    if (!base.contains(name)) throw ShapeError("merge delta names unknown tensor '" + name + "'");
    if (base.get(name).shape() != d.shape()) throw ShapeError("merge delta for '" + name + "' has the wrong shape");
  }
  ParamStore<float> out;
  for (const auto& e : base.entries()) {
    auto it = delta.find(e.name);
    if (it == delta.end()) {
      out.add(e.name, e.value, e.trainable);
      continue;
    }
    Tensor<float> v(e.value.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(double(e.value[i]) + it->second[i]);
    out.add(e.name, std::move(v), e.trainable);
  }
  return out;
}

}  // namespace recfound
