// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "recfound/numerics/param_store.h"

namespace recfound {

// Per-checkpoint map from trainable parameter name to (checkpoint - base).
using DeltaSet = std::map<std::string, Tensor<double>>;

struct MergeConfig {
  double density = 0.2;  // fraction of largest-magnitude entries kept per tensor
  bool include_task_embedding = true;
  bool after_train = true;  // merge final and per-branch-best checkpoints when training ends

  void validate() const;
};

// Number of entries kept from an n-entry tensor: ceil(density * n), at least 1.
std::size_t kept_count(std::size_t n, double density);

// Zeroes all but the kept_count largest magnitudes; equal magnitudes keep the
// lower index.
std::vector<double> trim(std::span<const double> values, double density);

// Mean of `values` that share the elected sign (sign of their sum); 0 when the
// sum is 0 or nothing matches. Order-independent.
double elect_and_mean(std::vector<double> values);

DeltaSet ties_merge(const std::vector<DeltaSet>& deltas, const MergeConfig& cfg);

DeltaSet compute_delta(const ParamStore<float>& base, const ParamStore<float>& checkpoint, const MergeConfig& cfg);

// base + delta on the delta's names; every other tensor is copied unchanged.
ParamStore<float> apply_delta(const ParamStore<float>& base, const DeltaSet& delta);

}  // namespace recfound
