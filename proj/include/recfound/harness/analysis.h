// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "recfound/harness/checkpoint.h"
#include "recfound/harness/config.h"
#include "recfound/numerics/autodiff.h"

namespace recfound {

// Replays a val_losses.csv trace through fresh schedulers and returns the
// ratios.csv text the trainer would have written for it.
std::string sched_sim(const std::string& val_loss_csv, const RunConfig& cfg);

// TIES merge of `inputs` relative to `base`; config and step come from the
// first input.
Checkpoint merge_checkpoints(const Checkpoint& base, const std::vector<Checkpoint>& inputs, const MergeConfig& cfg);

struct RoutingExport {
  std::vector<std::string> tasks;
  std::map<std::string, std::vector<std::vector<double>>> matrices;  // file stem -> matrix
};

// Cosine similarity of per-task routing distributions for every hooked
// projection (`<projection>`), every layer (`layer_<l>`, mean of its
// projections) and overall (`mean`).
RoutingExport routing_export(const Checkpoint& ckpt);
void write_routing_export(const RoutingExport& e, const std::filesystem::path& dir);
std::string similarity_csv(const std::vector<std::string>& tasks, const std::vector<std::vector<double>>& m);

// Finite-difference check of every loss path at toy dimensions
// (d_model 16, seq 8) in 64-bit mode. Groups: objectives, tmole.experts,
// tmole.router, task_embedding, head.
struct ModelGradCheck {
  std::map<std::string, double> group_max_error;
  std::map<std::string, std::string> group_worst;  // group -> "name[index]"
  double max_error() const;
};

ModelGradCheck model_grad_check(std::uint64_t seed, double eps = 1e-5);

}  // namespace recfound
