// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "recfound/harness/config.h"
#include "recfound/numerics/param_store.h"
#include "recfound/scheduler/scheduler.h"

namespace recfound {

// Decoupled-weight-decay Adam over the trainable entries of a store.
class AdamW {
 public:
  explicit AdamW(const OptimConfig& cfg) : cfg_(cfg) {}
  void step(ParamStore<float>& params, const ParamStore<float>& grads, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  OptimConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<float>> m_, v_;
};

// Scales every gradient by min(1, max_norm / ||g||); returns the pre-clip norm.
double clip_global_norm(ParamStore<float>& grads, double max_norm);

// Linear warmup to the peak rate over `warmup` steps, constant afterwards.
double learning_rate(const OptimConfig& cfg, std::size_t warmup, std::size_t step);

// CSV headers shared by the trainer and sched-sim.
inline constexpr const char* kValLossHeader = "step,task,branch,loss";
inline constexpr const char* kRatioHeader = "step,branch,task,omega,beta,gamma_inter,gamma_intra,alpha,count";
inline constexpr const char* kMetricsHeader = "step,branch,task,split,loss,omega,beta,alpha";

// ratios.csv rows for one scheduler update (one row per task).
std::string ratio_rows(const BranchScheduler& sched, const BranchUpdate& u, std::size_t batch);

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::optional<std::filesystem::path> merged_checkpoint;
  std::size_t steps = 0;
  double seconds = 0.0;
  std::map<std::string, double> initial_val;  // task -> loss at step 0
  std::map<std::string, double> final_val;    // task -> loss after the last step
  double final_mean_val = 0.0;
};

// Writes to cfg.out_dir: config.txt, val_losses.csv, ratios.csv, metrics.csv,
// checkpoints/step_<n> (step_0 is the merge base), checkpoints/best_<branch>,
// final/ and, unless disabled, merged/.
TrainResult train(const RunConfig& cfg, std::ostream* log);

}  // namespace recfound
