// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recfound/tmole/task.h"

namespace recfound {

// Step-wise convergence-oriented sample scheduling. One BranchScheduler per
// branch; embedding and generative states never share data.
//
// Per post-warmup update t over the branch's tasks i = 1..n:
//   alpha_i(t)      normalised OLS slope of the last L validation losses
//   gamma_inter_i   = -softmax_i(n * alpha_i / sum_k |alpha_k|)
//   gamma_intra_i   = softmax_i(-L' * alpha_i(t) / sum_{last L'} |alpha_i(s)|)
//   d(k)            = -tau * k * max_i alpha_i(k) / sum_{j<=k} max_i |alpha_i(j)|
//   beta            = min(k * softmax(d(1..k))[k], 1)
//   omega_i         = softmax_i(-beta * gamma_inter_i + (1 - beta) * gamma_intra_i)

struct SchedulerConfig {
  bool enabled = true;  // false: uniform ratios throughout (slopes still tracked)
  std::size_t history = 64;
  double warmup_ratio = 0.1;
  double tau = 10.0;
  std::size_t total_steps = 0;
  // true: the balancing-weight history starts at the first post-warmup update;
  // false: at the first update where every task has a slope.
  bool beta_history_from_warmup = true;

  std::size_t warmup_steps() const;
  void validate() const;
};

std::vector<double> softmax(std::span<const double> x);

// OLS slope of y on x divided by max(|mean(y)|, 1e-8).
double normalized_slope(std::span<const double> steps, std::span<const double> losses);

std::vector<double> inter_rate(std::span<const double> alphas);

// histories[i] holds task i's slope history, oldest first, current last.
std::vector<double> intra_inputs(const std::vector<std::vector<double>>& histories, std::size_t window);
std::vector<double> intra_rate(const std::vector<std::vector<double>>& histories, std::size_t window);

// beta from a divergence-score history (latest entry last).
double balance_weight(std::span<const double> divergence_history);

std::vector<double> sample_ratios(std::span<const double> gamma_inter, std::span<const double> gamma_intra,
                                  double beta);

// floor(B * omega_i) plus largest-remainder top-up (ties to the lower index),
// so the counts sum to B exactly.
std::vector<std::size_t> allocate_batch(std::size_t batch, std::span<const double> omega);

struct BranchUpdate {
  std::size_t step = 0;
  bool scheduled = false;  // false during warmup: omega is uniform
  std::vector<std::optional<double>> alpha;
  std::vector<double> gamma_inter;
  std::vector<double> gamma_intra;
  std::optional<double> beta;
  std::vector<double> omega;
};

class BranchScheduler {
 public:
  BranchScheduler(Branch branch, std::vector<TaskSpec> tasks, SchedulerConfig cfg);

  Branch branch() const { return branch_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const SchedulerConfig& config() const { return cfg_; }

  void record_validation(TaskId task, std::size_t step, double loss);
  std::size_t history_length(TaskId task) const;
  // Current alpha for a task; needs at least two records.
  double slope(TaskId task) const;

  // Consumes the records of `step` and refreshes omega for the next batch.
  const BranchUpdate& update(std::size_t step);
  const BranchUpdate& last_update() const { return last_; }

  std::span<const double> ratios() const { return omega_; }
  std::span<const double> divergence_history() const { return divergence_; }

 private:
  struct LossRecord {
    std::size_t step;
    double loss;
  };
  std::size_t local_index(TaskId task) const;

  Branch branch_;
  std::vector<TaskSpec> tasks_;
  SchedulerConfig cfg_;
  std::vector<std::deque<LossRecord>> losses_;
  std::vector<std::deque<double>> slopes_;
  std::vector<double> divergence_;
  double divergence_denominator_ = 0.0;
  std::vector<double> omega_;
  BranchUpdate last_;
};

}  // namespace recfound
