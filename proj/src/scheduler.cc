// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/scheduler/scheduler.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recfound/error.h"

namespace recfound {

std::size_t SchedulerConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-9));
}

void SchedulerConfig::validate() const {
  if (history < 2) throw ConfigError("scheduler.history must be at least 2");
  if (warmup_ratio < 0.0 || warmup_ratio > 1.0) throw ConfigError("scheduler.warmup_ratio must be in [0, 1]");
  if (!(tau > 0.0)) throw ConfigError("scheduler.tau must be positive");
}

std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) return {};
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    denom += out[i];
  }
  for (auto& v : out) v /= denom;
  return out;
}

double normalized_slope(std::span<const double> steps, std::span<const double> losses) {
  if (steps.size() != losses.size()) throw ShapeError("slope: step and loss sequences differ in length");
  const std::size_t n = steps.size();
  if (n < 2) throw StateError("slope needs at least two loss records");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += steps[i];
    my += losses[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (steps[i] - mx) * (losses[i] - my);
    sxx += (steps[i] - mx) * (steps[i] - mx);
  }
  const double raw = sxy / sxx;
  return raw / std::max(std::abs(my), 1e-8);
}

std::vector<double> inter_rate(std::span<const double> alphas) {
  if (alphas.empty()) throw StateError("inter_rate: empty task set");
  const double n = static_cast<double>(alphas.size());
  double total = 0.0;
  for (double a : alphas) total += std::abs(a);
  std::vector<double> inputs(alphas.size(), 0.0);
  if (total > 0.0) {
    for (std::size_t i = 0; i < alphas.size(); ++i) inputs[i] = n * alphas[i] / total;
  }
  auto p = softmax(inputs);
  for (auto& v : p) v = -v;
  return p;
}

std::vector<double> intra_inputs(const std::vector<std::vector<double>>& histories, std::size_t window) {
  if (histories.empty()) throw StateError("intra_rate: empty task set");
  std::vector<double> inputs(histories.size(), 0.0);
  for (std::size_t i = 0; i < histories.size(); ++i) {
    const auto& h = histories[i];
    if (h.empty()) throw StateError("intra_rate: task without slope history");
    const std::size_t lw = std::min(window, h.size());
    double denom = 0.0;
    for (std::size_t s = h.size() - lw; s < h.size(); ++s) denom += std::abs(h[s]);
    inputs[i] = denom > 0.0 ? -static_cast<double>(lw) * h.back() / denom : 0.0;
  }
  return inputs;
}

std::vector<double> intra_rate(const std::vector<std::vector<double>>& histories, std::size_t window) {
  return softmax(intra_inputs(histories, window));
}

double balance_weight(std::span<const double> divergence_history) {
  if (divergence_history.empty()) throw StateError("balance_weight: no post-warmup update yet");
  const auto p = softmax(divergence_history);
  const double k = static_cast<double>(divergence_history.size());
  return std::clamp(k * p.back(), 0.0, 1.0);
}

std::vector<double> sample_ratios(std::span<const double> gamma_inter, std::span<const double> gamma_intra,
                                  double beta) {
  if (gamma_inter.size() != gamma_intra.size()) throw ShapeError("sample_ratios: rate vectors differ in length");
  std::vector<double> x(gamma_inter.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = -beta * gamma_inter[i] + (1.0 - beta) * gamma_intra[i];
  return softmax(x);
}

std::vector<std::size_t> allocate_batch(std::size_t batch, std::span<const double> omega) {
  if (omega.empty()) throw StateError("allocate_batch: no tasks");
  std::vector<std::size_t> counts(omega.size());
  std::vector<double> remainder(omega.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < omega.size(); ++i) {
    if (omega[i] < 0.0 || !std::isfinite(omega[i])) throw StateError("allocate_batch: invalid ratio");
    const double share = static_cast<double>(batch) * omega[i];
    counts[i] = static_cast<std::size_t>(std::floor(share));
    remainder[i] = share - std::floor(share);
    assigned += counts[i];
  }
  if (assigned > batch) throw StateError("allocate_batch: ratios sum above 1");
  std::vector<std::size_t> order(omega.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < batch; ++k, ++assigned) counts[order[k % order.size()]] += 1;
  return counts;
}

BranchScheduler::BranchScheduler(Branch branch, std::vector<TaskSpec> tasks, SchedulerConfig cfg)
    : branch_(branch), tasks_(std::move(tasks)), cfg_(cfg) {
  cfg_.validate();
  if (tasks_.empty()) throw ConfigError("scheduler for branch " + std::string(branch_name(branch)) + " has no tasks");
  for (const auto& t : tasks_) {
    if (t.branch != branch) throw ConfigError("task '" + t.name + "' does not belong to this scheduler's branch");
  }
  losses_.resize(tasks_.size());
  slopes_.resize(tasks_.size());
  omega_.assign(tasks_.size(), 1.0 / static_cast<double>(tasks_.size()));
  last_.omega = omega_;
  last_.alpha.assign(tasks_.size(), std::nullopt);
}

std::size_t BranchScheduler::local_index(TaskId task) const {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (tasks_[i].id == task) return i;
  }
  throw DataError("task id " + std::to_string(task) + " is not scheduled on the " + std::string(branch_name(branch_)) +
                  " branch");
}

void BranchScheduler::record_validation(TaskId task, std::size_t step, double loss) {
  auto& h = losses_[local_index(task)];
  if (!h.empty() && step <= h.back().step) {
    throw StateError("validation record for task id " + std::to_string(task) + " at step " + std::to_string(step) +
                     " is not after the last recorded step " + std::to_string(h.back().step));
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite validation loss at step " + std::to_string(step));
  h.push_back({step, loss});
  while (h.size() > cfg_.history) h.pop_front();
}

std::size_t BranchScheduler::history_length(TaskId task) const { return losses_[local_index(task)].size(); }

double BranchScheduler::slope(TaskId task) const {
  const auto& h = losses_[local_index(task)];
  if (h.size() < 2) throw StateError("slope needs at least two loss records (still in warmup)");
  std::vector<double> x, y;
  for (const auto& r : h) {
    x.push_back(static_cast<double>(r.step));
    y.push_back(r.loss);
  }
  return normalized_slope(x, y);
}

const BranchUpdate& BranchScheduler::update(std::size_t step) {
  const std::size_t n = tasks_.size();
  BranchUpdate u;
  u.step = step;
  u.alpha.assign(n, std::nullopt);
  bool all_slopes = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (losses_[i].size() < 2) {
      all_slopes = false;
      continue;
    }
    const double a = slope(tasks_[i].id);
    u.alpha[i] = a;
    slopes_[i].push_back(a);
    while (slopes_[i].size() > cfg_.history) slopes_[i].pop_front();
  }

  const bool post_warmup = step >= cfg_.warmup_steps();
  const bool track_beta = all_slopes && (post_warmup || !cfg_.beta_history_from_warmup);
  std::optional<double> beta;
  if (track_beta) {
    double max_alpha = *u.alpha[0], max_abs = std::abs(*u.alpha[0]);
    for (std::size_t i = 1; i < n; ++i) {
      max_alpha = std::max(max_alpha, *u.alpha[i]);
      max_abs = std::max(max_abs, std::abs(*u.alpha[i]));
    }
    divergence_denominator_ += max_abs;
    const double k = static_cast<double>(divergence_.size() + 1);
    if (divergence_denominator_ > 0.0) {
      divergence_.push_back(-cfg_.tau * k * max_alpha / divergence_denominator_);
      beta = balance_weight(divergence_);
    } else {
      divergence_.push_back(0.0);
      beta = 1.0;
    }
  }

  if (cfg_.enabled && post_warmup && all_slopes) {
    std::vector<double> alphas(n);
    std::vector<std::vector<double>> hist(n);
    for (std::size_t i = 0; i < n; ++i) {
      alphas[i] = *u.alpha[i];
      hist[i].assign(slopes_[i].begin(), slopes_[i].end());
    }
    u.scheduled = true;
    u.gamma_inter = inter_rate(alphas);
    u.gamma_intra = intra_rate(hist, cfg_.history);
    u.beta = beta;
    u.omega = sample_ratios(u.gamma_inter, u.gamma_intra, *beta);
    const double total = std::accumulate(u.omega.begin(), u.omega.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-6) throw NumericError("sample ratios do not sum to 1");
  } else {
    u.omega.assign(n, 1.0 / static_cast<double>(n));
  }
  omega_ = u.omega;
  last_ = std::move(u);
  return last_;
}

}  // namespace recfound
