// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "recfound/backbone/model.h"
#include "recfound/data/data.h"
#include "recfound/merge/merge.h"
#include "recfound/scheduler/scheduler.h"

namespace recfound {

enum class StepMode { kSum, kAlternate };

struct OptimConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  std::size_t total_steps = 2000;
};

struct ProbeConfig {
  std::size_t size = 32;
  std::size_t stride = 1;
  bool resample = false;  // false: one fixed subset per task for the whole run
};

struct TrainConfig {
  std::size_t batch_embedding = 2048;
  std::size_t batch_generative = 1024;
  double temperature = 0.05;
  StepMode mode = StepMode::kSum;
  std::size_t checkpoint_every = 0;  // 0: max(total_steps / 10, 50)
  std::size_t eval_max_new_tokens = 16;
};

struct RunConfig {
  ModelConfig model;
  SchedulerConfig scheduler;
  ProbeConfig probe;
  OptimConfig optim;
  TrainConfig train;
  MergeConfig merge;
  std::vector<std::string> embedding_tasks = {"keyword-match", "attribute-match"};
  std::vector<std::string> generative_tasks = {"copy", "arithmetic-eval"};
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "run";
  std::uint64_t seed = 0;

  // Registration order: embedding tasks, then generative tasks.
  TaskRegistry registry() const;
  SchedulerConfig scheduler_config() const;
  std::size_t warmup_steps() const;
  std::size_t checkpoint_interval() const;
  void validate() const;
};

// One settable key. `get` renders the current value in config-file syntax.
struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// `key = value` lines; `#` starts a comment; blank lines ignored.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

// Every key in registry order, one `key = value` per line.
std::string config_echo(const RunConfig& cfg);

std::string format_double(double v);

}  // namespace recfound
