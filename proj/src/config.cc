// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/harness/config.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "recfound/error.h"

namespace recfound {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim_copy(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_f64(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim_copy(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

// Accessors keep the table below compact.
#define RF_SIZE(NAME, EXPR, HELP)                                                                      \
  ConfigKey {                                                                                          \
    NAME, HELP, [](RunConfig& c, const std::string& v) { c.EXPR = parse_u64(NAME, v); },               \
        [](const RunConfig& c) { return std::to_string(c.EXPR); }                                      \
  }
#define RF_DOUBLE(NAME, EXPR, HELP)                                                                    \
  ConfigKey {                                                                                          \
    NAME, HELP, [](RunConfig& c, const std::string& v) { c.EXPR = parse_f64(NAME, v); },               \
        [](const RunConfig& c) { return format_double(c.EXPR); }                                       \
  }
#define RF_BOOL(NAME, EXPR, HELP)                                                                      \
  ConfigKey {                                                                                          \
    NAME, HELP, [](RunConfig& c, const std::string& v) { c.EXPR = parse_bool(NAME, v); },              \
        [](const RunConfig& c) { return std::string(c.EXPR ? "true" : "false"); }                      \
  }

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k = {
      RF_SIZE("backbone.d_model", model.backbone.d_model, "hidden width"),
      RF_SIZE("backbone.n_layers", model.backbone.n_layers, "transformer blocks"),
      RF_SIZE("backbone.n_heads", model.backbone.n_heads, "attention heads"),
      RF_SIZE("backbone.d_ff", model.backbone.d_ff, "MLP width"),
      RF_SIZE("backbone.max_seq_len", model.backbone.max_seq_len, "maximum tokens per sequence"),
      RF_DOUBLE("backbone.dropout", model.backbone.dropout, "residual dropout"),
      RF_SIZE("backbone.seed", model.backbone.seed, "seed of the frozen base weights"),
      RF_BOOL("backbone.truncate", model.backbone.truncate, "truncate over-long inputs instead of failing"),
      RF_BOOL("tmole.enabled", model.tmole.enabled, "routed experts; false gives one shared adapter"),
      RF_SIZE("tmole.embedding_experts", model.tmole.embedding_experts, "embedding-only experts (E)"),
      RF_SIZE("tmole.shared_experts", model.tmole.shared_experts, "shared experts (S)"),
      RF_SIZE("tmole.generative_experts", model.tmole.generative_experts, "generative-only experts (G)"),
      RF_SIZE("tmole.rank", model.tmole.rank, "expert rank r"),
      RF_DOUBLE("tmole.alpha", model.tmole.alpha, "adapter alpha (scaling alpha/r)"),
      RF_DOUBLE("tmole.dropout", model.tmole.dropout, "adapter dropout"),
      ConfigKey{"tmole.dropout_site", "input or output",
                [](RunConfig& c, const std::string& v) {
                  if (v == "input") {
                    c.model.tmole.dropout_site = DropoutSite::kInput;
                  } else if (v == "output") {
                    c.model.tmole.dropout_site = DropoutSite::kOutput;
                  } else {
                    throw ConfigError("tmole.dropout_site: expected input or output, got '" + v + "'");
                  }
                },
                [](const RunConfig& c) {
                  return std::string(c.model.tmole.dropout_site == DropoutSite::kInput ? "input" : "output");
                }},
      RF_SIZE("tmole.task_embed_dim", model.tmole.task_embed_dim, "task embedding width"),
      RF_BOOL("tmole.hook_mlp", model.tmole.hook_mlp, "also attach experts to MLP projections"),
      RF_BOOL("scheduler.enabled", scheduler.enabled, "adaptive ratios; false gives uniform ratios"),
      RF_SIZE("scheduler.history", scheduler.history, "loss/slope window L"),
      RF_DOUBLE("scheduler.warmup_ratio", scheduler.warmup_ratio, "warmup fraction of total steps"),
      RF_DOUBLE("scheduler.tau", scheduler.tau, "balancing temperature"),
      RF_BOOL("scheduler.beta_history_from_warmup", scheduler.beta_history_from_warmup,
              "start the balancing history at the end of warmup"),
      RF_SIZE("probe.size", probe.size, "validation samples per task per probe"),
      RF_SIZE("probe.stride", probe.stride, "steps between probes"),
      RF_BOOL("probe.resample", probe.resample, "draw a fresh probe subset each time"),
      RF_DOUBLE("optim.lr", optim.lr, "peak learning rate"),
      RF_DOUBLE("optim.beta1", optim.beta1, "first-moment decay"),
      RF_DOUBLE("optim.beta2", optim.beta2, "second-moment decay"),
      RF_DOUBLE("optim.eps", optim.eps, "denominator epsilon"),
      RF_DOUBLE("optim.weight_decay", optim.weight_decay, "decoupled weight decay"),
      RF_DOUBLE("optim.clip_norm", optim.clip_norm, "global gradient norm clip (0 disables)"),
      RF_SIZE("optim.total_steps", optim.total_steps, "training steps"),
      RF_SIZE("train.batch_embedding", train.batch_embedding, "embedding triplets per step"),
      RF_SIZE("train.batch_generative", train.batch_generative, "generative samples per step"),
      RF_DOUBLE("train.temperature", train.temperature, "contrastive temperature"),
      ConfigKey{"train.mode", "sum or alternate",
                [](RunConfig& c, const std::string& v) {
                  if (v == "sum") {
                    c.train.mode = StepMode::kSum;
                  } else if (v == "alternate") {
                    c.train.mode = StepMode::kAlternate;
                  } else {
                    throw ConfigError("train.mode: expected sum or alternate, got '" + v + "'");
                  }
                },
                [](const RunConfig& c) { return std::string(c.train.mode == StepMode::kSum ? "sum" : "alternate"); }},
      RF_SIZE("train.checkpoint_every", train.checkpoint_every, "checkpoint interval (0: automatic)"),
      RF_SIZE("train.eval_max_new_tokens", train.eval_max_new_tokens, "greedy decoding budget"),
      RF_DOUBLE("merge.density", merge.density, "fraction of delta entries kept per tensor"),
      RF_BOOL("merge.after_train", merge.after_train, "write a merged checkpoint when training ends"),
      RF_BOOL("merge.include_task_embedding", merge.include_task_embedding, "merge the task embedding table"),
      ConfigKey{"data.embedding_tasks", "comma-separated embedding task names",
                [](RunConfig& c, const std::string& v) { c.embedding_tasks = parse_list(v); },
                [](const RunConfig& c) { return join(c.embedding_tasks); }},
      ConfigKey{"data.generative_tasks", "comma-separated generative task names",
                [](RunConfig& c, const std::string& v) { c.generative_tasks = parse_list(v); },
                [](const RunConfig& c) { return join(c.generative_tasks); }},
      ConfigKey{"data.dir", "dataset directory", [](RunConfig& c, const std::string& v) { c.data_dir = v; },
                [](const RunConfig& c) { return c.data_dir.string(); }},
      ConfigKey{"run.out", "output directory", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
                [](const RunConfig& c) { return c.out_dir.string(); }},
      RF_SIZE("run.seed", seed, "run seed"),
  };
  return k;
}

#undef RF_SIZE
#undef RF_DOUBLE
#undef RF_BOOL

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(cfg, trim_copy(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim_copy(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set_config_value(cfg, trim_copy(t.substr(0, eq)), trim_copy(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

std::string config_echo(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

TaskRegistry RunConfig::registry() const {
  TaskRegistry r;
  for (const auto& t : embedding_tasks) r.add(t, Branch::kEmbedding);
  for (const auto& t : generative_tasks) r.add(t, Branch::kGenerative);
  return r;
}

SchedulerConfig RunConfig::scheduler_config() const {
  SchedulerConfig s = scheduler;
  s.total_steps = optim.total_steps;
  return s;
}

std::size_t RunConfig::warmup_steps() const { return scheduler_config().warmup_steps(); }

std::size_t RunConfig::checkpoint_interval() const {
  if (train.checkpoint_every > 0) return train.checkpoint_every;
  return std::max<std::size_t>(optim.total_steps / 10, 50);
}

void RunConfig::validate() const {
  model.backbone.validate();
  if (model.tmole.enabled) {
    const std::size_t minw = std::min(model.backbone.d_model, model.tmole.hook_mlp ? model.backbone.d_ff : model.backbone.d_model);
    model.tmole.validate(minw);
  } else {
    model.tmole.validate(model.backbone.d_model);
  }
  scheduler_config().validate();
  merge.validate();
  if (embedding_tasks.empty() && generative_tasks.empty()) throw ConfigError("no tasks configured");
  if (optim.total_steps == 0) throw ConfigError("optim.total_steps must be positive");
  if (!(optim.lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (optim.beta1 < 0.0 || optim.beta1 >= 1.0 || optim.beta2 < 0.0 || optim.beta2 >= 1.0) {
    throw ConfigError("optim.beta1 and optim.beta2 must be in [0, 1)");
  }
  if (!(train.temperature > 0.0)) throw ConfigError("train.temperature must be positive");
  if (!embedding_tasks.empty() && train.batch_embedding < embedding_tasks.size()) {
    throw ConfigError("train.batch_embedding (" + std::to_string(train.batch_embedding) +
                      ") is smaller than the number of embedding tasks");
  }
  if (!generative_tasks.empty() && train.batch_generative < generative_tasks.size()) {
    throw ConfigError("train.batch_generative (" + std::to_string(train.batch_generative) +
                      ") is smaller than the number of generative tasks");
  }
  if (probe.size == 0 || probe.stride == 0) throw ConfigError("probe.size and probe.stride must be positive");
}

}  // namespace recfound
