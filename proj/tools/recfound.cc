// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "recfound/error.h"
#include "recfound/harness/analysis.h"
#include "recfound/harness/checkpoint.h"
#include "recfound/harness/evaluate.h"
#include "recfound/harness/pipeline.h"
#include "recfound/harness/trainer.h"

namespace {

using namespace recfound;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kIo = 5,
  kNumeric = 6,
  kShape = 7,
  kState = 8,
  kCheckFailed = 9,
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage:
      return kUsage;
    case ErrorKind::kConfig:
      return kConfig;
    case ErrorKind::kData:
      return kData;
    case ErrorKind::kIo:
      return kIo;
    case ErrorKind::kNumeric:
      return kNumeric;
    case ErrorKind::kShape:
      return kShape;
    case ErrorKind::kState:
      return kState;
  }
  return kInternal;
}

bool quiet() {
  const char* v = std::getenv("RECFOUND_LOG");
  return v != nullptr && std::string(v) == "quiet";
}

// Registers every config key as `--<key>` and `--config <file>`.
struct ConfigOptions {
  std::string config_path;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    for (const auto& k : config_keys()) {
      app->add_option_function<std::string>(
          "--" + k.name, [this, name = k.name](const std::string& v) { overrides[name] = v; }, k.help);
    }
  }

  RunConfig build() const {
    RunConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
    return cfg;
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RecFound desk-scale multi-task trainer"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write synthetic train/val/test splits");
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  GenDataConfig gen_cfg;
  std::string gen_emb, gen_gen;
  gen->add_option("--seed", gen_seed, "generator seed")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--train", gen_cfg.train_per_task, "training samples per task");
  gen->add_option("--val", gen_cfg.val_per_task, "validation samples per task");
  gen->add_option("--test", gen_cfg.test_per_task, "test samples per task");
  gen->add_option("--distractors", gen_cfg.distractors, "near-miss items per embedding sample");
  gen->add_option("--embedding-tasks", gen_emb, "comma-separated embedding families");
  gen->add_option("--generative-tasks", gen_gen, "comma-separated generative rules");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  ConfigOptions train_opts;
  train_opts.attach(train_cmd);
  std::optional<std::uint64_t> train_seed;
  bool no_tmole = false, no_sched = false, no_merge = false;
  train_cmd->add_option("--seed", train_seed, "run seed")->required();
  train_cmd->add_flag("--no-tmole", no_tmole, "one shared adapter per projection, no router");
  train_cmd->add_flag("--no-s2sched", no_sched, "uniform sample ratios");
  train_cmd->add_flag("--no-merge", no_merge, "skip the post-training merge");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_split = "test", eval_out, eval_data;
  std::size_t eval_k = 20;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory (default: the run's data.dir)");
  eval_cmd->add_option("--split", eval_split, "split name");
  eval_cmd->add_option("-k", eval_k, "rank cutoff");
  eval_cmd->add_option("--out", eval_out, "metrics CSV path");

  // merge
  auto* merge_cmd = app.add_subcommand("merge", "TIES-merge checkpoints");
  std::string merge_base, merge_out;
  std::vector<std::string> merge_inputs;
  MergeConfig merge_cfg;
  bool merge_skip_embed = false;
  merge_cmd->add_option("--base", merge_base, "base checkpoint (shared initial state)")->required();
  merge_cmd->add_option("--inputs", merge_inputs, "checkpoints to merge")->required();
  merge_cmd->add_option("--density", merge_cfg.density, "fraction of entries kept per tensor");
  merge_cmd->add_flag("--exclude-task-embedding", merge_skip_embed, "leave the task embedding table at base");
  merge_cmd->add_option("--out", merge_out, "output checkpoint directory")->required();

  // sched-sim
  auto* sim_cmd = app.add_subcommand("sched-sim", "replay a validation-loss trace through the scheduler");
  ConfigOptions sim_opts;
  sim_opts.attach(sim_cmd);
  std::string sim_trace, sim_out;
  sim_cmd->add_option("--trace", sim_trace, "val_losses.csv")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--out", sim_out, "ratio CSV path (default: stdout)");

  // export-routing
  auto* route_cmd = app.add_subcommand("export-routing", "write routing similarity matrices");
  std::string route_ckpt, route_out;
  route_cmd->add_option("--checkpoint", route_ckpt, "checkpoint directory")->required();
  route_cmd->add_option("--out", route_out, "output directory")->required();

  // grad-check
  auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference gradient verification");
  std::uint64_t gc_seed = 1;
  std::size_t gc_seeds = 5;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  gc_cmd->add_option("--seed", gc_seed, "first seed");
  gc_cmd->add_option("--seeds", gc_seeds, "number of consecutive seeds");
  gc_cmd->add_option("--eps", gc_eps, "finite-difference step");
  gc_cmd->add_option("--tolerance", gc_tol, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  std::ostream* log = quiet() ? nullptr : &std::cerr;
  try {
    if (*gen) {
      if (!gen_emb.empty() || gen->count("--embedding-tasks")) {
        RunConfig tmp;
        set_config_value(tmp, "data.embedding_tasks", gen_emb);
        gen_cfg.embedding_tasks = tmp.embedding_tasks;
      }
      if (!gen_gen.empty() || gen->count("--generative-tasks")) {
        RunConfig tmp;
        set_config_value(tmp, "data.generative_tasks", gen_gen);
        gen_cfg.generative_tasks = tmp.generative_tasks;
      }
      generate_dataset(gen_out, gen_seed, gen_cfg);
      if (log) *log << "wrote dataset to " << gen_out << "\n";
    } else if (*train_cmd) {
      RunConfig cfg = train_opts.build();
      cfg.seed = *train_seed;
      if (no_tmole) cfg.model.tmole.enabled = false;
      if (no_sched) cfg.scheduler.enabled = false;
      if (no_merge) cfg.merge.after_train = false;
      const TrainResult r = train(cfg, log);
      std::cout << "steps " << r.steps << " seconds " << r.seconds << "\n";
      for (const auto& [task, loss] : r.final_val) {
        std::cout << "final_val " << task << " " << format_double(loss) << "\n";
      }
      std::cout << "final_mean_val " << format_double(r.final_mean_val) << "\n";
      std::cout << "checkpoint " << r.final_checkpoint.string() << "\n";
      if (r.merged_checkpoint) std::cout << "merged " << r.merged_checkpoint->string() << "\n";
    } else if (*eval_cmd) {
      const Checkpoint ckpt = load_checkpoint(eval_ckpt);
      RunConfig cfg = checkpoint_config(ckpt);
      if (!eval_data.empty()) cfg.data_dir = eval_data;
      const SplitData split = load_split(cfg, cfg.registry(), eval_split);
      const EvalReport report = evaluate(ckpt.params, cfg, split, eval_k);
      for (const auto& t : report.tasks) {
        for (const auto& w : t.warnings) std::cerr << "warning: " << t.task << ": " << w << "\n";
      }
      const std::string csv = report.to_csv();
      if (eval_out.empty()) {
        std::cout << csv;
      } else {
        write_text(eval_out, csv);
      }
    } else if (*merge_cmd) {
      merge_cfg.include_task_embedding = !merge_skip_embed;
      const Checkpoint base = load_checkpoint(merge_base);
      std::vector<Checkpoint> inputs;
      for (const auto& p : merge_inputs) inputs.push_back(load_checkpoint(p));
      save_checkpoint(merge_out, merge_checkpoints(base, inputs, merge_cfg));
      if (log) *log << "wrote merged checkpoint to " << merge_out << "\n";
    } else if (*sim_cmd) {
      const RunConfig cfg = sim_opts.build();
      const std::string out = sched_sim(read_text(sim_trace), cfg);
      if (sim_out.empty()) {
        std::cout << out;
      } else {
        write_text(sim_out, out);
      }
    } else if (*route_cmd) {
      write_routing_export(routing_export(load_checkpoint(route_ckpt)), route_out);
      if (log) *log << "wrote routing matrices to " << route_out << "\n";
    } else if (*gc_cmd) {
      if (!(gc_eps > 0.0)) throw ConfigError("--eps must be positive");
      bool ok = true;
      for (std::uint64_t s = gc_seed; s < gc_seed + gc_seeds; ++s) {
        const ModelGradCheck r = model_grad_check(s, gc_eps);
        for (const auto& [group, err] : r.group_max_error) {
          const bool pass = err < gc_tol;
          ok = ok && pass;
          std::cout << "seed " << s << " " << group << " max_rel_error " << err << " at " << r.group_worst.at(group)
                    << (pass ? " ok" : " FAIL") << "\n";
        }
      }
      return ok ? kOk : kCheckFailed;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}
