// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "doctest.h"
#include "oracles.h"
#include "recfound/error.h"
#include "recfound/harness/analysis.h"
#include "recfound/harness/checkpoint.h"
#include "recfound/harness/evaluate.h"

using namespace recfound;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("recfound_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RECFOUND_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.model.backbone.d_model = 16;
  cfg.model.backbone.n_heads = 2;
  cfg.model.backbone.d_ff = 32;
  cfg.model.backbone.max_seq_len = 32;
  cfg.model.tmole.rank = 4;
  cfg.model.tmole.task_embed_dim = 8;
  return cfg;
}

}  // namespace

TEST_CASE("retrieval metrics") {
  const std::vector<double> scores = {0.1, 0.9, 0.5, 0.9};
  CHECK(rank_of(scores, 1) == 1);
  CHECK(rank_of(scores, 3) == 2);  // tie with a lower index ranks ahead
  CHECK(rank_of(scores, 0) == 4);
  CHECK(mrr_at_k(1, 20) == 1.0);
  CHECK(ndcg_at_k(1, 20) == 1.0);
  CHECK(mrr_at_k(2, 20) == 0.5);
  CHECK(ndcg_at_k(3, 20) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(mrr_at_k(21, 20) == 0.0);
  CHECK(ndcg_at_k(21, 20) == 0.0);
  CHECK(recall_at_k(1, 1) == 1.0);
  CHECK(recall_at_k(2, 1) == 0.0);
}

TEST_CASE("random ranking MRR matches its closed form") {
  // Uniform rank over 100 candidates: untruncated mean is H_100 / 100,
  // truncation at 20 keeps H_20 / 100.
  CHECK(oracle::random_mrr(100, 100) == doctest::Approx(0.0519).epsilon(1e-3));
  const double expected = oracle::random_mrr(100, 20);
  CHECK(expected == doctest::Approx(0.03598).epsilon(1e-3));
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  double sum = 0.0;
  const int trials = 20000;
  std::vector<double> scores(100);
  for (int t = 0; t < trials; ++t) {
    for (auto& s : scores) s = n(rng);
    sum += mrr_at_k(rank_of(scores, 0), 20);
  }
  CHECK(sum / trials == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("generative metrics") {
  CHECK(exact_match(" 42 \n", "42"));
  CHECK_FALSE(exact_match("4 2", "42"));
  CHECK(token_f1("a b c", "a b c") == 1.0);
  CHECK(token_f1("a b", "b c") == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(token_f1("a a", "a") == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(token_f1("", "") == 1.0);
  CHECK(token_f1("x", "") == 0.0);
}

TEST_CASE("config parsing") {
  RunConfig cfg;
  apply_config_text(cfg,
                    "# comment\n"
                    "backbone.d_model = 32  # trailing\n"
                    "\n"
                    "tmole.enabled = false\n"
                    "scheduler.tau = 2.5\n"
                    "train.mode = alternate\n"
                    "data.generative_tasks = copy, reverse\n",
                    "test.conf");
  CHECK(cfg.model.backbone.d_model == 32);
  CHECK_FALSE(cfg.model.tmole.enabled);
  CHECK(cfg.scheduler.tau == 2.5);
  CHECK(cfg.train.mode == StepMode::kAlternate);
  CHECK(cfg.generative_tasks == std::vector<std::string>{"copy", "reverse"});
  try {
    apply_config_text(cfg, "backbone.d_model = 32\nbogus.key = 1\n", "x.conf");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("x.conf:2:", 0) == 0);
  }
  CHECK_THROWS_AS(apply_config_text(cfg, "backbone.d_model = many\n", "y"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(cfg, "no equals sign\n", "y"), ConfigError);

  RunConfig echoed;
  apply_config_text(echoed, config_echo(cfg), "echo");
  CHECK(config_echo(echoed) == config_echo(cfg));

  RunConfig bad = tiny_run();
  bad.model.backbone.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(2.0) == "2");
}

TEST_CASE("checkpoint round trip is byte-identical") {
  const RunConfig cfg = tiny_run();
  const auto reg = cfg.registry();
  auto params = init_params(cfg.model, reg, 5);
  params.get("head.bias")[3] = -0.0f;
  params.get("head.bias")[4] = 1e-38f;
  const auto dir = scratch("ckpt");
  const Checkpoint ck = make_checkpoint(params, cfg, 17, "unit");
  save_checkpoint(dir / "a", ck);
  const Checkpoint back = load_checkpoint(dir / "a");
  save_checkpoint(dir / "b", back);
  CHECK(read_file(dir / "a" / "manifest.txt") == read_file(dir / "b" / "manifest.txt"));
  CHECK(read_file(dir / "a" / "tensors.bin") == read_file(dir / "b" / "tensors.bin"));
  CHECK(back.step == 17);
  CHECK(back.label == "unit");
  for (const auto& e : params.entries()) {
    CHECK(back.params.get(e.name) == e.value);
    CHECK(back.params.trainable(e.name) == e.trainable);
  }
  CHECK(config_echo(checkpoint_config(back)) == config_echo(cfg));

  // A flipped byte fails the hash check.
  {
    std::fstream f(dir / "b" / "tensors.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x7f');
  }
  CHECK_THROWS(load_checkpoint(dir / "b"));
  CHECK_THROWS(load_checkpoint(dir / "missing"));
}

TEST_CASE("merging identical checkpoints reproduces them") {
  const RunConfig cfg = tiny_run();
  const auto reg = cfg.registry();
  const auto base = make_checkpoint(init_params(cfg.model, reg, 5), cfg, 0, "base");
  auto tuned = base;
  std::mt19937_64 rng(6);
  std::normal_distribution<float> n(0.0f, 0.1f);
  for (auto& e : tuned.params.entries()) {
    if (!e.trainable) continue;
    for (auto& v : e.value.data()) v += n(rng);
  }
  MergeConfig mc;
  mc.density = 1.0;
  const auto merged = merge_checkpoints(base, {tuned, tuned, tuned}, mc);
  for (const auto& e : tuned.params.entries()) CHECK(merged.params.get(e.name) == e.value);
}

TEST_CASE("routing export of an untrained model") {
  const RunConfig cfg = tiny_run();
  const auto reg = cfg.registry();
  const auto ck = make_checkpoint(init_params(cfg.model, reg, 5), cfg, 0, "init");
  const auto e = routing_export(ck);
  CHECK(e.tasks.size() == 4);
  const auto& m = e.matrices.at("mean");
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const bool same = (i < 2) == (j < 2);
      CHECK(m[i][j] == doctest::Approx(same ? 1.0 : 0.5).epsilon(1e-12));
    }
  }
  CHECK(e.matrices.count("layer_0") == 1);
  CHECK(e.matrices.count("layers.1.attn.o") == 1);
  RunConfig off = cfg;
  off.model.tmole.enabled = false;
  CHECK_THROWS_AS(routing_export(make_checkpoint(init_params(off.model, reg, 5), off, 0, "x")), StateError);
}

TEST_CASE("sched-sim reproduces the reference golden file") {
  const fs::path fx = RECFOUND_FIXTURES;
  RunConfig cfg;
  apply_config_file(cfg, fx / "sched.conf");
  const std::string out = sched_sim(read_file(fx / "sched_trace.csv"), cfg);
  CHECK(out == read_file(fx / "sched_golden.csv"));

  const auto dir = scratch("sim");
  CHECK(run_cli("sched-sim --trace " + (fx / "sched_trace.csv").string() + " --config " +
                (fx / "sched.conf").string() + " --out " + (dir / "r.csv").string()) == 0);
  CHECK(read_file(dir / "r.csv") == read_file(fx / "sched_golden.csv"));
  // Same inputs again: same output.
  CHECK(sched_sim(read_file(fx / "sched_trace.csv"), cfg) == out);
}

TEST_CASE("sched-sim rejects malformed traces") {
  RunConfig cfg;
  const std::string head = "step,task,branch,loss\n";
  try {
    sched_sim(head + "0,a,embedding,1.0\n1,a,embedding,oops\n", cfg);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(sched_sim("", cfg), DataError);
  CHECK_THROWS_AS(sched_sim("a,b\n", cfg), DataError);
  CHECK_THROWS_AS(sched_sim(head + "1,a,embedding,1\n0,a,embedding,1\n", cfg), DataError);
  CHECK_THROWS_AS(sched_sim(head + "0,a,embedding,1\n0,b,embedding,1\n1,a,embedding,1\n", cfg), DataError);
  CHECK_THROWS_AS(sched_sim(head + "0,a,sideways,1\n", cfg), DataError);
}

TEST_CASE("command line exit codes") {
  const auto dir = scratch("cli");
  CHECK(run_cli("--bogus-flag") == 2);
  CHECK(run_cli("train --seed 1 --backbone.d_model nope") == 3);
  CHECK(run_cli("sched-sim --trace " + (dir / "missing.csv").string()) != 0);
  CHECK(run_cli("gen-data --seed 7 --out " + (dir / "d").string() + " --train 40 --val 8 --test 8") == 0);
  CHECK(fs::exists(dir / "d" / "manifest.json"));
  const std::string train = "train --config " + std::string(RECFOUND_CONFIGS) + "/desk.conf --seed 7 --data.dir " +
                            (dir / "d").string() + " --run.out " + (dir / "run").string() +
                            " --optim.total_steps 6 --probe.size 4";
  CHECK(run_cli(train) == 0);
  CHECK(fs::exists(dir / "run" / "final" / "manifest.txt"));
  CHECK(fs::exists(dir / "run" / "merged" / "manifest.txt"));
  CHECK(run_cli("eval --checkpoint " + (dir / "run" / "final").string() + " --data " + (dir / "d").string() +
                " --out " + (dir / "eval.csv").string()) == 0);
  CHECK(read_file(dir / "eval.csv").rfind("task,branch,metric,value\n", 0) == 0);
  CHECK(run_cli("export-routing --checkpoint " + (dir / "run" / "final").string() + " --out " +
                (dir / "routing").string()) == 0);
  CHECK(fs::exists(dir / "routing" / "mean.csv"));
  CHECK(run_cli("eval --checkpoint " + (dir / "nowhere").string() + " --data " + (dir / "d").string()) != 0);
}
