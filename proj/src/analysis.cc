// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/harness/analysis.h"

#include <charconv>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include "recfound/error.h"
#include "recfound/harness/pipeline.h"
#include "recfound/harness/trainer.h"
#include "recfound/objectives/objectives.h"

namespace recfound {

namespace {

struct TraceRow {
  std::size_t line;
  std::size_t step;
  std::string task;
  Branch branch;
  double loss;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<TraceRow> parse_trace(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw DataError("loss trace is empty");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kValLossHeader) {
    throw DataError("loss trace line 1: expected header '" + std::string(kValLossHeader) + "', got '" + line + "'");
  }
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    auto bad = [&](const std::string& why) {
      return DataError("loss trace line " + std::to_string(lineno) + ": " + why);
    };
    if (f.size() != 4) throw bad("expected 4 fields, got " + std::to_string(f.size()));
    TraceRow r;
    r.line = lineno;
    auto s = std::from_chars(f[0].data(), f[0].data() + f[0].size(), r.step);
    if (s.ec != std::errc() || s.ptr != f[0].data() + f[0].size()) throw bad("bad step '" + f[0] + "'");
    r.task = f[1];
    if (r.task.empty()) throw bad("empty task name");
    try {
      r.branch = parse_branch(f[2]);
    } catch (const Error&) {
      throw bad("bad branch '" + f[2] + "'");
    }
    auto l = std::from_chars(f[3].data(), f[3].data() + f[3].size(), r.loss);
    if (l.ec != std::errc() || l.ptr != f[3].data() + f[3].size()) throw bad("bad loss '" + f[3] + "'");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError("loss trace has no records");
  return rows;
}

}  // namespace

std::string sched_sim(const std::string& val_loss_csv, const RunConfig& cfg) {
  const auto rows = parse_trace(val_loss_csv);
  TaskRegistry reg;
  for (const auto& r : rows) {
    if (!reg.contains(r.task)) {
      reg.add(r.task, r.branch);
    } else if (reg.find(r.task).branch != r.branch) {
      throw DataError("loss trace line " + std::to_string(r.line) + ": task '" + r.task + "' changes branch");
    }
  }
  const SchedulerConfig scfg = cfg.scheduler_config();
  std::vector<BranchScheduler> scheds;
  std::vector<std::size_t> batches;
  for (Branch b : {Branch::kEmbedding, Branch::kGenerative}) {
    auto tasks = reg.of_branch(b);
    if (tasks.empty()) continue;
    scheds.emplace_back(b, tasks, scfg);
    batches.push_back(b == Branch::kEmbedding ? cfg.train.batch_embedding : cfg.train.batch_generative);
  }
  std::string out = std::string(kRatioHeader) + "\n";
  std::size_t i = 0;
  std::optional<std::size_t> last_step;
  while (i < rows.size()) {
    const std::size_t step = rows[i].step;
    if (last_step && step <= *last_step) {
      throw DataError("loss trace line " + std::to_string(rows[i].line) + ": step " + std::to_string(step) +
                      " is not after step " + std::to_string(*last_step));
    }
    std::size_t j = i;
    std::map<std::string, std::size_t> seen;
    while (j < rows.size() && rows[j].step == step) {
      if (seen.count(rows[j].task)) {
        throw DataError("loss trace line " + std::to_string(rows[j].line) + ": duplicate record for task '" +
                        rows[j].task + "'");
      }
      seen[rows[j].task] = j;
      ++j;
    }
    for (std::size_t s = 0; s < scheds.size(); ++s) {
      for (const auto& t : scheds[s].tasks()) {
        auto it = seen.find(t.name);
        if (it == seen.end()) {
          throw DataError("loss trace line " + std::to_string(rows[i].line) + ": step " + std::to_string(step) +
                          " lacks a record for task '" + t.name + "'");
        }
        scheds[s].record_validation(t.id, step, rows[it->second].loss);
      }
      const auto& u = scheds[s].update(step);
      out += ratio_rows(scheds[s], u, batches[s]);
    }
    last_step = step;
    i = j;
  }
  return out;
}

std::string similarity_csv(const std::vector<std::string>& tasks, const std::vector<std::vector<double>>& m) {
  std::string out = "task";
  for (const auto& t : tasks) out += "," + t;
  out += "\n";
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out += tasks[i];
    for (double v : m[i]) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

RoutingExport routing_export(const Checkpoint& ckpt) {
  const RunConfig cfg = checkpoint_config(ckpt);
  if (!cfg.model.tmole.enabled) throw StateError("checkpoint has no task router (trained with tmole.enabled = false)");
  const TaskRegistry reg = cfg.registry();
  RoutingExport e;
  for (const auto& t : reg.tasks()) e.tasks.push_back(t.name);
  const std::size_t n = reg.size();
  using Matrix = std::vector<std::vector<double>>;
  Matrix total(n, std::vector<double>(n, 0.0));
  std::map<std::size_t, std::pair<Matrix, std::size_t>> per_layer;
  const auto projections = hooked_projections(cfg.model);
  for (const auto& p : projections) {
    auto m = routing_similarity(ckpt.params, cfg.model.tmole, reg, p);
    const std::size_t layer = std::stoul(p.substr(p.find('.') + 1));
    auto& [lm, count] = per_layer[layer];
    if (lm.empty()) lm.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        lm[i][j] += m[i][j];
        total[i][j] += m[i][j];
      }
    }
    ++count;
    e.matrices[p] = std::move(m);
  }
  for (auto& [layer, lc] : per_layer) {
    auto& [lm, count] = lc;
    for (auto& row : lm) {
      for (auto& v : row) v /= double(count);
    }
    e.matrices["layer_" + std::to_string(layer)] = lm;
  }
  for (auto& row : total) {
    for (auto& v : row) v /= double(projections.size());
  }
  e.matrices["mean"] = total;
  return e;
}

void write_routing_export(const RoutingExport& e, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [stem, m] : e.matrices) {
    std::ofstream out(dir / (stem + ".csv"), std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / (stem + ".csv")).string());
    out << similarity_csv(e.tasks, m);
  }
}

Checkpoint merge_checkpoints(const Checkpoint& base, const std::vector<Checkpoint>& inputs, const MergeConfig& cfg) {
  if (inputs.empty()) throw StateError("merge needs at least one input checkpoint");
  std::vector<DeltaSet> deltas;
  for (const auto& c : inputs) deltas.push_back(compute_delta(base.params, c.params, cfg));
  Checkpoint out;
  out.params = apply_delta(base.params, ties_merge(deltas, cfg));
  out.step = inputs.front().step;
  out.seed = inputs.front().seed;
  out.label = "merged";
  out.config = inputs.front().config;
  return out;
}

double ModelGradCheck::max_error() const {
  double m = 0.0;
  for (const auto& [g, v] : group_max_error) m = std::max(m, v);
  return m;
}

namespace {

std::string group_of(const std::string& name) {
  if (name.find(".experts.") != std::string::npos) return "tmole.experts";
  if (name.find(".router.") != std::string::npos) return "tmole.router";
  if (name == task_embedding_name()) return "task_embedding";
  if (name.rfind("head.", 0) == 0) return "head";
  return "objectives";
}

std::string random_text(std::mt19937_64& rng, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('a' + rng() % 26));
  return s;
}

void merge_report(ModelGradCheck& out, const GradCheckReport& r) {
  for (const auto& e : r.entries) {
    const std::string g = group_of(e.name);
    auto it = out.group_max_error.find(g);
    if (it == out.group_max_error.end() || e.max_rel_error > it->second) {
      out.group_max_error[g] = e.max_rel_error;
      std::ostringstream w;
      w << e.name << "[" << e.worst_index << "] analytic " << e.analytic << " numeric " << e.numeric;
      out.group_worst[g] = w.str();
    }
  }
}

}  // namespace

ModelGradCheck model_grad_check(std::uint64_t seed, double eps) {
  std::mt19937_64 rng(seed);
  ModelConfig mc;
  mc.backbone.d_model = 16;
  mc.backbone.n_layers = 2;
  mc.backbone.n_heads = 2;
  mc.backbone.d_ff = 32;
  mc.backbone.max_seq_len = 8;
  mc.backbone.seed = seed + 17;
  mc.tmole.rank = 4;
  mc.tmole.alpha = 8.0;
  mc.tmole.dropout = 0.0;
  mc.tmole.task_embed_dim = 8;
  mc.tmole.embedding_experts = 1;
  mc.tmole.shared_experts = 1;
  mc.tmole.generative_experts = 1;
  TaskRegistry reg;
  reg.add("e0", Branch::kEmbedding);
  reg.add("e1", Branch::kEmbedding);
  reg.add("g0", Branch::kGenerative);
  reg.add("g1", Branch::kGenerative);

  ParamStore<double> params = init_params(mc, reg, seed).cast<double>();
  // Move zero-initialised factors off zero so every path carries gradient.
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    if (e.name.ends_with(".B") || e.name.find(".router.") != std::string::npos || e.name.rfind("head.", 0) == 0) {
      for (auto& v : e.value.data()) v = u(rng);
    }
  }

  const TokenizerOptions topts{mc.backbone.max_seq_len, false};
  std::vector<EmbeddingExample> emb;
  for (std::size_t i = 0; i < 3; ++i) {
    EmbeddingTriplet t{"", random_text(rng, 3 + rng() % 5), random_text(rng, 3 + rng() % 5),
                       random_text(rng, 3 + rng() % 5)};
    emb.push_back(make_embedding_example(t, i % 2, topts));
  }
  std::vector<GenerativeExample> gen;
  for (std::size_t i = 0; i < 3; ++i) {
    GenerativeSample s{"", random_text(rng, 1), random_text(rng, 1), random_text(rng, 1 + rng() % 2)};
    gen.push_back(make_generative_example(s, 2 + i % 2, topts));
  }
  std::vector<const EmbeddingExample*> eb;
  for (const auto& e : emb) eb.push_back(&e);
  std::vector<const GenerativeExample*> gb;
  for (const auto& g : gen) gb.push_back(&g);

  ModelGradCheck out;
  // InfoNCE through the backbone.
  merge_report(out, grad_check(
                        [&]<typename G>(G& g) {
                          using T = typename G::Scalar;
                          return embedding_batch_loss<T>(g, mc, reg, eb, 0.5, {});
                        },
                        params, eps));
  // Token CE through the backbone.
  merge_report(out, grad_check(
                        [&]<typename G>(G& g) {
                          using T = typename G::Scalar;
                          return generative_batch_loss<T>(g, mc, reg, gb, {});
                        },
                        params, eps));
  // Both losses summed.
  merge_report(out, grad_check(
                        [&]<typename G>(G& g) {
                          using T = typename G::Scalar;
                          return g.add(embedding_batch_loss<T>(g, mc, reg, eb, 0.5, {}),
                                       generative_batch_loss<T>(g, mc, reg, gb, {}));
                        },
                        params, eps));
  // Objectives on free tensors.
  ParamStore<double> free;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (const char* name : {"q", "p", "n"}) {
    Tensor<double> t(Shape{4, 6});
    for (auto& v : t.data()) v = nd(rng);
    free.add(name, std::move(t), true);
  }
  Tensor<double> logits(Shape{5, 7});
  for (auto& v : logits.data()) v = nd(rng);
  free.add("logits", std::move(logits), true);
  auto objective_report = grad_check(
      [&]<typename G>(G& g) {
        using T = typename G::Scalar;
        auto nce = info_nce<T>(g, g.param("q"), g.param("p"), g.param("n"), 0.1);
        const std::vector<std::size_t> targets = {0, 3, 6, 2, 1};
        const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1};
        return g.add(nce, token_ce<T>(g, g.param("logits"), targets, mask));
      },
      free, eps);
  merge_report(out, objective_report);
  return out;
}

}  // namespace recfound
