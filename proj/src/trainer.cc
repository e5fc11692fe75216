// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/harness/trainer.h"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "recfound/error.h"
#include "recfound/harness/analysis.h"
#include "recfound/harness/checkpoint.h"
#include "recfound/harness/pipeline.h"

namespace recfound {

void AdamW::step(ParamStore<float>& params, const ParamStore<float>& grads, double lr) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t_)), c2 = 1.0 - std::pow(b2, double(t_));
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    const auto& g = grads.get(e.name);
    auto& m = m_[e.name];
    auto& v = v_[e.name];
    if (m.empty()) {
      m.assign(e.value.size(), 0.0f);
      v.assign(e.value.size(), 0.0f);
    }
    auto p = e.value.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double mh = m[i] / c1, vh = v[i] / c2;
      p[i] = static_cast<float>(p[i] - lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * p[i]));
    }
  }
}

double clip_global_norm(ParamStore<float>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& e : grads.entries()) {
    for (float g : e.value.data()) sq += double(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& e : grads.entries()) {
      for (auto& g : e.value.data()) g = static_cast<float>(g * s);
    }
  }
  return norm;
}

double learning_rate(const OptimConfig& cfg, std::size_t warmup, std::size_t step) {
  if (warmup == 0 || step >= warmup) return cfg.lr;
  return cfg.lr * double(step + 1) / double(warmup);
}

namespace {

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::string ratio_rows(const BranchScheduler& sched, const BranchUpdate& u, std::size_t batch) {
  const auto counts = allocate_batch(batch, u.omega);
  std::string out;
  for (std::size_t i = 0; i < sched.tasks().size(); ++i) {
    out += std::to_string(u.step) + "," + std::string(branch_name(sched.branch())) + "," + sched.tasks()[i].name +
           "," + format_double(u.omega[i]) + "," + opt_field(u.beta) + "," +
           (u.scheduled ? format_double(u.gamma_inter[i]) : "") + "," +
           (u.scheduled ? format_double(u.gamma_intra[i]) : "") + "," + opt_field(u.alpha[i]) + "," +
           std::to_string(counts[i]) + "\n";
  }
  return out;
}

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::ofstream open_csv(const std::filesystem::path& path, const char* header) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << header << "\n";
  return out;
}

struct BranchState {
  Branch branch;
  std::vector<TaskSpec> tasks;
  std::optional<BranchScheduler> sched;
  std::size_t batch = 0;
  std::map<TaskId, TaskPool> pools;
  std::map<TaskId, std::vector<std::size_t>> val_index;  // per task, indices into the val split
  std::map<TaskId, std::vector<std::size_t>> probe;      // fixed probe subset
  double best = std::numeric_limits<double>::infinity();
  std::optional<ParamStore<float>> best_params;
  std::size_t best_step = 0;
};

std::string composition(const TaskRegistry& reg, const std::map<TaskId, std::size_t>& counts) {
  std::string out;
  for (const auto& [t, c] : counts) out += (out.empty() ? "" : ", ") + reg.at(t).name + ":" + std::to_string(c);
  return out;
}

}  // namespace

TrainResult train(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const TaskRegistry registry = cfg.registry();
  const SplitData train_data = load_split(cfg, registry, "train");
  const SplitData val_data = load_split(cfg, registry, "val");
  if (log) {
    for (const auto& n : train_data.load_notes) *log << "data: " << n << "\n";
    for (const auto& n : val_data.load_notes) *log << "data: " << n << "\n";
  }

  ParamStore<float> params = init_params(cfg.model, registry, cfg.seed);
  AdamW opt(cfg.optim);
  std::mt19937_64 data_rng(stream_seed(cfg.seed, 1));
  std::mt19937_64 dropout_rng(stream_seed(cfg.seed, 2));
  std::mt19937_64 probe_rng(stream_seed(cfg.seed, 3));
  const SchedulerConfig scfg = cfg.scheduler_config();
  const std::size_t warmup = scfg.warmup_steps();
  const std::size_t total = cfg.optim.total_steps;

  std::vector<BranchState> branches;
  for (Branch b : {Branch::kEmbedding, Branch::kGenerative}) {
    auto tasks = registry.of_branch(b);
    if (tasks.empty()) continue;
    BranchState st;
    st.branch = b;
    st.tasks = tasks;
    st.sched.emplace(b, tasks, scfg);
    st.batch = b == Branch::kEmbedding ? cfg.train.batch_embedding : cfg.train.batch_generative;
    const auto train_tasks = b == Branch::kEmbedding ? train_data.embedding_tasks() : train_data.generative_tasks();
    st.pools = build_pools(train_tasks);
    const auto val_tasks = b == Branch::kEmbedding ? val_data.embedding_tasks() : val_data.generative_tasks();
    for (std::size_t i = 0; i < val_tasks.size(); ++i) st.val_index[val_tasks[i]].push_back(i);
    for (const auto& t : tasks) {
      if (!st.pools.count(t.id)) throw DataError("task '" + t.name + "' has no training samples");
      if (!st.val_index.count(t.id)) throw DataError("task '" + t.name + "' has no validation samples");
      auto idx = st.val_index[t.id];
      shuffle_in_place(idx, probe_rng);
      idx.resize(std::min(idx.size(), cfg.probe.size));
      st.probe[t.id] = idx;
    }
    branches.push_back(std::move(st));
  }

  std::filesystem::create_directories(cfg.out_dir);
  {
    std::ofstream c(cfg.out_dir / "config.txt", std::ios::binary | std::ios::trunc);
    if (!c) throw IoError("cannot write " + (cfg.out_dir / "config.txt").string());
    c << config_echo(cfg);
  }
  auto val_csv = open_csv(cfg.out_dir / "val_losses.csv", kValLossHeader);
  auto ratio_csv = open_csv(cfg.out_dir / "ratios.csv", kRatioHeader);
  auto metrics_csv = open_csv(cfg.out_dir / "metrics.csv", kMetricsHeader);

  TrainResult result;
  std::map<std::string, double> latest;

  auto run_probe = [&](std::size_t step) {
    for (auto& st : branches) {
      std::vector<double> losses;
      for (const auto& t : st.tasks) {
        std::vector<std::size_t> idx = st.probe[t.id];
        if (cfg.probe.resample) {
          idx = st.val_index[t.id];
          shuffle_in_place(idx, probe_rng);
          idx.resize(std::min(idx.size(), cfg.probe.size));
        }
        Graph<float> g(params, false);
        double loss = 0.0;
        if (st.branch == Branch::kEmbedding) {
          std::vector<const EmbeddingExample*> batch;
          for (auto i : idx) batch.push_back(&val_data.embedding[i]);
          loss = g.scalar(embedding_batch_loss<float>(g, cfg.model, registry, batch, cfg.train.temperature, {}));
        } else {
          std::vector<const GenerativeExample*> batch;
          for (auto i : idx) batch.push_back(&val_data.generative[i]);
          loss = g.scalar(generative_batch_loss<float>(g, cfg.model, registry, batch, {}));
        }
        if (!std::isfinite(loss)) {
          throw NumericError("non-finite validation loss for task '" + t.name + "' at step " + std::to_string(step));
        }
        st.sched->record_validation(t.id, step, loss);
        val_csv << step << "," << t.name << "," << branch_name(st.branch) << "," << format_double(loss) << "\n";
        losses.push_back(loss);
        latest[t.name] = loss;
        if (step == 0) result.initial_val[t.name] = loss;
      }
      const auto& u = st.sched->update(step);
      ratio_csv << ratio_rows(*st.sched, u, st.batch);
      for (std::size_t i = 0; i < st.tasks.size(); ++i) {
        metrics_csv << step << "," << branch_name(st.branch) << "," << st.tasks[i].name << ",val,"
                    << format_double(losses[i]) << "," << format_double(u.omega[i]) << "," << opt_field(u.beta) << ","
                    << opt_field(u.alpha[i]) << "\n";
      }
      double mean = 0.0;
      for (double l : losses) mean += l;
      mean /= double(losses.size());
      if (mean < st.best) {
        st.best = mean;
        st.best_params = params;
        st.best_step = step;
      }
    }
  };

  const std::size_t ckpt_every = cfg.checkpoint_interval();
  const Checkpoint initial = make_checkpoint(params, cfg, 0, "initial");
  save_checkpoint(cfg.out_dir / "checkpoints" / "step_0", initial);
  for (std::size_t step = 0; step < total; ++step) {
    if (step % cfg.probe.stride == 0) run_probe(step);

    std::map<TaskId, std::size_t> counts;
    Graph<float> g(params);
    std::optional<Graph<float>::Id> loss;
    ForwardOptions fo;
    fo.training = true;
    fo.rng = &dropout_rng;
    for (auto& st : branches) {
      if (cfg.train.mode == StepMode::kAlternate && branches.size() == 2) {
        const bool embed_turn = step % 2 == 0;
        if ((st.branch == Branch::kEmbedding) != embed_turn) continue;
      }
      const auto alloc = allocate_batch(st.batch, st.sched->ratios());
      std::vector<std::size_t> picked;
      for (std::size_t i = 0; i < st.tasks.size(); ++i) {
        const TaskId id = st.tasks[i].id;
        counts[id] = alloc[i];
        for (auto j : st.pools.at(id).draw(alloc[i], data_rng)) picked.push_back(j);
      }
      if (picked.empty()) continue;
      Graph<float>::Id l;
      if (st.branch == Branch::kEmbedding) {
        std::vector<const EmbeddingExample*> batch;
        for (auto j : picked) batch.push_back(&train_data.embedding[j]);
        l = embedding_batch_loss<float>(g, cfg.model, registry, batch, cfg.train.temperature, fo);
      } else {
        std::vector<const GenerativeExample*> batch;
        for (auto j : picked) batch.push_back(&train_data.generative[j]);
        l = generative_batch_loss<float>(g, cfg.model, registry, batch, fo);
      }
      loss = loss ? g.add(*loss, l) : l;
    }
    if (!loss) throw StateError("step " + std::to_string(step) + " has an empty batch");
    ParamStore<float> grads;
    try {
      if (!std::isfinite(g.scalar(*loss))) throw NumericError("non-finite training loss");
      grads = g.backward(*loss);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + " aborted (batch " + composition(registry, counts) +
                         "): " + e.what());
    }
    clip_global_norm(grads, cfg.optim.clip_norm);
    opt.step(params, grads, learning_rate(cfg.optim, warmup, step));

    if (log && ((step + 1) % 100 == 0 || step + 1 == total)) {
      *log << "step " << (step + 1) << "/" << total << " loss " << g.scalar(*loss) << "\n";
    }
    if ((step + 1) % ckpt_every == 0 && step + 1 < total) {
      save_checkpoint(cfg.out_dir / "checkpoints" / ("step_" + std::to_string(step + 1)),
                      make_checkpoint(params, cfg, step + 1, "periodic"));
    }
  }
  run_probe(total);

  for (const auto& st : branches) {
    if (st.best_params) {
      save_checkpoint(cfg.out_dir / "checkpoints" / ("best_" + std::string(branch_name(st.branch))),
                      make_checkpoint(*st.best_params, cfg, st.best_step, "best_" + std::string(branch_name(st.branch))));
    }
  }
  result.final_checkpoint = cfg.out_dir / "final";
  const Checkpoint final_ckpt = make_checkpoint(params, cfg, total, "final");
  save_checkpoint(result.final_checkpoint, final_ckpt);
  if (cfg.merge.after_train) {
    std::vector<Checkpoint> inputs = {final_ckpt};
    for (const auto& st : branches) {
      if (st.best_params && st.best_step != total) {
        inputs.push_back(make_checkpoint(*st.best_params, cfg, st.best_step, "best"));
      }
    }
    Checkpoint merged = merge_checkpoints(initial, inputs, cfg.merge);
    merged.step = total;
    result.merged_checkpoint = cfg.out_dir / "merged";
    save_checkpoint(*result.merged_checkpoint, merged);
  }
  result.steps = total;
  result.final_val = latest;
  double mean = 0.0;
  for (const auto& [k, v] : latest) mean += v;
  result.final_mean_val = latest.empty() ? 0.0 : mean / double(latest.size());
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace recfound
