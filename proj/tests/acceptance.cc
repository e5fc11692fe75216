// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion (details are
// indented below it) and exits non-zero when any criterion fails.
//
//   recfound_acceptance [WORK_DIR] [--only 1,4,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.h"
#include "recfound/backbone/model.h"
#include "recfound/harness/analysis.h"
#include "recfound/harness/checkpoint.h"
#include "recfound/harness/config.h"
#include "recfound/harness/pipeline.h"
#include "recfound/merge/merge.h"
#include "recfound/objectives/objectives.h"
#include "recfound/scheduler/scheduler.h"

using namespace recfound;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && read_file(a) == read_file(b);
}

// File text without the lines recording the run's own output directory.
std::string without_out_dir(const fs::path& p) {
  std::istringstream in(read_file(p));
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.rfind("run.out = ", 0) == 0 || line.rfind("config.run.out = ", 0) == 0) continue;
    out += line + "\n";
  }
  return out;
}

using Row = std::vector<std::string>;

std::vector<Row> read_csv(const fs::path& p) {
  std::vector<Row> rows;
  std::istringstream in(read_file(p));
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    Row r;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      r.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

class Report {
 public:
  void criterion(int id, const std::string& title, bool pass, const std::string& summary) {
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "): " << summary << "\n";
    for (const auto& d : details_) std::cout << "    " << d << "\n";
    std::cout.flush();
    details_.clear();
    if (!pass) ++failures_;
  }
  void detail(const std::string& d) { details_.push_back(d); }
  int failures() const { return failures_; }

 private:
  std::vector<std::string> details_;
  int failures_ = 0;
};

struct Paths {
  fs::path work;
  fs::path cli = RECFOUND_CLI;
  fs::path configs = RECFOUND_CONFIGS;
};

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(RECFOUND_CLI) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---------------------------------------------------------------------------
// 1. Formula oracles.

oracle::Vec uniform_vec(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  oracle::Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

oracle::Mat normal_rows(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> nd(0.0, 1.0);
  oracle::Mat m(n, oracle::Vec(d));
  for (auto& r : m) {
    for (auto& v : r) v = nd(rng);
  }
  return m;
}

Tensor<double> to_tensor(const oracle::Mat& m) {
  std::vector<double> flat;
  for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor<double>(Shape{m.size(), m[0].size()}, std::move(flat));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Values on a coarse grid so that ties and exact cancellations occur.
oracle::Vec merge_values(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  oracle::Vec v(n);
  const bool grid = rng() % 2 == 0;
  for (auto& x : v) x = grid ? static_cast<double>(static_cast<int>(rng() % 7) - 3) * 0.25 : nd(rng);
  return v;
}

void criterion_formulas(Report& rep) {
  const auto t0 = Clock::now();
  const int trials = 1000;
  std::mt19937_64 rng(20260101);
  std::map<std::string, double> worst;
  std::map<std::string, int> count;
  auto note = [&](const std::string& name, double d) {
    worst[name] = std::max(worst[name], std::isnan(d) ? INFINITY : d);
    ++count[name];
  };

  for (int t = 0; t < trials; ++t) {
    const std::size_t n = 2 + rng() % 5;
    oracle::Vec alpha = uniform_vec(rng, n, -1.0, 1.0);
    if (rng() % 10 == 0) alpha[rng() % n] = 0.0;
    note("inter_rate", max_abs_diff(inter_rate(alpha), oracle::inter_rate(alpha)));

    oracle::Mat hist(n);
    for (auto& h : hist) h = uniform_vec(rng, 1 + rng() % 20, -1.0, 1.0);
    const std::size_t window = 1 + rng() % 20;
    note("intra_rate", max_abs_diff(intra_rate(hist, window), oracle::intra_rate(hist, window)));

    const oracle::Vec d = uniform_vec(rng, 1 + rng() % 30, -30.0, 5.0);
    note("balance_weight", std::fabs(balance_weight(d) - oracle::balance_weight(d)));

    const oracle::Vec gi = uniform_vec(rng, n, -1.0, 0.0), ga = uniform_vec(rng, n, 0.0, 1.0);
    const double beta = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    note("sample_ratios", max_abs_diff(sample_ratios(gi, ga, beta), oracle::sample_ratios(gi, ga, beta)));

    const std::size_t batch = 1 + rng() % 64;
    const oracle::Vec omega = oracle::softmax(uniform_vec(rng, n, -2.0, 2.0));
    note("allocate_batch", allocate_batch(batch, omega) == oracle::allocate(batch, omega) ? 0.0 : 1.0);

    const std::size_t len = 2 + rng() % 30;
    oracle::Vec xs(len), ys = uniform_vec(rng, len, 0.5, 3.0);
    double x = static_cast<double>(rng() % 5);
    for (auto& v : xs) v = (x += static_cast<double>(1 + rng() % 3));
    note("normalized_slope", std::fabs(normalized_slope(xs, ys) - oracle::normalized_slope(xs, ys)));

    {
      const std::size_t b = 1 + rng() % 6, dim = 2 + rng() % 7;
      const auto q = normal_rows(rng, b, dim), p = normal_rows(rng, b, dim), neg = normal_rows(rng, b, dim);
      const double temp = 0.05 + 0.01 * static_cast<double>(rng() % 100);
      const bool with_neg = b == 1 || rng() % 2 == 0;
      ParamStore<double> ps;
      Graph<double> g(ps, false);
      auto qi = g.input(to_tensor(q), "q"), pi = g.input(to_tensor(p), "p");
      std::optional<Graph<double>::Id> ni;
      if (with_neg) ni = g.input(to_tensor(neg), "n");
      const double got = g.scalar(info_nce<double>(g, qi, pi, ni, temp));
      const double want = oracle::info_nce(q, p, with_neg ? std::optional<oracle::Mat>(neg) : std::nullopt, temp);
      note("info_nce", std::fabs(got - want));
    }
    {
      const std::size_t rows = 1 + rng() % 8, v = 2 + rng() % 30;
      const auto z = normal_rows(rng, rows, v);
      std::vector<std::size_t> targets(rows);
      std::vector<std::uint8_t> mask(rows);
      for (std::size_t i = 0; i < rows; ++i) {
        targets[i] = rng() % v;
        mask[i] = i == 0 || rng() % 3 != 0;
      }
      ParamStore<double> ps;
      Graph<double> g(ps, false);
      const double got = g.scalar(token_ce<double>(g, g.input(to_tensor(z), "z"), targets, mask));
      note("token_ce", std::fabs(got - oracle::token_ce(z, targets, mask)));
    }
    {
      const std::size_t b = 1 + rng() % 4, seq = 1 + rng() % 6, dim = 1 + rng() % 6;
      const auto h = normal_rows(rng, b * seq, dim);
      std::vector<std::uint8_t> mask(b * seq);
      for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = i % seq == 0 || rng() % 2;
      ParamStore<double> ps;
      Graph<double> g(ps, false);
      const auto& pooled = g.value(mean_pool<double>(g, g.input(to_tensor(h), "h"), b, seq, mask));
      const auto ref = oracle::mean_pool(h, b, seq, mask);
      std::vector<double> flat;
      for (const auto& r : ref) flat.insert(flat.end(), r.begin(), r.end());
      note("mean_pool", max_abs_diff(pooled.data(), flat));
    }
    {
      const std::size_t k = 1 + rng() % 5, size = 1 + rng() % 32;
      const double density = 0.05 * static_cast<double>(1 + rng() % 20);
      oracle::Mat tensors;
      std::vector<DeltaSet> deltas;
      for (std::size_t c = 0; c < k; ++c) {
        tensors.push_back(merge_values(rng, size));
        DeltaSet ds;
        ds.emplace("w", Tensor<double>(Shape{size}, tensors.back()));
        deltas.push_back(std::move(ds));
      }
      MergeConfig mc;
      mc.density = density;
      const auto merged = ties_merge(deltas, mc);
      note("ties_merge", max_abs_diff(merged.at("w").data(), oracle::ties_merge(tensors, density)));
    }
  }

  const double secs = seconds_since(t0);
  double overall = 0.0;
  for (const auto& [name, d] : worst) {
    overall = std::max(overall, d);
    rep.detail(name + ": " + std::to_string(count[name]) + " inputs, max abs diff " + fmt(d));
  }
  bool enough = true;
  for (const auto& [name, c] : count) enough = enough && c >= 1000;
  const bool pass = overall < 1e-10 && secs < 60.0 && enough;
  rep.criterion(1, "formula oracles", pass,
                "max abs diff " + fmt(overall) + " (< 1e-10), " + fmt(secs) + " s (< 60 s)");
}

// ---------------------------------------------------------------------------
// 2. Gradient checks.

void criterion_grad_check(Report& rep) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t1 = Clock::now();
    const ModelGradCheck r = model_grad_check(seed);
    worst = std::max(worst, r.max_error());
    std::string line = "seed " + std::to_string(seed) + ":";
    for (const auto& [group, err] : r.group_max_error) line += " " + group + " " + fmt(err);
    rep.detail(line + " (" + fmt(seconds_since(t1)) + " s)");
  }
  const double secs = seconds_since(t0);
  rep.criterion(2, "gradient checks", worst < 1e-4 && secs < 300.0,
                "max relative error " + fmt(worst) + " (< 1e-4) over 5 seeds, " + fmt(secs) + " s (< 300 s)");
}

// ---------------------------------------------------------------------------
// 3. Routing invariants at desk dimensions.

RunConfig desk_config(const Paths& paths) {
  RunConfig cfg;
  apply_config_file(cfg, paths.configs / "desk.conf");
  return cfg;
}

void perturb(ParamStore<float>& params, std::mt19937_64& rng, const std::function<bool(const std::string&)>& pick,
             float scale) {
  std::normal_distribution<float> n(0.0f, scale);
  for (auto& e : params.entries()) {
    if (!pick(e.name)) continue;
    for (auto& v : e.value.data()) v = n(rng);
  }
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0;
}

void criterion_routing(Report& rep, const Paths& paths) {
  const auto t0 = Clock::now();
  const RunConfig cfg = desk_config(paths);
  const ModelConfig& mc = cfg.model;
  const TaskRegistry reg = cfg.registry();
  std::vector<TaskId> all_tasks;
  for (TaskId t = 0; t < reg.size(); ++t) all_tasks.push_back(t);

  // Routers and task embeddings away from their initial values.
  bool mask_ok = true;
  double sum_err = 0.0;
  std::size_t distributions = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto params = init_params(mc, reg, seed);
    std::mt19937_64 rng(seed);
    perturb(params, rng, [](const std::string& n) { return n.find(".router.") != std::string::npos; }, 0.5f);
    perturb(params, rng, [](const std::string& n) { return n == task_embedding_name(); }, 1.0f);
    const auto dparams = params.cast<double>();
    for (const auto& proj : hooked_projections(mc)) {
      Graph<double> g(dparams, false);
      const auto& routed = g.value(route<double>(g, mc.tmole, reg, proj, all_tasks));
      for (TaskId t : all_tasks) {
        const auto plain = routing_vector(params, mc.tmole, reg, proj, t);
        double sum_plain = 0.0, sum_graph = 0.0;
        for (std::size_t j = 0; j < mc.tmole.num_experts(); ++j) {
          const double gv = routed.data()[t * mc.tmole.num_experts() + j];
          if (!mc.tmole.expert_active(j, reg.at(t).branch)) {
            mask_ok = mask_ok && plain[j] == 0.0 && gv == 0.0;
          }
          sum_plain += plain[j];
          sum_graph += gv;
        }
        sum_err = std::max({sum_err, std::fabs(sum_plain - 1.0), std::fabs(sum_graph - 1.0)});
        distributions += 2;
      }
    }
  }
  rep.detail("routing: " + std::to_string(distributions) + " distributions, masked entries " +
             (mask_ok ? "all exactly 0" : "NOT all 0") + ", max |sum - 1| " + fmt(sum_err));

  // Zero-initialised adapters against the frozen base, both branches.
  const auto opts = tokenizer_options(mc);
  std::vector<TokenizedSample> emb = {make_embedding_sample("find red cube", 0, opts),
                                      make_embedding_sample("blue sphere small", 1, opts),
                                      make_embedding_sample("q", 0, opts)};
  std::vector<TokenizedSample> gen = {make_generative_sample("copy\nabc\n", "abc", 2, opts),
                                      make_generative_sample("calc\n12+30\n", "42", 3, opts)};
  bool zero_ok = true;
  {
    const auto params = init_params(mc, reg, 11);
    const auto base = init_base_params(mc.backbone);
    for (const Batch& b : {collate(emb), collate(gen)}) {
      Graph<float> g(params, false);
      const auto out = backbone_forward<float>(g, mc, reg, b, {});
      Graph<float> gb(base, false);
      ForwardOptions fb;
      fb.base_only = true;
      const auto ref = backbone_forward<float>(gb, mc, reg, b, fb);
      zero_ok = zero_ok && bit_equal(g.value(out.hidden), gb.value(ref.hidden));
    }
  }
  rep.detail(std::string("zero-initialised adapters: hidden states ") +
             (zero_ok ? "bit-equal" : "DIFFER from") + " the frozen base on both branches");

  // Generative batches leave every embedding-group expert untouched.
  bool isolation_ok = true;
  std::size_t e_checked = 0, g_nonzero = 0;
  {
    auto params = init_params(mc, reg, 13);
    std::mt19937_64 rng(13);
    // Nonzero B and head so that gradient reaches the experts at all.
    perturb(params, rng, [](const std::string& n) { return n.ends_with(".B"); }, 0.1f);
    perturb(params, rng, [](const std::string& n) { return n.find(".router.") != std::string::npos; }, 0.5f);
    perturb(params, rng, [](const std::string& n) { return n.starts_with("head."); }, 0.1f);
    const TaskRegistry r = reg;
    std::vector<GenerativeExample> ex = {
        make_generative_example({"copy", "copy", "abc", "abc"}, r.find("copy").id, opts),
        make_generative_example({"arithmetic-eval", "calc", "12+30", "42"}, r.find("arithmetic-eval").id, opts)};
    const std::vector<const GenerativeExample*> batch = {&ex[0], &ex[1]};
    Graph<float> g(params);
    const auto grads = g.backward(generative_batch_loss<float>(g, mc, reg, batch, {}));
    for (const auto& e : grads.entries()) {
      const auto pos = e.name.find(".experts.");
      if (pos == std::string::npos) continue;
      const std::size_t j = std::stoul(e.name.substr(pos + 9));
      const auto group = mc.tmole.group(j);
      bool all_zero = true;
      for (float v : e.value.data()) all_zero = all_zero && v == 0.0f;
      if (group == ExpertGroup::kEmbedding) {
        ++e_checked;
        isolation_ok = isolation_ok && all_zero;
      } else if (group == ExpertGroup::kGenerative && !all_zero) {
        ++g_nonzero;
      }
    }
  }
  rep.detail("generative batch: " + std::to_string(e_checked) + " embedding-expert tensors, gradient " +
             (isolation_ok ? "exactly 0" : "NONZERO") + "; " + std::to_string(g_nonzero) +
             " generative-expert tensors receive gradient");

  const double secs = seconds_since(t0);
  const bool pass = mask_ok && sum_err <= 1e-6 && zero_ok && isolation_ok && e_checked > 0 && g_nonzero > 0 &&
                    secs < 60.0;
  rep.criterion(3, "routing invariants", pass,
                std::string("mask ") + (mask_ok ? "ok" : "broken") + ", sum error " + fmt(sum_err) +
                    " (<= 1e-6), zero-init " + (zero_ok ? "bit-equal" : "differs") + ", isolation " +
                    (isolation_ok ? "ok" : "broken") + ", " + fmt(secs) + " s (< 60 s)");
}

// ---------------------------------------------------------------------------
// 4. Scheduler behaviour on a synthetic trace.

// Task A (and x in the second branch) drops and then plateaus while the
// others keep improving. `plateau_rate` sets how fast A flattens: fast means
// A is already flat when scheduling starts, slow means it flattens later.
double synthetic_loss(const std::string& task, std::size_t step, double plateau_rate) {
  const double s = static_cast<double>(step);
  const double wiggle = 0.002 * std::sin(1.3 * s + static_cast<double>(task.size()));
  if (task == "a" || task == "x") return 2.0 + 1.5 * std::exp(-plateau_rate * s) + wiggle;
  if (task == "b") return 3.0 - 0.012 * s + wiggle;
  if (task == "c") return 0.5 + 2.5 * std::exp(-0.008 * s) + wiggle;
  return 4.0 - 0.015 * s + wiggle;  // y
}

struct SchedOutcome {
  bool ran = false;
  bool sums_ok = true;
  bool beta_ok = true;
  double omega_err = 0.0;
  double seconds = 0.0;
  std::map<std::string, std::size_t> first_max;  // branch -> post-warmup update (1-based)
  std::map<std::string, std::size_t> on_top;     // branch -> updates with the flat task strictly on top
  std::map<std::string, std::size_t> updates;
};

SchedOutcome simulate(const Paths& paths, const std::string& name, double plateau_rate) {
  const fs::path dir = paths.work / "sched" / name;
  fs::create_directories(dir);
  const std::size_t total = 200, warmup = 20, batch = 8;
  const std::vector<std::pair<std::string, std::string>> tasks = {
      {"a", "embedding"}, {"b", "embedding"}, {"c", "embedding"}, {"x", "generative"}, {"y", "generative"}};
  std::string trace = "step,task,branch,loss\n";
  for (std::size_t s = 0; s <= total; ++s) {
    for (const auto& [t, b] : tasks) {
      trace += std::to_string(s) + "," + t + "," + b + "," + format_double(synthetic_loss(t, s, plateau_rate)) + "\n";
    }
  }
  write_file(dir / "trace.csv", trace);
  write_file(dir / "sched.conf",
             "optim.total_steps = " + std::to_string(total) +
                 "\nscheduler.warmup_ratio = 0.1\nscheduler.history = 16\nscheduler.tau = 10\n"
                 "train.batch_embedding = 8\ntrain.batch_generative = 8\n"
                 "data.embedding_tasks = a,b,c\ndata.generative_tasks = x,y\n");

  SchedOutcome o;
  const auto t0 = Clock::now();
  o.ran = run("sched-sim --trace " + (dir / "trace.csv").string() + " --config " + (dir / "sched.conf").string() +
                  " --out " + (dir / "ratios.csv").string(),
              dir / "sched-sim.log") == 0;
  o.seconds = seconds_since(t0);
  if (!o.ran) return o;

  std::map<std::size_t, std::map<std::string, std::vector<Row>>> by_step;
  for (const auto& r : read_csv(dir / "ratios.csv")) by_step[std::stoul(r[0])][r[1]].push_back(r);
  for (const auto& [step, branches] : by_step) {
    for (const auto& [branch, rows] : branches) {
      double sum = 0.0;
      std::size_t counts = 0;
      for (const auto& r : rows) {
        sum += std::stod(r[3]);
        counts += std::stoul(r[8]);
        if (!r[4].empty()) {
          const double beta = std::stod(r[4]);
          o.beta_ok = o.beta_ok && beta >= 0.0 && beta <= 1.0;
        }
      }
      o.omega_err = std::max(o.omega_err, std::fabs(sum - 1.0));
      o.sums_ok = o.sums_ok && counts == batch;
      if (step < warmup) continue;
      const std::size_t k = ++o.updates[branch];
      const double flat = std::stod(rows[0][3]);
      bool strict = true;
      for (std::size_t i = 1; i < rows.size(); ++i) strict = strict && flat > std::stod(rows[i][3]);
      if (!strict) continue;
      if (!o.first_max.count(branch)) o.first_max[branch] = k;
      ++o.on_top[branch];
    }
  }
  return o;
}

std::string describe(SchedOutcome& o, const std::string& branch) {
  if (!o.first_max.count(branch)) return branch + " never";
  return branch + " from update " + std::to_string(o.first_max[branch]) + " (on top in " +
         std::to_string(o.on_top[branch]) + " of " + std::to_string(o.updates[branch]) + ")";
}

void criterion_scheduler(Report& rep, const Paths& paths) {
  // Primary trace: A has flattened by the end of warmup.
  SchedOutcome flat = simulate(paths, "plateau", 1.5);
  // Secondary trace: A is still falling when scheduling starts.
  SchedOutcome late = simulate(paths, "late_plateau", 0.25);
  if (!flat.ran || !late.ran) {
    rep.criterion(4, "scheduler behaviour", false, "sched-sim failed");
    return;
  }
  bool within = true;
  for (const std::string b : {"embedding", "generative"}) {
    within = within && flat.first_max.count(b) && flat.first_max[b] <= 20;
  }
  rep.detail("plateaued task strictly on top: " + describe(flat, "embedding") + ", " + describe(flat, "generative"));
  rep.detail("late plateau (informational): " + describe(late, "embedding") + ", " + describe(late, "generative"));
  const bool invariants = flat.sums_ok && late.sums_ok && flat.beta_ok && late.beta_ok;
  const double omega_err = std::max(flat.omega_err, late.omega_err);
  rep.detail("max |sum omega - 1| " + fmt(omega_err) + ", counts sum to B " +
             (flat.sums_ok && late.sums_ok ? "every step" : "NOT always") + ", beta in [0, 1] " +
             (flat.beta_ok && late.beta_ok ? "throughout" : "VIOLATED"));
  const bool pass = within && invariants && omega_err < 1e-12 && flat.seconds < 10.0;
  const std::string late_first =
      late.first_max.count("embedding") ? std::to_string(late.first_max["embedding"]) : std::string("never");
  rep.criterion(4, "scheduler behaviour", pass,
                std::string("flat task on top within 20 updates: ") + (within ? "yes" : "no") +
                    " (late-plateau trace: embedding update " + late_first + "), " + fmt(flat.seconds) +
                    " s (< 10 s)");
}

// ---------------------------------------------------------------------------
// 5-8. Desk-scale runs.

struct RunInfo {
  bool ok = false;
  double seconds = 0.0;
  fs::path dir;
};

RunInfo train_run(const Paths& paths, const fs::path& data, const std::string& name, std::uint64_t seed,
                  const std::string& flags) {
  RunInfo info;
  info.dir = paths.work / name;
  fs::remove_all(info.dir);
  const auto t0 = Clock::now();
  const int rc = run("train --config " + (paths.configs / "desk.conf").string() + " --seed " + std::to_string(seed) +
                         " --data.dir " + data.string() + " --run.out " + info.dir.string() + " " + flags,
                     paths.work / (name + ".log"));
  info.seconds = seconds_since(t0);
  info.ok = rc == 0;
  return info;
}

// task -> (step -> loss)
std::map<std::string, std::map<std::size_t, double>> val_losses(const fs::path& run_dir) {
  std::map<std::string, std::map<std::size_t, double>> out;
  for (const auto& r : read_csv(run_dir / "val_losses.csv")) out[r[1]][std::stoul(r[0])] = std::stod(r[3]);
  return out;
}

double final_mean_val(const fs::path& run_dir) {
  const auto v = val_losses(run_dir);
  if (v.empty()) return INFINITY;
  double sum = 0.0;
  for (const auto& [task, series] : v) sum += series.rbegin()->second;
  return sum / static_cast<double>(v.size());
}

struct DeskState {
  fs::path data;
  RunInfo full;
};

void criterion_training(Report& rep, const Paths& paths, DeskState& st) {
  st.data = paths.work / "data";
  fs::remove_all(st.data);
  if (run("gen-data --seed 7 --out " + st.data.string(), paths.work / "gen-data.log") != 0) {
    rep.criterion(5, "desk-scale training", false, "gen-data failed");
    return;
  }
  st.full = train_run(paths, st.data, "full_seed1", 1, "");
  if (!st.full.ok) {
    rep.criterion(5, "desk-scale training", false, "training failed, see full_seed1.log");
    return;
  }
  const RunConfig cfg = desk_config(paths);
  const double anchor = std::log(static_cast<double>(cfg.model.backbone.vocab_size()));
  const auto losses = val_losses(st.full.dir);
  bool anchor_ok = true, halved = true;
  std::size_t final_step = 0;
  for (const auto& task : cfg.generative_tasks) {
    const auto it = losses.find(task);
    if (it == losses.end() || !it->second.count(0)) {
      anchor_ok = halved = false;
      continue;
    }
    const double l0 = it->second.at(0), lf = it->second.rbegin()->second;
    final_step = it->second.rbegin()->first;
    anchor_ok = anchor_ok && std::fabs(l0 - anchor) <= 1e-3;
    halved = halved && lf < 0.5 * l0;
    rep.detail(task + ": step-0 loss " + format_double(l0) + " (ln 260 = " + fmt(anchor) + ", diff " +
               fmt(std::fabs(l0 - anchor)) + "), final " + fmt(lf) + " = " + fmt(100.0 * lf / l0) + "% of step 0");
  }
  const bool steps_ok = final_step == cfg.optim.total_steps;

  double recall = -1.0;
  const fs::path eval_csv = st.full.dir / "eval_test.csv";
  if (run("eval --checkpoint " + (st.full.dir / "final").string() + " --data " + st.data.string() +
              " --split test --out " + eval_csv.string(),
          paths.work / "eval.log") == 0) {
    for (const auto& r : read_csv(eval_csv)) {
      if (r[0] == "keyword-match" && r[2] == "recall@1") recall = std::stod(r[3]);
      if (r[2] != "count") rep.detail("test " + r[0] + " " + r[2] + " " + r[3]);
    }
  }

  const RunInfo again = train_run(paths, st.data, "full_seed1_rerun", 1, "");
  bool identical = again.ok;
  for (const std::string f : {"val_losses.csv", "ratios.csv", "metrics.csv", "final/tensors.bin", "merged/tensors.bin"}) {
    const bool same = same_bytes(st.full.dir / f, again.dir / f);
    if (!same) rep.detail("rerun differs: " + f);
    identical = identical && same;
  }
  // The rerun writes elsewhere, so only the output-directory line may differ.
  for (const std::string f : {"config.txt", "final/manifest.txt", "merged/manifest.txt"}) {
    const bool same = fs::exists(again.dir / f) && without_out_dir(st.full.dir / f) == without_out_dir(again.dir / f);
    if (!same) rep.detail("rerun differs: " + f + " (beyond run.out)");
    identical = identical && same;
  }
  rep.detail("rerun took " + fmt(again.seconds) + " s; compared CSVs and tensors byte-for-byte, manifests and config "
             "byte-for-byte apart from the run.out line");

  const bool pass = anchor_ok && halved && steps_ok && recall >= 0.9 && st.full.seconds < 1800.0 && identical;
  rep.criterion(5, "desk-scale training", pass,
                std::to_string(final_step) + " steps in " + fmt(st.full.seconds) + " s (< 1800 s), anchor " +
                    (anchor_ok ? "within 1e-3" : "off") + ", generative losses " +
                    (halved ? "all below 50%" : "NOT all below 50%") + ", keyword-match recall@1 " + fmt(recall) +
                    " (>= 0.9), rerun " + (identical ? "bit-identical" : "DIFFERS"));
}

void criterion_ablation(Report& rep, const Paths& paths, const DeskState& st) {
  if (!st.full.ok) {
    rep.criterion(6, "ablation direction", false, "no full run from criterion 5");
    return;
  }
  std::map<std::string, int> wins;
  bool all_ok = true;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const std::string s = std::to_string(seed);
    const RunInfo full = seed == 1 ? st.full : train_run(paths, st.data, "full_seed" + s, seed, "");
    const RunInfo no_tmole = train_run(paths, st.data, "no_tmole_seed" + s, seed, "--no-tmole");
    const RunInfo no_sched = train_run(paths, st.data, "no_s2sched_seed" + s, seed, "--no-s2sched");
    all_ok = all_ok && full.ok && no_tmole.ok && no_sched.ok;
    const double f = final_mean_val(full.dir), t = final_mean_val(no_tmole.dir), u = final_mean_val(no_sched.dir);
    if (f <= t) ++wins["no-tmole"];
    if (f <= u) ++wins["no-s2sched"];
    rep.detail("seed " + s + ": full " + fmt(f) + ", no-tmole " + fmt(t) + ", no-s2sched " + fmt(u));
  }
  const bool pass = all_ok && wins["no-tmole"] >= 2 && wins["no-s2sched"] >= 2;
  rep.criterion(6, "ablation direction", pass,
                "full <= no-tmole in " + std::to_string(wins["no-tmole"]) + "/3 seeds, full <= no-s2sched in " +
                    std::to_string(wins["no-s2sched"]) + "/3 seeds (need 2/3 each)");
}

void criterion_merge(Report& rep, const Paths& paths, const DeskState& st) {
  const auto t0 = Clock::now();
  // Identical checkpoints at density 1: the trained run when available,
  // otherwise a perturbed initialisation.
  const RunConfig cfg = desk_config(paths);
  Checkpoint base, tuned;
  if (st.full.ok && fs::exists(st.full.dir / "checkpoints" / "step_0") && fs::exists(st.full.dir / "final")) {
    base = load_checkpoint(st.full.dir / "checkpoints" / "step_0");
    tuned = load_checkpoint(st.full.dir / "final");
    rep.detail("identical-merge inputs: trained run (step_0 base, final checkpoint)");
  } else {
    const auto reg = cfg.registry();
    base = make_checkpoint(init_params(cfg.model, reg, 5), cfg, 0, "base");
    tuned = base;
    std::mt19937_64 rng(6);
    perturb(tuned.params, rng, [&](const std::string& n) { return tuned.params.trainable(n); }, 0.1f);
    rep.detail("identical-merge inputs: perturbed initialisation (no trained run)");
  }
  bool identical_ok = true;
  MergeConfig mc = cfg.merge;
  mc.density = 1.0;
  for (std::size_t k = 1; k <= 5; ++k) {
    const auto merged = merge_checkpoints(base, std::vector<Checkpoint>(k, tuned), mc);
    bool same = true;
    for (const auto& e : tuned.params.entries()) same = same && bit_equal(merged.params.get(e.name), e.value);
    if (!same) rep.detail("k = " + std::to_string(k) + ": merged checkpoint differs");
    identical_ok = identical_ok && same;
  }

  // Opposite signs with equal magnitude cancel, at any density.
  std::mt19937_64 rng(77);
  bool cancel_ok = true;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng() % 32;
    const oracle::Vec v = merge_values(rng, n);
    oracle::Vec neg(v);
    for (auto& x : neg) x = -x;
    DeltaSet a, b;
    a.emplace("w", Tensor<double>(Shape{n}, v));
    b.emplace("w", Tensor<double>(Shape{n}, neg));
    MergeConfig c;
    c.density = 0.05 * static_cast<double>(1 + rng() % 20);
    const DeltaSet merged = ties_merge({a, b}, c);
    for (double x : merged.at("w").data()) cancel_ok = cancel_ok && x == 0.0;
  }

  // Brute-force per-entry oracle.
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 1 + rng() % 6, n = 1 + rng() % 32;
    const double density = 0.05 * static_cast<double>(1 + rng() % 20);
    oracle::Mat tensors;
    std::vector<DeltaSet> deltas;
    for (std::size_t c = 0; c < k; ++c) {
      tensors.push_back(merge_values(rng, n));
      DeltaSet ds;
      ds.emplace("w", Tensor<double>(Shape{n}, tensors.back()));
      deltas.push_back(std::move(ds));
    }
    MergeConfig c;
    c.density = density;
    worst = std::max(worst, max_abs_diff(ties_merge(deltas, c).at("w").data(), oracle::ties_merge(tensors, density)));
  }
  const double secs = seconds_since(t0);
  const bool pass = identical_ok && cancel_ok && worst < 1e-12 && secs < 60.0;
  rep.criterion(7, "merge properties", pass,
                std::string("identical inputs ") + (identical_ok ? "reproduce the checkpoint bit-exactly" : "DIFFER") +
                    " (k = 1..5), opposite signs " + (cancel_ok ? "cancel" : "do NOT cancel") +
                    ", brute-force max diff " + fmt(worst) + " on 1000 tensors, " + fmt(secs) + " s (< 60 s)");
}

void criterion_exports(Report& rep, const Paths& paths, const DeskState& st) {
  if (!st.full.ok) {
    rep.criterion(8, "artifact exports", false, "no run from criterion 5");
    return;
  }
  const fs::path out = paths.work / "routing";
  fs::remove_all(out);
  bool matrix_ok = false;
  double within = 0.0, across = 0.0, asym = 0.0, diag = 0.0;
  if (run("export-routing --checkpoint " + (st.full.dir / "final").string() + " --out " + out.string(),
          paths.work / "export-routing.log") == 0) {
    const RunConfig cfg = desk_config(paths);
    const auto reg = cfg.registry();
    const auto rows = read_csv(out / "mean.csv");
    const std::size_t n = rows.size();
    std::vector<std::vector<double>> m(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 1; j < rows[i].size(); ++j) m[i].push_back(std::stod(rows[i][j]));
    }
    bool square = n == reg.size();
    for (const auto& r : m) square = square && r.size() == n;
    if (square) {
      double ws = 0.0, as = 0.0;
      std::size_t wc = 0, ac = 0;
      for (std::size_t i = 0; i < n; ++i) {
        diag = std::max(diag, std::fabs(m[i][i] - 1.0));
        for (std::size_t j = 0; j < n; ++j) {
          asym = std::max(asym, std::fabs(m[i][j] - m[j][i]));
          if (i == j) continue;
          if (reg.at(static_cast<TaskId>(i)).branch == reg.at(static_cast<TaskId>(j)).branch) {
            ws += m[i][j];
            ++wc;
          } else {
            as += m[i][j];
            ++ac;
          }
        }
      }
      within = ws / static_cast<double>(wc);
      across = as / static_cast<double>(ac);
      matrix_ok = asym == 0.0 && diag <= 1e-12 && within >= across;
    }
    rep.detail("mean routing similarity: max asymmetry " + fmt(asym) + ", max |diag - 1| " + fmt(diag) +
               ", within-branch " + fmt(within) + ", cross-branch " + fmt(across));
  }

  const fs::path sim = paths.work / "replayed_ratios.csv";
  const bool sim_ok = run("sched-sim --trace " + (st.full.dir / "val_losses.csv").string() + " --config " +
                              (st.full.dir / "config.txt").string() + " --out " + sim.string(),
                          paths.work / "sched-sim-replay.log") == 0 &&
                      same_bytes(sim, st.full.dir / "ratios.csv");
  rep.criterion(8, "artifact exports", matrix_ok && sim_ok,
                std::string("routing matrix ") + (matrix_ok ? "symmetric, unit diagonal, within >= cross" : "FAILS") +
                    ", sched-sim replay " + (sim_ok ? "byte-identical to ratios.csv" : "DIFFERS"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RecFound desk-scale acceptance suite"};
  Paths paths;
  paths.work = "acceptance_work";
  std::vector<int> only;
  app.add_option("work_dir", paths.work, "scratch directory for data and runs");
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(paths.work);
  paths.work = fs::absolute(paths.work);

  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  Report rep;
  DeskState desk;
  const auto guarded = [&](int id, const char* title, const std::function<void()>& body) {
    if (!wanted(id)) return;
    try {
      body();
    } catch (const std::exception& e) {
      rep.criterion(id, title, false, std::string("error: ") + e.what());
    }
  };
  guarded(1, "formula oracles", [&] { criterion_formulas(rep); });
  guarded(2, "gradient checks", [&] { criterion_grad_check(rep); });
  guarded(3, "routing invariants", [&] { criterion_routing(rep, paths); });
  guarded(4, "scheduler behaviour", [&] { criterion_scheduler(rep, paths); });
  guarded(5, "desk-scale training", [&] { criterion_training(rep, paths, desk); });
  if (!desk.full.ok && fs::exists(paths.work / "full_seed1" / "final")) {
    // Reuse a run left by an earlier invocation.
    desk.data = paths.work / "data";
    desk.full.ok = true;
    desk.full.dir = paths.work / "full_seed1";
  }
  guarded(6, "ablation direction", [&] { criterion_ablation(rep, paths, desk); });
  guarded(7, "merge properties", [&] { criterion_merge(rep, paths, desk); });
  guarded(8, "artifact exports", [&] { criterion_exports(rep, paths, desk); });
  std::cout << (rep.failures() == 0 ? "ALL PASS" : std::to_string(rep.failures()) + " criteria FAILED") << "\n";
  return rep.failures() == 0 ? 0 : 1;
}
