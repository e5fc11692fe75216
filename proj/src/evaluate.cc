// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/harness/evaluate.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "recfound/error.h"

namespace recfound {

std::size_t rank_of(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) throw ShapeError("rank_of: target index out of range");
  const double s = scores[target];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > s || (scores[j] == s && j < target)) ++rank;
  }
  return rank;
}

double mrr_at_k(std::size_t rank, std::size_t k) { return rank >= 1 && rank <= k ? 1.0 / double(rank) : 0.0; }

double ndcg_at_k(std::size_t rank, std::size_t k) {
  return rank >= 1 && rank <= k ? 1.0 / std::log2(double(rank) + 1.0) : 0.0;
}

double recall_at_k(std::size_t rank, std::size_t k) { return rank >= 1 && rank <= k ? 1.0 : 0.0; }

namespace {

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

}  // namespace

bool exact_match(const std::string& prediction, const std::string& reference) {
  return strip(prediction) == strip(reference);
}

double token_f1(const std::string& prediction, const std::string& reference) {
  auto p = split_ws(prediction), r = split_ws(reference);
  if (p.empty() && r.empty()) return 1.0;
  if (p.empty() || r.empty()) return 0.0;
  std::map<std::string, std::size_t> rc;
  for (const auto& t : r) ++rc[t];
  std::size_t common = 0;
  for (const auto& t : p) {
    auto it = rc.find(t);
    if (it != rc.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double prec = double(common) / double(p.size()), rec = double(common) / double(r.size());
  return 2.0 * prec * rec / (prec + rec);
}

const TaskMetrics& EvalReport::task(const std::string& name) const {
  for (const auto& t : tasks) {
    if (t.task == name) return t;
  }
  throw DataError("no evaluation results for task '" + name + "'");
}

std::string EvalReport::to_csv() const {
  std::string out = "task,branch,metric,value\n";
  for (const auto& t : tasks) {
    out += t.task + "," + std::string(branch_name(t.branch)) + ",count," + std::to_string(t.count) + "\n";
    for (const auto& [m, v] : t.values) {
      out += t.task + "," + std::string(branch_name(t.branch)) + "," + m + "," + format_double(v) + "\n";
    }
  }
  return out;
}

EvalReport evaluate(const ParamStore<float>& params, const RunConfig& cfg, const SplitData& split, std::size_t k) {
  const TaskRegistry registry = cfg.registry();
  EvalReport report;
  for (const auto& spec : registry.tasks()) {
    TaskMetrics tm;
    tm.task = spec.name;
    tm.branch = spec.branch;
    if (spec.branch == Branch::kEmbedding) {
      std::vector<const EmbeddingExample*> ex;
      for (const auto& e : split.embedding) {
        if (e.task == spec.id) ex.push_back(&e);
      }
      if (ex.empty()) throw DataError("no evaluation samples for task '" + spec.name + "'");
      std::vector<std::string> cand_text;
      std::vector<TokenizedSample> cand, queries;
      std::vector<std::size_t> target;
      for (const auto* e : ex) {
        auto it = std::find(cand_text.begin(), cand_text.end(), e->positive_text);
        if (it == cand_text.end()) {
          cand_text.push_back(e->positive_text);
          cand.push_back(e->positive);
          target.push_back(cand.size() - 1);
        } else {
          target.push_back(static_cast<std::size_t>(it - cand_text.begin()));
        }
        queries.push_back(e->query);
      }
      std::size_t kk = k;
      if (cand.size() < k) {
        kk = cand.size();
        tm.warnings.push_back("candidate pool of " + std::to_string(cand.size()) + " is smaller than k=" +
                              std::to_string(k) + "; using k=" + std::to_string(kk));
      }
      const auto qe = encode_texts(params, cfg.model, registry, spec.id, queries);
      const auto ce = encode_texts(params, cfg.model, registry, spec.id, cand);
      double mrr = 0.0, ndcg = 0.0, r1 = 0.0;
      std::vector<double> scores(ce.size());
      for (std::size_t q = 0; q < qe.size(); ++q) {
        for (std::size_t c = 0; c < ce.size(); ++c) {
          double dot = 0.0;
          for (std::size_t d = 0; d < qe[q].size(); ++d) dot += qe[q][d] * ce[c][d];
          scores[c] = dot;
        }
        const std::size_t r = rank_of(scores, target[q]);
        mrr += mrr_at_k(r, kk);
        ndcg += ndcg_at_k(r, kk);
        r1 += recall_at_k(r, 1);
      }
      const double n = double(qe.size());
      tm.count = qe.size();
      tm.values["mrr@" + std::to_string(k)] = mrr / n;
      tm.values["ndcg@" + std::to_string(k)] = ndcg / n;
      tm.values["recall@1"] = r1 / n;
    } else {
      double em = 0.0, f1 = 0.0;
      for (const auto& e : split.generative) {
        if (e.task != spec.id) continue;
        const std::string pred =
            greedy_decode(params, cfg.model, registry, spec.id, e.prompt, cfg.train.eval_max_new_tokens);
        em += exact_match(pred, e.response) ? 1.0 : 0.0;
        f1 += token_f1(pred, e.response);
        ++tm.count;
      }
      if (tm.count == 0) throw DataError("no evaluation samples for task '" + spec.name + "'");
      tm.values["exact_match"] = em / double(tm.count);
      tm.values["token_f1"] = f1 / double(tm.count);
    }
    report.tasks.push_back(std::move(tm));
  }
  return report;
}

}  // namespace recfound
