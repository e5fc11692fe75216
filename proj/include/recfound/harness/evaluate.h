// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "recfound/harness/config.h"
#include "recfound/harness/pipeline.h"

namespace recfound {

// 1-based rank of scores[target]; candidates with an equal score rank ahead
// when their index is lower.
std::size_t rank_of(std::span<const double> scores, std::size_t target);

double mrr_at_k(std::size_t rank, std::size_t k);
double ndcg_at_k(std::size_t rank, std::size_t k);  // one relevant item: 1/log2(rank+1)
double recall_at_k(std::size_t rank, std::size_t k);

// Leading/trailing whitespace ignored.
bool exact_match(const std::string& prediction, const std::string& reference);
// Bag-of-tokens F1 over whitespace-separated tokens; two empty strings score 1.
double token_f1(const std::string& prediction, const std::string& reference);

struct TaskMetrics {
  std::string task;
  Branch branch = Branch::kEmbedding;
  std::size_t count = 0;
  std::map<std::string, double> values;  // metric name -> value
  std::vector<std::string> warnings;
};

struct EvalReport {
  std::vector<TaskMetrics> tasks;

  const TaskMetrics& task(const std::string& name) const;
  // task,branch,metric,value rows.
  std::string to_csv() const;
};

// Embedding tasks rank every distinct positive of the task's split by cosine
// to each query (MRR@k, NDCG@k, Recall@1); generative tasks decode greedily
// (exact match, token F1).
EvalReport evaluate(const ParamStore<float>& params, const RunConfig& cfg, const SplitData& split, std::size_t k = 20);

}  // namespace recfound
