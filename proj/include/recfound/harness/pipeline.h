// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "recfound/backbone/model.h"
#include "recfound/data/data.h"
#include "recfound/harness/config.h"

namespace recfound {

struct EmbeddingExample {
  TaskId task = 0;
  TokenizedSample query;
  TokenizedSample positive;
  std::optional<TokenizedSample> negative;
  std::string positive_text;
};

struct GenerativeExample {
  TaskId task = 0;
  TokenizedSample sample;
  std::string prompt;
  std::string response;
};

struct SplitData {
  std::vector<EmbeddingExample> embedding;
  std::vector<GenerativeExample> generative;
  std::vector<std::string> load_notes;  // malformed-line summaries

  std::vector<TaskId> embedding_tasks() const;
  std::vector<TaskId> generative_tasks() const;
};

// Loads `<dir>/{embedding,generative}_<split>.jsonl` for the branches that
// have configured tasks. Samples of unconfigured tasks are an error.
SplitData load_split(const RunConfig& cfg, const TaskRegistry& registry, const std::string& split);

EmbeddingExample make_embedding_example(const EmbeddingTriplet& t, TaskId task, const TokenizerOptions& opts);
GenerativeExample make_generative_example(const GenerativeSample& s, TaskId task, const TokenizerOptions& opts);

TokenizerOptions tokenizer_options(const ModelConfig& cfg);

// Contrastive loss of a batch of triplets. Hard negatives join the candidate
// pool only when every triplet has one.
template <typename T>
typename Graph<T>::Id embedding_batch_loss(Graph<T>& g, const ModelConfig& cfg, const TaskRegistry& registry,
                                           std::span<const EmbeddingExample* const> batch, double temperature,
                                           const ForwardOptions& opts);

// Mean next-token NLL over response tokens and EOS.
template <typename T>
typename Graph<T>::Id generative_batch_loss(Graph<T>& g, const ModelConfig& cfg, const TaskRegistry& registry,
                                            std::span<const GenerativeExample* const> batch,
                                            const ForwardOptions& opts);

// Pooled, L2-normalised embeddings of `texts` (eval mode).
std::vector<std::vector<double>> encode_texts(const ParamStore<float>& params, const ModelConfig& cfg,
                                              const TaskRegistry& registry, TaskId task,
                                              const std::vector<TokenizedSample>& samples);

// Greedy continuation of `prompt` until EOS, the token budget or max_seq_len.
std::string greedy_decode(const ParamStore<float>& params, const ModelConfig& cfg, const TaskRegistry& registry,
                          TaskId task, const std::string& prompt, std::size_t max_new_tokens);

}  // namespace recfound
