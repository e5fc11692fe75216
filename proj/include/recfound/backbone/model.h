// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "recfound/backbone/tokenizer.h"
#include "recfound/numerics/graph.h"
#include "recfound/tmole/tmole.h"

namespace recfound {

struct BackboneConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_seq_len = 128;
  double dropout = 0.0;        // residual dropout inside the frozen blocks
  std::uint64_t seed = 1234;   // generates the frozen base weights
  bool truncate = false;

  std::size_t vocab_size() const { return tokens::kVocabSize; }
  void validate() const;
};

struct ModelConfig {
  BackboneConfig backbone;
  TMoLEConfig tmole;
};

// Names of the projections carrying TMoLE layers, in forward order.
std::vector<std::string> hooked_projections(const ModelConfig& cfg);
std::vector<std::string> attention_projections(const ModelConfig& cfg);

// Frozen base weights (deterministic in backbone.seed) plus trainable
// adapters, routers, task embeddings and the zero-initialised output head.
ParamStore<float> init_params(const ModelConfig& cfg, const TaskRegistry& registry, std::uint64_t adapter_seed);

// Base backbone without any adapter parameters; projections use W0 only.
ParamStore<float> init_base_params(const BackboneConfig& cfg);

// Right-padded single-branch batch.
struct Batch {
  std::size_t size = 0;
  std::size_t seq = 0;
  Branch branch = Branch::kEmbedding;
  std::vector<int> ids;                      // size*seq
  std::vector<std::uint8_t> attention_mask;  // size*seq
  std::vector<std::uint8_t> loss_mask;       // size*seq
  std::vector<TaskId> tasks;                 // per sample
};

Batch collate(std::span<const TokenizedSample> samples);

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  bool logits = false;
  // When set, logits are computed for these flattened (sample*seq + pos)
  // rows only; otherwise for every row.
  std::optional<std::vector<std::size_t>> logit_rows;
  // Skips all adapter paths: plain W0 projections (the frozen base model).
  bool base_only = false;
};

template <typename T>
struct ForwardOutputs {
  typename Graph<T>::Id hidden{};  // (batch*seq, d_model), final-norm output
  std::optional<typename Graph<T>::Id> logits;
};

template <typename T>
ForwardOutputs<T> backbone_forward(Graph<T>& g, const ModelConfig& cfg, const TaskRegistry& registry,
                                   const Batch& batch, const ForwardOptions& opts);

// Rows (sample*seq + pos) whose next token is a loss target, with those targets.
struct PredictionRows {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> targets;
};
PredictionRows prediction_rows(const Batch& batch);

}  // namespace recfound
