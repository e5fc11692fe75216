// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "recfound/numerics/graph.h"
#include "recfound/tmole/task.h"

namespace recfound {

enum class ExpertGroup { kEmbedding, kShared, kGenerative };

// Where adapter dropout is applied: on the expert-path input (before B_j)
// or on the summed expert output (after A_j).
enum class DropoutSite { kInput, kOutput };

struct TMoLEConfig {
  // When false every hooked projection carries one always-on shared adapter
  // and no router (the single-LoRA ablation).
  bool enabled = true;
  std::size_t embedding_experts = 2;
  std::size_t shared_experts = 2;
  std::size_t generative_experts = 2;
  std::size_t rank = 16;
  double alpha = 64.0;
  double dropout = 0.1;
  DropoutSite dropout_site = DropoutSite::kInput;
  std::size_t task_embed_dim = 512;
  bool hook_mlp = false;

  std::size_t num_experts() const {
    return enabled ? embedding_experts + shared_experts + generative_experts : 1;
  }
  // Experts are ordered (E..., S..., G...).
  ExpertGroup group(std::size_t expert) const;
  // s = alpha / r, applied to every expert.
  double scaling() const { return alpha / static_cast<double>(rank); }
  bool expert_active(std::size_t expert, Branch branch) const;
  void validate(std::size_t min_width) const;
};

std::string task_embedding_name();

// Parameters owned by one hooked projection (base weight lives with the backbone).
void init_tmole_projection(ParamStore<float>& store, const std::string& prefix, std::size_t in, std::size_t out,
                           const TMoLEConfig& cfg, std::mt19937_64& rng);
void init_task_embeddings(ParamStore<float>& store, const TMoLEConfig& cfg, std::size_t num_tasks,
                          std::mt19937_64& rng);

std::string expert_a_name(const std::string& prefix, std::size_t j);
std::string expert_b_name(const std::string& prefix, std::size_t j);

// Tasks present in a batch and the mapping from batch rows to them.
struct RowRouting {
  std::vector<TaskId> tasks;           // distinct task ids, first-seen order
  std::vector<std::size_t> row_group;  // per row: index into `tasks`
  Branch branch = Branch::kEmbedding;
};

// Builds RowRouting for rows laid out as (sample, position) with `seq`
// positions per sample.
RowRouting make_row_routing(const TaskRegistry& registry, std::span<const TaskId> sample_tasks, std::size_t seq);

// Routing distribution v for each task in `tasks`: softmax over the router
// logits restricted to the task's own group and the shared group.
// Result node is (tasks.size(), N); masked entries are exactly 0.
template <typename T>
typename Graph<T>::Id route(Graph<T>& g, const TMoLEConfig& cfg, const TaskRegistry& registry,
                            const std::string& prefix, std::span<const TaskId> tasks);

struct ProjectionContext {
  const RowRouting* routing = nullptr;
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout source, required when training
};

// o = W0 x + sum_j v_j * s * A_j (B_j dropout(x)), per-row gating by task.
template <typename T>
typename Graph<T>::Id tmole_project(Graph<T>& g, const TMoLEConfig& cfg, const TaskRegistry& registry,
                                    const std::string& prefix, typename Graph<T>::Id x, const ProjectionContext& ctx);

// Plain (non-graph) routing vector of one task at one projection.
std::vector<double> routing_vector(const ParamStore<float>& params, const TMoLEConfig& cfg,
                                   const TaskRegistry& registry, const std::string& prefix, TaskId task);

// Pairwise cosine similarity of routing vectors, rows/cols in registration order.
std::vector<std::vector<double>> routing_similarity(const std::vector<std::vector<double>>& routes);
std::vector<std::vector<double>> routing_similarity(const ParamStore<float>& params, const TMoLEConfig& cfg,
                                                    const TaskRegistry& registry, const std::string& prefix);

}  // namespace recfound
