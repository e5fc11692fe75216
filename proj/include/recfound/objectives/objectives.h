// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "recfound/numerics/graph.h"

namespace recfound {

// (batch*seq, d) -> (batch, d): mean of the positions with mask = 1.
template <typename T>
typename Graph<T>::Id mean_pool(Graph<T>& g, typename Graph<T>::Id hidden, std::size_t batch, std::size_t seq,
                                std::span<const std::uint8_t> mask) {
  return g.mean_pool(hidden, batch, seq, mask);
}

// Contrastive loss over cosine similarities. Every query's candidate pool is
// all in-batch positives plus all hard negatives; the correct class for
// query b is positive b. Embeddings are L2-normalised inside.
template <typename T>
typename Graph<T>::Id info_nce(Graph<T>& g, typename Graph<T>::Id queries, typename Graph<T>::Id positives,
                               std::optional<typename Graph<T>::Id> hard_negatives, double temperature);

// Mean token NLL over positions with mask = 1 (reduction over token count).
// logits: (n, V); targets, mask: n entries.
template <typename T>
typename Graph<T>::Id token_ce(Graph<T>& g, typename Graph<T>::Id logits, std::span<const std::size_t> targets,
                               std::span<const std::uint8_t> mask);

}  // namespace recfound
