// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/objectives/objectives.h"

#include <numeric>

namespace recfound {

template <typename T>
typename Graph<T>::Id info_nce(Graph<T>& g, typename Graph<T>::Id queries, typename Graph<T>::Id positives,
                               std::optional<typename Graph<T>::Id> hard_negatives, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("info_nce: temperature must be positive");
  const std::size_t batch = g.value(queries).rows();
  if (g.value(positives).rows() != batch || g.value(positives).cols() != g.value(queries).cols()) {
    throw ShapeError("info_nce: queries " + shape_string(g.value(queries).shape()) + " vs positives " +
                     shape_string(g.value(positives).shape()));
  }
  if (batch < 2 && !hard_negatives) throw DataError("info_nce needs at least 2 samples or hard negatives");
  auto scope = g.scope("info_nce");
  auto q = g.l2_normalize(queries);
  auto cand = g.l2_normalize(positives);
  if (hard_negatives) cand = g.concat_rows(cand, g.l2_normalize(*hard_negatives));
  auto logits = g.scale(g.linear(q, cand), T(1.0 / temperature));
  std::vector<std::size_t> rows(batch);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  auto targets = rows;
  return g.mean(g.cross_entropy(logits, std::move(rows), std::move(targets)));
}

template <typename T>
typename Graph<T>::Id token_ce(Graph<T>& g, typename Graph<T>::Id logits, std::span<const std::size_t> targets,
                               std::span<const std::uint8_t> mask) {
  const std::size_t n = g.value(logits).rows();
  if (targets.size() != n || mask.size() != n) {
    throw ShapeError("token_ce: " + std::to_string(targets.size()) + " targets / " + std::to_string(mask.size()) +
                     " mask entries for " + std::to_string(n) + " logit rows");
  }
  std::vector<std::size_t> rows, tgt;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    rows.push_back(i);
    tgt.push_back(targets[i]);
  }
  if (rows.empty()) throw DataError("token_ce: loss mask selects no positions");
  auto scope = g.scope("token_ce");
  return g.mean(g.cross_entropy(logits, std::move(rows), std::move(tgt)));
}

template Graph<float>::Id info_nce<float>(Graph<float>&, Graph<float>::Id, Graph<float>::Id,
                                          std::optional<Graph<float>::Id>, double);
template Graph<double>::Id info_nce<double>(Graph<double>&, Graph<double>::Id, Graph<double>::Id,
                                            std::optional<Graph<double>::Id>, double);
template Graph<float>::Id token_ce<float>(Graph<float>&, Graph<float>::Id, std::span<const std::size_t>,
                                          std::span<const std::uint8_t>);
template Graph<double>::Id token_ce<double>(Graph<double>&, Graph<double>::Id, std::span<const std::size_t>,
                                            std::span<const std::uint8_t>);
template Graph<long double>::Id info_nce<long double>(Graph<long double>&, Graph<long double>::Id, Graph<long double>::Id,
                                            std::optional<Graph<long double>::Id>, double);
template Graph<long double>::Id token_ce<long double>(Graph<long double>&, Graph<long double>::Id, std::span<const std::size_t>,
                                            std::span<const std::uint8_t>);

}  // namespace recfound
