// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/tmole/tmole.h"

#include <cmath>

namespace recfound {

ExpertGroup TMoLEConfig::group(std::size_t expert) const {
  if (!enabled) return ExpertGroup::kShared;
  if (expert < embedding_experts) return ExpertGroup::kEmbedding;
  if (expert < embedding_experts + shared_experts) return ExpertGroup::kShared;
  return ExpertGroup::kGenerative;
}

bool TMoLEConfig::expert_active(std::size_t expert, Branch branch) const {
  switch (group(expert)) {
    case ExpertGroup::kShared:
      return true;
    case ExpertGroup::kEmbedding:
      return branch == Branch::kEmbedding;
    case ExpertGroup::kGenerative:
      return branch == Branch::kGenerative;
  }
  return false;
}

void TMoLEConfig::validate(std::size_t min_width) const {
  if (rank == 0 || rank >= min_width) {
    throw ConfigError("tmole.rank must satisfy 0 < r < d (r=" + std::to_string(rank) + ", d=" +
                      std::to_string(min_width) + ")");
  }
  if (!(alpha > 0.0)) throw ConfigError("tmole.alpha must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("tmole.dropout must be in [0, 1)");
  if (enabled) {
    if (task_embed_dim == 0) throw ConfigError("tmole.task_embed_dim must be positive");
    if (num_experts() == 0) throw ConfigError("tmole needs at least one expert");
    // Each branch needs a non-empty unmasked set.
    if (embedding_experts + shared_experts == 0 || generative_experts + shared_experts == 0) {
      throw ConfigError("tmole: every branch needs at least one own-group or shared expert");
    }
  }
}

std::string task_embedding_name() { return "task_embedding"; }
std::string expert_a_name(const std::string& prefix, std::size_t j) {
  return prefix + ".experts." + std::to_string(j) + ".A";
}
std::string expert_b_name(const std::string& prefix, std::size_t j) {
  return prefix + ".experts." + std::to_string(j) + ".B";
}

namespace {

Tensor<float> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor<float> t(std::move(shape));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.data()) v = static_cast<float>(u(rng));
  return t;
}

std::vector<std::uint8_t> route_keep_mask(const TMoLEConfig& cfg, const TaskRegistry& registry,
                                          std::span<const TaskId> tasks) {
  const std::size_t n = cfg.num_experts();
  std::vector<std::uint8_t> keep(tasks.size() * n, 0);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Branch b = registry.at(tasks[t]).branch;
    for (std::size_t j = 0; j < n; ++j) keep[t * n + j] = cfg.expert_active(j, b) ? 1 : 0;
  }
  return keep;
}

template <typename T>
Tensor<T> dropout_mask(std::size_t rows, std::size_t cols, double p, std::mt19937_64& rng) {
  Tensor<T> m(Shape{rows, cols});
  const T keep_scale = T(1.0 / (1.0 - p));
  for (auto& v : m.data()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = u < p ? T(0) : keep_scale;
  }
  return m;
}

}  // namespace

void init_tmole_projection(ParamStore<float>& store, const std::string& prefix, std::size_t in, std::size_t out,
                           const TMoLEConfig& cfg, std::mt19937_64& rng) {
  const std::size_t r = cfg.rank;
  for (std::size_t j = 0; j < cfg.num_experts(); ++j) {
    store.add(expert_a_name(prefix, j), uniform_tensor({out, r}, 1.0 / std::sqrt(double(r)), rng), true);
    store.add(expert_b_name(prefix, j), Tensor<float>(Shape{r, in}, 0.0f), true);
  }
  if (!cfg.enabled) return;
  const std::size_t de = cfg.task_embed_dim;
  store.add(prefix + ".router.w1", uniform_tensor({de, de}, 1.0 / std::sqrt(double(de)), rng), true);
  store.add(prefix + ".router.b1", Tensor<float>(Shape{de}, 0.0f), true);
  // Zero final layer: uniform routing over the unmasked experts at step 0.
  store.add(prefix + ".router.w2", Tensor<float>(Shape{cfg.num_experts(), de}, 0.0f), true);
  store.add(prefix + ".router.b2", Tensor<float>(Shape{cfg.num_experts()}, 0.0f), true);
}

void init_task_embeddings(ParamStore<float>& store, const TMoLEConfig& cfg, std::size_t num_tasks,
                          std::mt19937_64& rng) {
  if (!cfg.enabled) return;
  Tensor<float> t(Shape{num_tasks, cfg.task_embed_dim});
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.data()) v = static_cast<float>(n(rng));
  store.add(task_embedding_name(), std::move(t), true);
}

RowRouting make_row_routing(const TaskRegistry& registry, std::span<const TaskId> sample_tasks, std::size_t seq) {
  RowRouting rr;
  if (sample_tasks.empty()) throw DataError("cannot route an empty batch");
  rr.branch = registry.at(sample_tasks[0]).branch;
  rr.row_group.reserve(sample_tasks.size() * seq);
  for (TaskId t : sample_tasks) {
    const auto& spec = registry.at(t);
    if (spec.branch != rr.branch) {
      throw DataError("mixed-branch batch: task '" + spec.name + "' is " + std::string(branch_name(spec.branch)) +
                      " but the batch is " + std::string(branch_name(rr.branch)));
    }
    std::size_t grp = rr.tasks.size();
    for (std::size_t i = 0; i < rr.tasks.size(); ++i) {
      if (rr.tasks[i] == t) grp = i;
    }
    if (grp == rr.tasks.size()) rr.tasks.push_back(t);
    for (std::size_t p = 0; p < seq; ++p) rr.row_group.push_back(grp);
  }
  return rr;
}

template <typename T>
typename Graph<T>::Id route(Graph<T>& g, const TMoLEConfig& cfg, const TaskRegistry& registry,
                            const std::string& prefix, std::span<const TaskId> tasks) {
  auto keep = route_keep_mask(cfg, registry, tasks);
  if (!cfg.enabled) {
    return g.input(Tensor<T>(Shape{tasks.size(), 1}, T(1)), "route.fixed");
  }
  auto scope = g.scope(prefix + ".router");
  std::vector<std::size_t> rows(tasks.begin(), tasks.end());
  auto e = g.gather_rows(g.param(task_embedding_name()), rows);
  auto h = g.tanh(g.add_bias(g.linear(e, g.param(prefix + ".router.w1")), g.param(prefix + ".router.b1")));
  auto z = g.add_bias(g.linear(h, g.param(prefix + ".router.w2")), g.param(prefix + ".router.b2"));
  return g.masked_softmax(z, std::move(keep));
}

template <typename T>
typename Graph<T>::Id tmole_project(Graph<T>& g, const TMoLEConfig& cfg, const TaskRegistry& registry,
                                    const std::string& prefix, typename Graph<T>::Id x, const ProjectionContext& ctx) {
  const auto w0 = g.param(prefix + ".base");
  // Copy dims out: references into the graph do not survive new nodes.
  const std::size_t rows = g.value(x).rows(), in = g.value(x).cols();
  const Shape w0_shape = g.value(w0).shape();
  if (w0_shape.size() != 2 || in != w0_shape[1]) {
    throw ShapeError("tmole projection '" + prefix + "': input width " + std::to_string(in) +
                     " does not match base weight " + shape_string(w0_shape));
  }
  if (ctx.routing == nullptr || ctx.routing->row_group.size() != rows) {
    throw ShapeError("tmole projection '" + prefix + "': routing does not cover " + std::to_string(rows) + " rows");
  }
  const std::size_t out = w0_shape[0];
  const bool drop = ctx.training && cfg.dropout > 0.0;
  if (drop && ctx.rng == nullptr) throw StateError("tmole projection '" + prefix + "': dropout needs an rng");

  auto base = g.linear(x, w0);
  auto scope = g.scope(prefix);
  auto gates = route(g, cfg, registry, prefix, ctx.routing->tasks);
  auto xd = x;
  if (drop && cfg.dropout_site == DropoutSite::kInput) {
    xd = g.mul(x, g.input(dropout_mask<T>(rows, in, cfg.dropout, *ctx.rng), "dropout"));
  }
  const T s = T(cfg.scaling());
  std::optional<typename Graph<T>::Id> acc;
  for (std::size_t j = 0; j < cfg.num_experts(); ++j) {
    // Experts masked for this branch have v_j = 0 for every row.
    if (!cfg.expert_active(j, ctx.routing->branch)) continue;
    auto h = g.linear(xd, g.param(expert_b_name(prefix, j)));
    h = cfg.enabled ? g.gate_rows(h, gates, ctx.routing->row_group, j, s) : g.scale(h, s);
    auto d = g.linear(h, g.param(expert_a_name(prefix, j)));
    acc = acc ? g.add(*acc, d) : d;
  }
  if (!acc) return base;
  if (drop && cfg.dropout_site == DropoutSite::kOutput) {
    acc = g.mul(*acc, g.input(dropout_mask<T>(rows, out, cfg.dropout, *ctx.rng), "dropout"));
  }
  return g.add(base, *acc);
}

std::vector<double> routing_vector(const ParamStore<float>& params, const TMoLEConfig& cfg,
                                   const TaskRegistry& registry, const std::string& prefix, TaskId task) {
  Graph<float> g(params, false);
  const TaskId ids[] = {task};
  auto v = route<float>(g, cfg, registry, prefix, ids);
  const auto& t = g.value(v);
  return std::vector<double>(t.data().begin(), t.data().end());
}

std::vector<std::vector<double>> routing_similarity(const std::vector<std::vector<double>>& routes) {
  const std::size_t n = routes.size();
  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 0.0));
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (double v : routes[i]) norms[i] += v * v;
    norms[i] = std::sqrt(norms[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      if (routes[i].size() != routes[j].size()) throw ShapeError("routing vectors differ in length");
      double dot = 0.0;
      for (std::size_t k = 0; k < routes[i].size(); ++k) dot += routes[i][k] * routes[j][k];
      const double denom = norms[i] * norms[j];
      const double c = i == j ? 1.0 : (denom > 0.0 ? dot / denom : 0.0);
      sim[i][j] = sim[j][i] = c;
    }
  }
  return sim;
}

std::vector<std::vector<double>> routing_similarity(const ParamStore<float>& params, const TMoLEConfig& cfg,
                                                    const TaskRegistry& registry, const std::string& prefix) {
  std::vector<std::vector<double>> routes;
  for (const auto& t : registry.tasks()) routes.push_back(routing_vector(params, cfg, registry, prefix, t.id));
  return routing_similarity(routes);
}

template Graph<float>::Id route<float>(Graph<float>&, const TMoLEConfig&, const TaskRegistry&, const std::string&,
                                       std::span<const TaskId>);
template Graph<double>::Id route<double>(Graph<double>&, const TMoLEConfig&, const TaskRegistry&, const std::string&,
                                         std::span<const TaskId>);
template Graph<float>::Id tmole_project<float>(Graph<float>&, const TMoLEConfig&, const TaskRegistry&,
                                               const std::string&, Graph<float>::Id, const ProjectionContext&);
template Graph<double>::Id tmole_project<double>(Graph<double>&, const TMoLEConfig&, const TaskRegistry&,
                                                 const std::string&, Graph<double>::Id, const ProjectionContext&);
template Graph<long double>::Id route<long double>(Graph<long double>&, const TMoLEConfig&, const TaskRegistry&, const std::string&,
                                         std::span<const TaskId>);
template Graph<long double>::Id tmole_project<long double>(Graph<long double>&, const TMoLEConfig&, const TaskRegistry&,
                                                 const std::string&, Graph<long double>::Id, const ProjectionContext&);

}  // namespace recfound
