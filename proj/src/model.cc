// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/backbone/model.h"

#include <cmath>

namespace recfound {

void BackboneConfig::validate() const {
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("backbone.d_model (" + std::to_string(d_model) + ") must be divisible by backbone.n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("backbone.dropout must be in [0, 1)");
}

namespace {

const char* const kAttnProj[] = {"q", "k", "v", "o"};

std::string layer_prefix(std::size_t l) { return "layers." + std::to_string(l); }

Tensor<float> normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<float> t(std::move(shape));
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<float>(n(rng));
  return t;
}

struct ProjDims {
  std::string name;
  std::size_t in, out;
};

std::vector<ProjDims> all_projections(const BackboneConfig& b) {
  std::vector<ProjDims> out;
  for (std::size_t l = 0; l < b.n_layers; ++l) {
    for (const char* p : kAttnProj) out.push_back({layer_prefix(l) + ".attn." + p, b.d_model, b.d_model});
    out.push_back({layer_prefix(l) + ".mlp.up", b.d_model, b.d_ff});
    out.push_back({layer_prefix(l) + ".mlp.down", b.d_ff, b.d_model});
  }
  return out;
}

bool is_hooked(const ModelConfig& cfg, const std::string& name) {
  return name.find(".attn.") != std::string::npos || cfg.tmole.hook_mlp;
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

std::vector<std::string> attention_projections(const ModelConfig& cfg) {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < cfg.backbone.n_layers; ++l) {
    for (const char* p : kAttnProj) out.push_back(layer_prefix(l) + ".attn." + p);
  }
  return out;
}

std::vector<std::string> hooked_projections(const ModelConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& p : all_projections(cfg.backbone)) {
    if (is_hooked(cfg, p.name)) out.push_back(p.name);
  }
  return out;
}

ParamStore<float> init_base_params(const BackboneConfig& b) {
  b.validate();
  std::mt19937_64 rng(b.seed);
  ParamStore<float> store;
  store.add("embed.tokens", normal_tensor({b.vocab_size(), b.d_model}, 1.0, rng), false);
  store.add("embed.positions", normal_tensor({b.max_seq_len, b.d_model}, 1.0, rng), false);
  for (const auto& p : all_projections(b)) {
    store.add(p.name + ".base", normal_tensor({p.out, p.in}, 1.0 / std::sqrt(double(p.in)), rng), false);
  }
  return store;
}

ParamStore<float> init_params(const ModelConfig& cfg, const TaskRegistry& registry, std::uint64_t adapter_seed) {
  cfg.backbone.validate();
  if (registry.size() == 0) throw ConfigError("no tasks registered");
  ParamStore<float> store = init_base_params(cfg.backbone);
  std::mt19937_64 rng(adapter_seed);
  for (const auto& p : all_projections(cfg.backbone)) {
    if (!is_hooked(cfg, p.name)) continue;
    cfg.tmole.validate(std::min(p.in, p.out));
    init_tmole_projection(store, p.name, p.in, p.out, cfg.tmole, rng);
  }
  init_task_embeddings(store, cfg.tmole, registry.size(), rng);
  const std::size_t d = cfg.backbone.d_model, v = cfg.backbone.vocab_size();
  store.add("head.weight", Tensor<float>(Shape{v, d}, 0.0f), true);
  store.add("head.bias", Tensor<float>(Shape{v}, 0.0f), true);
  return store;
}

Batch collate(std::span<const TokenizedSample> samples) {
  if (samples.empty()) throw DataError("cannot collate an empty batch");
  Batch b;
  b.size = samples.size();
  b.branch = samples[0].branch;
  for (const auto& s : samples) {
    if (s.branch != b.branch) throw DataError("mixed-branch batch: embedding and generative samples must be separate");
    if (s.ids.size() != s.attention_mask.size() || s.ids.size() != s.loss_mask.size()) {
      throw DataError("sample masks do not match its token count");
    }
    bool any = false;
    for (auto m : s.attention_mask) any = any || m;
    if (!any) throw DataError("sample with no real tokens (all padding)");
    b.seq = std::max(b.seq, s.ids.size());
  }
  b.ids.assign(b.size * b.seq, tokens::kPad);
  b.attention_mask.assign(b.size * b.seq, 0);
  b.loss_mask.assign(b.size * b.seq, 0);
  for (std::size_t i = 0; i < b.size; ++i) {
    const auto& s = samples[i];
    std::copy(s.ids.begin(), s.ids.end(), b.ids.begin() + i * b.seq);
    std::copy(s.attention_mask.begin(), s.attention_mask.end(), b.attention_mask.begin() + i * b.seq);
    std::copy(s.loss_mask.begin(), s.loss_mask.end(), b.loss_mask.begin() + i * b.seq);
    b.tasks.push_back(s.task);
  }
  return b;
}

PredictionRows prediction_rows(const Batch& batch) {
  PredictionRows out;
  for (std::size_t i = 0; i < batch.size; ++i) {
    for (std::size_t p = 1; p < batch.seq; ++p) {
      const std::size_t r = i * batch.seq + p;
      if (batch.loss_mask[r] && batch.attention_mask[r]) {
        out.rows.push_back(r - 1);
        out.targets.push_back(static_cast<std::size_t>(batch.ids[r]));
      }
    }
  }
  return out;
}

template <typename T>
ForwardOutputs<T> backbone_forward(Graph<T>& g, const ModelConfig& cfg, const TaskRegistry& registry,
                                   const Batch& batch, const ForwardOptions& opts) {
  const auto& bc = cfg.backbone;
  if (batch.size == 0 || batch.seq == 0) throw DataError("empty batch");
  if (batch.seq > bc.max_seq_len) {
    throw DataError("batch sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                    std::to_string(bc.max_seq_len));
  }
  if (opts.training && (bc.dropout > 0.0 || cfg.tmole.dropout > 0.0) && opts.rng == nullptr) {
    throw StateError("training forward needs an rng for dropout");
  }
  for (std::size_t i = 0; i < batch.size; ++i) {
    bool any = false;
    for (std::size_t p = 0; p < batch.seq; ++p) any = any || batch.attention_mask[i * batch.seq + p];
    if (!any) throw DataError("sample " + std::to_string(i) + " in batch is all padding");
  }
  const RowRouting routing = make_row_routing(registry, batch.tasks, batch.seq);
  const std::size_t rows = batch.size * batch.seq;

  std::vector<std::size_t> tok(rows), pos(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    tok[r] = static_cast<std::size_t>(batch.ids[r]);
    pos[r] = r % batch.seq;
  }
  auto x = g.add(g.gather_rows(g.param("embed.tokens"), std::move(tok)),
                 g.gather_rows(g.param("embed.positions"), std::move(pos)));

  ProjectionContext pctx{&routing, opts.training, opts.rng};
  auto project = [&](const std::string& name, typename Graph<T>::Id in) {
    if (opts.base_only || !is_hooked(cfg, name)) return g.linear(in, g.param(name + ".base"));
    return tmole_project<T>(g, cfg.tmole, registry, name, in, pctx);
  };
  auto residual_dropout = [&](typename Graph<T>::Id y) {
    if (!opts.training || bc.dropout <= 0.0) return y;
    const auto& v = g.value(y);
    auto mask = dropout_mask<T>(v.rows(), v.cols(), bc.dropout, *opts.rng);
    return g.mul(y, g.input(std::move(mask), "residual_dropout"));
  };

  AttentionLayout layout;
  layout.batch = batch.size;
  layout.seq = batch.seq;
  layout.heads = bc.n_heads;
  layout.causal = true;
  layout.key_mask = batch.attention_mask;

  for (std::size_t l = 0; l < bc.n_layers; ++l) {
    const std::string lp = layer_prefix(l);
    auto scope = g.scope(lp);
    auto h = g.layer_norm(x);
    auto q = project(lp + ".attn.q", h);
    auto k = project(lp + ".attn.k", h);
    auto v = project(lp + ".attn.v", h);
    auto a = g.attention(q, k, v, layout);
    x = g.add(x, residual_dropout(project(lp + ".attn.o", a)));
    auto h2 = g.layer_norm(x);
    auto m = g.gelu(project(lp + ".mlp.up", h2));
    x = g.add(x, residual_dropout(project(lp + ".mlp.down", m)));
  }
  ForwardOutputs<T> out;
  out.hidden = g.layer_norm(x);
  if (opts.logits) {
    auto src = out.hidden;
    if (opts.logit_rows) {
      if (opts.logit_rows->empty()) throw DataError("no rows selected for logits");
      src = g.gather_rows(out.hidden, *opts.logit_rows);
    }
    out.logits = g.add_bias(g.linear(src, g.param("head.weight")), g.param("head.bias"));
  }
  return out;
}

template ForwardOutputs<float> backbone_forward<float>(Graph<float>&, const ModelConfig&, const TaskRegistry&,
                                                       const Batch&, const ForwardOptions&);
template ForwardOutputs<double> backbone_forward<double>(Graph<double>&, const ModelConfig&, const TaskRegistry&,
                                                         const Batch&, const ForwardOptions&);
template ForwardOutputs<long double> backbone_forward<long double>(Graph<long double>&, const ModelConfig&, const TaskRegistry&,
                                                         const Batch&, const ForwardOptions&);

}  // namespace recfound
