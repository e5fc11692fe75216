// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/harness/pipeline.h"

#include <cmath>
#include <filesystem>

#include "recfound/error.h"
#include "recfound/objectives/objectives.h"

namespace recfound {

std::vector<TaskId> SplitData::embedding_tasks() const {
  std::vector<TaskId> out;
  for (const auto& e : embedding) out.push_back(e.task);
  return out;
}

std::vector<TaskId> SplitData::generative_tasks() const {
  std::vector<TaskId> out;
  for (const auto& e : generative) out.push_back(e.task);
  return out;
}

TokenizerOptions tokenizer_options(const ModelConfig& cfg) {
  return TokenizerOptions{cfg.backbone.max_seq_len, cfg.backbone.truncate};
}

EmbeddingExample make_embedding_example(const EmbeddingTriplet& t, TaskId task, const TokenizerOptions& opts) {
  EmbeddingExample e;
  e.task = task;
  e.query = make_embedding_sample(t.query, task, opts);
  e.positive = make_embedding_sample(t.positive, task, opts);
  if (t.negative) e.negative = make_embedding_sample(*t.negative, task, opts);
  e.positive_text = t.positive;
  return e;
}

GenerativeExample make_generative_example(const GenerativeSample& s, TaskId task, const TokenizerOptions& opts) {
  GenerativeExample e;
  e.task = task;
  e.prompt = generative_prompt(s);
  e.response = s.response;
  e.sample = make_generative_sample(e.prompt, e.response, task, opts);
  return e;
}

SplitData load_split(const RunConfig& cfg, const TaskRegistry& registry, const std::string& split) {
  SplitData out;
  const auto opts = tokenizer_options(cfg.model);
  if (!cfg.embedding_tasks.empty()) {
    const auto path = cfg.data_dir / ("embedding_" + split + ".jsonl");
    auto res = load_embedding(path, registry);
    if (res.malformed) out.load_notes.push_back(path.string() + ": " + res.summary());
    for (const auto& t : res.samples) out.embedding.push_back(make_embedding_example(t, registry.find(t.task).id, opts));
  }
  if (!cfg.generative_tasks.empty()) {
    const auto path = cfg.data_dir / ("generative_" + split + ".jsonl");
    auto res = load_generative(path, registry);
    if (res.malformed) out.load_notes.push_back(path.string() + ": " + res.summary());
    for (const auto& s : res.samples) {
      out.generative.push_back(make_generative_example(s, registry.find(s.task).id, opts));
    }
  }
  return out;
}

template <typename T>
typename Graph<T>::Id embedding_batch_loss(Graph<T>& g, const ModelConfig& cfg, const TaskRegistry& registry,
                                           std::span<const EmbeddingExample* const> batch, double temperature,
                                           const ForwardOptions& opts) {
  if (batch.empty()) throw DataError("empty embedding batch");
  bool negatives = true;
  for (const auto* e : batch) negatives = negatives && e->negative.has_value();
  std::vector<TokenizedSample> samples;
  samples.reserve(batch.size() * 3);
  for (const auto* e : batch) samples.push_back(e->query);
  for (const auto* e : batch) samples.push_back(e->positive);
  if (negatives) {
    for (const auto* e : batch) samples.push_back(*e->negative);
  }
  const Batch b = collate(samples);
  ForwardOptions fo = opts;
  fo.logits = false;
  auto out = backbone_forward<T>(g, cfg, registry, b, fo);
  auto pooled = mean_pool<T>(g, out.hidden, b.size, b.seq, b.attention_mask);
  const std::size_t n = batch.size();
  auto q = g.split_rows(pooled, 0, n);
  auto p = g.split_rows(pooled, n, n);
  std::optional<typename Graph<T>::Id> neg;
  if (negatives) neg = g.split_rows(pooled, 2 * n, n);
  return info_nce<T>(g, q, p, neg, temperature);
}

template <typename T>
typename Graph<T>::Id generative_batch_loss(Graph<T>& g, const ModelConfig& cfg, const TaskRegistry& registry,
                                            std::span<const GenerativeExample* const> batch,
                                            const ForwardOptions& opts) {
  if (batch.empty()) throw DataError("empty generative batch");
  std::vector<TokenizedSample> samples;
  samples.reserve(batch.size());
  for (const auto* e : batch) samples.push_back(e->sample);
  const Batch b = collate(samples);
  const PredictionRows pr = prediction_rows(b);
  ForwardOptions fo = opts;
  fo.logits = true;
  fo.logit_rows = pr.rows;
  auto out = backbone_forward<T>(g, cfg, registry, b, fo);
  const std::vector<std::uint8_t> mask(pr.rows.size(), 1);
  return token_ce<T>(g, *out.logits, pr.targets, mask);
}

template Graph<float>::Id embedding_batch_loss<float>(Graph<float>&, const ModelConfig&, const TaskRegistry&,
                                                      std::span<const EmbeddingExample* const>, double,
                                                      const ForwardOptions&);
template Graph<double>::Id embedding_batch_loss<double>(Graph<double>&, const ModelConfig&, const TaskRegistry&,
                                                        std::span<const EmbeddingExample* const>, double,
                                                        const ForwardOptions&);
template Graph<float>::Id generative_batch_loss<float>(Graph<float>&, const ModelConfig&, const TaskRegistry&,
                                                       std::span<const GenerativeExample* const>,
                                                       const ForwardOptions&);
template Graph<double>::Id generative_batch_loss<double>(Graph<double>&, const ModelConfig&, const TaskRegistry&,
                                                         std::span<const GenerativeExample* const>,
                                                         const ForwardOptions&);

std::vector<std::vector<double>> encode_texts(const ParamStore<float>& params, const ModelConfig& cfg,
                                              const TaskRegistry& registry, TaskId task,
                                              const std::vector<TokenizedSample>& samples) {
  std::vector<std::vector<double>> out;
  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t end = std::min(samples.size(), begin + kChunk);
    std::vector<TokenizedSample> chunk(samples.begin() + begin, samples.begin() + end);
    for (auto& s : chunk) s.task = task;
    const Batch b = collate(chunk);
    Graph<float> g(params, false);
    auto fwd = backbone_forward<float>(g, cfg, registry, b, ForwardOptions{});
    const auto& pooled = g.value(g.mean_pool(fwd.hidden, b.size, b.seq, b.attention_mask));
    for (std::size_t r = 0; r < pooled.rows(); ++r) {
      std::vector<double> v(pooled.cols());
      double norm = 0.0;
      for (std::size_t c = 0; c < v.size(); ++c) {
        v[c] = pooled.at(r, c);
        norm += v[c] * v[c];
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) throw NumericError("zero-norm embedding during evaluation");
      for (auto& x : v) x /= norm;
      out.push_back(std::move(v));
    }
  }
  return out;
}

std::string greedy_decode(const ParamStore<float>& params, const ModelConfig& cfg, const TaskRegistry& registry,
                          TaskId task, const std::string& prompt, std::size_t max_new_tokens) {
  const auto opts = tokenizer_options(cfg);
  std::vector<int> ids = make_prompt_ids(prompt, opts);
  std::vector<int> generated;
  for (std::size_t step = 0; step < max_new_tokens && ids.size() < cfg.backbone.max_seq_len; ++step) {
    TokenizedSample s;
    s.ids = ids;
    s.attention_mask.assign(ids.size(), 1);
    s.loss_mask.assign(ids.size(), 0);
    s.branch = Branch::kGenerative;
    s.task = task;
    const Batch b = collate(std::span<const TokenizedSample>(&s, 1));
    Graph<float> g(params, false);
    ForwardOptions fo;
    fo.logits = true;
    fo.logit_rows = std::vector<std::size_t>{ids.size() - 1};
    auto fwd = backbone_forward<float>(g, cfg, registry, b, fo);
    const auto& logits = g.value(*fwd.logits);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (logits.at(0, c) > logits.at(0, best)) best = c;
    }
    const int tok = static_cast<int>(best);
    if (tok == tokens::kEos) break;
    ids.push_back(tok);
    generated.push_back(tok);
  }
  return detokenize(generated);
}
template Graph<long double>::Id embedding_batch_loss<long double>(Graph<long double>&, const ModelConfig&, const TaskRegistry&,
                                                        std::span<const EmbeddingExample* const>, double,
                                                        const ForwardOptions&);
template Graph<long double>::Id generative_batch_loss<long double>(Graph<long double>&, const ModelConfig&, const TaskRegistry&,
                                                         std::span<const GenerativeExample* const>,
                                                         const ForwardOptions&);

}  // namespace recfound
