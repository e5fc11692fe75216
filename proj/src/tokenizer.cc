// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/backbone/tokenizer.h"

#include <algorithm>
#include <cctype>

#include "recfound/error.h"

namespace recfound {

namespace {

bool blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

void fit_length(std::vector<int>& ids, const TokenizerOptions& opts, std::string* warning) {
  if (ids.size() <= opts.max_seq_len) return;
  if (!opts.truncate) {
    throw DataError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_seq_len " +
                    std::to_string(opts.max_seq_len));
  }
  if (warning) {
    *warning = "truncated sequence of " + std::to_string(ids.size()) + " tokens to " + std::to_string(opts.max_seq_len);
  }
  ids.resize(opts.max_seq_len);
}

}  // namespace

std::vector<int> tokenize(std::string_view text, Branch branch, const TokenizerOptions& opts, std::string* warning) {
  if (blank(text)) throw DataError("cannot tokenize empty text");
  std::vector<int> ids;
  ids.reserve(text.size() + 1);
  if (branch == Branch::kEmbedding) ids.push_back(tokens::kEmbed);
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  fit_length(ids, opts, warning);
  return ids;
}

std::string detokenize(std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
  }
  return out;
}

TokenizedSample make_embedding_sample(std::string_view text, TaskId task, const TokenizerOptions& opts) {
  TokenizedSample s;
  s.ids = tokenize(text, Branch::kEmbedding, opts);
  s.attention_mask.assign(s.ids.size(), 1);
  s.loss_mask.assign(s.ids.size(), 0);
  s.branch = Branch::kEmbedding;
  s.task = task;
  return s;
}

TokenizedSample make_generative_sample(std::string_view prompt, std::string_view response, TaskId task,
                                       const TokenizerOptions& opts) {
  if (blank(response)) throw DataError("generative sample has an empty response");
  TokenizedSample s;
  s.branch = Branch::kGenerative;
  s.task = task;
  s.ids.push_back(tokens::kBos);
  for (char c : prompt) s.ids.push_back(static_cast<unsigned char>(c));
  const std::size_t response_begin = s.ids.size();
  for (char c : response) s.ids.push_back(static_cast<unsigned char>(c));
  s.ids.push_back(tokens::kEos);
  fit_length(s.ids, opts, nullptr);
  s.attention_mask.assign(s.ids.size(), 1);
  s.loss_mask.assign(s.ids.size(), 0);
  for (std::size_t i = response_begin; i < s.ids.size(); ++i) s.loss_mask[i] = 1;
  if (response_begin >= s.ids.size()) throw DataError("generative sample has no response tokens after truncation");
  return s;
}

std::vector<int> make_prompt_ids(std::string_view prompt, const TokenizerOptions& opts) {
  std::vector<int> ids{tokens::kBos};
  for (char c : prompt) ids.push_back(static_cast<unsigned char>(c));
  fit_length(ids, opts, nullptr);
  return ids;
}

}  // namespace recfound
