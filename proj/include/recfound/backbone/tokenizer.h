// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recfound/tmole/task.h"

namespace recfound {

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by a small
// reserved block.
namespace tokens {
inline constexpr int kPad = 256;
inline constexpr int kEmbed = 257;  // "<|embed|>", prepended to every embedding-branch input
inline constexpr int kBos = 258;
inline constexpr int kEos = 259;
inline constexpr std::size_t kVocabSize = 260;
}  // namespace tokens

struct TokenizedSample {
  std::vector<int> ids;
  std::vector<std::uint8_t> attention_mask;  // 1 = real token
  std::vector<std::uint8_t> loss_mask;       // 1 on response tokens (generative only)
  Branch branch = Branch::kEmbedding;
  TaskId task = 0;

  std::size_t size() const { return ids.size(); }
};

struct TokenizerOptions {
  std::size_t max_seq_len = 128;
  bool truncate = false;  // false: over-long input is an error
};

// Byte tokens of `text`, with the embed marker prepended for the embedding
// branch. Throws on text that is empty after trimming whitespace.
std::vector<int> tokenize(std::string_view text, Branch branch, const TokenizerOptions& opts,
                          std::string* warning = nullptr);

// Inverse of tokenize over byte ids; reserved ids are dropped.
std::string detokenize(std::span<const int> ids);

TokenizedSample make_embedding_sample(std::string_view text, TaskId task, const TokenizerOptions& opts);

// [BOS] prompt response [EOS]; the loss mask covers response bytes and EOS.
TokenizedSample make_generative_sample(std::string_view prompt, std::string_view response, TaskId task,
                                       const TokenizerOptions& opts);

// [BOS] prompt, used as the decoding seed.
std::vector<int> make_prompt_ids(std::string_view prompt, const TokenizerOptions& opts);

}  // namespace recfound
