// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "recfound/tmole/task.h"

namespace recfound {

struct GenerativeSample {
  std::string task;
  std::string instruction;
  std::string input;  // may be empty
  std::string response;

  bool operator==(const GenerativeSample&) const = default;
};

struct EmbeddingTriplet {
  std::string task;
  std::string query;
  std::string positive;
  std::optional<std::string> negative;

  bool operator==(const EmbeddingTriplet&) const = default;
};

// Prompt text fed before the response: instruction, then the input on its own
// line when present, then a newline.
std::string generative_prompt(const GenerativeSample& s);

// JSON Lines: one object per line.
//   generative: {"task", "instruction", "input", "response"}
//   embedding:  {"task", "query", "positive", "negative"}
std::string to_jsonl(const GenerativeSample& s);
std::string to_jsonl(const EmbeddingTriplet& s);

template <typename Sample>
struct LoadResult {
  std::vector<Sample> samples;
  std::size_t lines = 0;
  std::size_t malformed = 0;
  std::vector<std::string> problems;  // "line N: reason"

  std::string summary() const;
};

// Blank lines are ignored. Malformed lines are skipped and reported. Unknown or
// wrong-branch task names and an empty result are errors.
LoadResult<GenerativeSample> load_generative(const std::filesystem::path& path, const TaskRegistry& registry);
LoadResult<EmbeddingTriplet> load_embedding(const std::filesystem::path& path, const TaskRegistry& registry);

void save_jsonl(const std::filesystem::path& path, const std::vector<GenerativeSample>& samples);
void save_jsonl(const std::filesystem::path& path, const std::vector<EmbeddingTriplet>& samples);

// Portable integer draws (the standard distributions differ across libraries).
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);
template <typename T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

enum class GenRule { kCopy, kReverse, kUppercaseExtract, kArithmeticEval, kOptionPick };
GenRule parse_gen_rule(std::string_view id);
std::string_view gen_rule_id(GenRule r);
std::string apply_gen_rule(GenRule r, std::string_view input);

std::vector<GenerativeSample> synth_generative(std::uint64_t seed, const std::string& task, GenRule rule,
                                               std::size_t count);

enum class EmbedFamily { kKeywordMatch, kAttributeMatch };
EmbedFamily parse_embed_family(std::string_view id);
std::string_view embed_family_id(EmbedFamily f);

// Items are split into a training region and a held-out region; positives of
// the two never coincide. Held-out draws have distinct positives.
enum class ItemRegion { kTrain, kHeldOut };

std::vector<EmbeddingTriplet> synth_embedding(std::uint64_t seed, const std::string& task, EmbedFamily family,
                                              std::size_t count, std::size_t distractors, ItemRegion region);

// Per-task index pools drawn without replacement, reshuffled each epoch.
class TaskPool {
 public:
  TaskPool() = default;
  explicit TaskPool(std::vector<std::size_t> items);

  std::size_t size() const { return items_.size(); }
  std::size_t epochs_started() const { return epochs_; }
  std::vector<std::size_t> draw(std::size_t count, std::mt19937_64& rng);

 private:
  std::vector<std::size_t> items_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epochs_ = 0;
};

// Builds one pool per task over the indices of `task_of`, keyed by task id.
std::map<TaskId, TaskPool> build_pools(const std::vector<TaskId>& task_of);

struct GenDataConfig {
  std::vector<std::string> generative_tasks = {"copy", "arithmetic-eval"};
  std::vector<std::string> embedding_tasks = {"keyword-match", "attribute-match"};
  std::size_t train_per_task = 2000;
  std::size_t val_per_task = 200;
  std::size_t test_per_task = 100;
  std::size_t distractors = 4;
};

// Writes {generative,embedding}_{train,val,test}.jsonl and manifest.json.
void generate_dataset(const std::filesystem::path& dir, std::uint64_t seed, const GenDataConfig& cfg);

}  // namespace recfound
