// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/data/data.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "recfound/error.h"

namespace recfound {

using Json = nlohmann::ordered_json;

std::string generative_prompt(const GenerativeSample& s) {
  std::string p = s.instruction;
  if (!s.input.empty()) p += "\n" + s.input;
  p += "\n";
  return p;
}

std::string to_jsonl(const GenerativeSample& s) {
  Json j;
  j["task"] = s.task;
  j["instruction"] = s.instruction;
  j["input"] = s.input;
  j["response"] = s.response;
  return j.dump();
}

std::string to_jsonl(const EmbeddingTriplet& s) {
  Json j;
  j["task"] = s.task;
  j["query"] = s.query;
  j["positive"] = s.positive;
  if (s.negative) j["negative"] = *s.negative;
  return j.dump();
}

template <typename Sample>
std::string LoadResult<Sample>::summary() const {
  std::ostringstream os;
  os << samples.size() << " samples from " << lines << " lines, " << malformed << " malformed";
  for (const auto& p : problems) os << "\n  " << p;
  return os.str();
}

template struct LoadResult<GenerativeSample>;
template struct LoadResult<EmbeddingTriplet>;

namespace {

std::optional<std::string> string_field(const Json& j, const char* key, bool required, std::string& why) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) why = std::string("missing field '") + key + "'";
    return std::nullopt;
  }
  if (!it->is_string()) {
    why = std::string("field '") + key + "' is not a string";
    return std::nullopt;
  }
  return it->template get<std::string>();
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

template <typename Sample, typename Parse>
LoadResult<Sample> load_lines(const std::filesystem::path& path, const TaskRegistry& registry, Branch branch,
                              Parse parse) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  LoadResult<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    ++out.lines;
    std::string why;
    std::optional<Sample> s;
    try {
      s = parse(Json::parse(line), why);
    } catch (const Json::exception& e) {
      why = "invalid JSON";
    }
    if (!s) {
      ++out.malformed;
      out.problems.push_back("line " + std::to_string(lineno) + ": " + why);
      continue;
    }
    const TaskSpec& spec = registry.find(s->task);
    if (spec.branch != branch) {
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": task '" + s->task + "' is " +
                      std::string(branch_name(spec.branch)) + ", expected " + std::string(branch_name(branch)));
    }
    out.samples.push_back(std::move(*s));
  }
  if (out.samples.empty()) throw DataError(path.string() + ": no valid samples (" + out.summary() + ")");
  return out;
}

}  // namespace

LoadResult<GenerativeSample> load_generative(const std::filesystem::path& path, const TaskRegistry& registry) {
  return load_lines<GenerativeSample>(
      path, registry, Branch::kGenerative, [](const Json& j, std::string& why) -> std::optional<GenerativeSample> {
        if (!j.is_object()) {
          why = "not a JSON object";
          return std::nullopt;
        }
        auto task = string_field(j, "task", true, why);
        auto instr = string_field(j, "instruction", true, why);
        auto input = string_field(j, "input", false, why);
        auto resp = string_field(j, "response", true, why);
        if (!why.empty()) return std::nullopt;
        if (blank(*resp)) {
          why = "empty response";
          return std::nullopt;
        }
        return GenerativeSample{*task, *instr, input.value_or(""), *resp};
      });
}

LoadResult<EmbeddingTriplet> load_embedding(const std::filesystem::path& path, const TaskRegistry& registry) {
  return load_lines<EmbeddingTriplet>(
      path, registry, Branch::kEmbedding, [](const Json& j, std::string& why) -> std::optional<EmbeddingTriplet> {
        if (!j.is_object()) {
          why = "not a JSON object";
          return std::nullopt;
        }
        auto task = string_field(j, "task", true, why);
        auto query = string_field(j, "query", true, why);
        auto pos = string_field(j, "positive", true, why);
        auto neg = string_field(j, "negative", false, why);
        if (!why.empty()) return std::nullopt;
        if (blank(*query) || blank(*pos) || (neg && blank(*neg))) {
          why = "empty text field";
          return std::nullopt;
        }
        return EmbeddingTriplet{*task, *query, *pos, neg};
      });
}

namespace {

template <typename Sample>
void save_lines(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : samples) out << to_jsonl(s) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void save_jsonl(const std::filesystem::path& path, const std::vector<GenerativeSample>& samples) {
  save_lines(path, samples);
}
void save_jsonl(const std::filesystem::path& path, const std::vector<EmbeddingTriplet>& samples) {
  save_lines(path, samples);
}

std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw StateError("uniform_index over an empty range");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view task, std::uint64_t salt) {
  std::uint64_t z = seed ^ fnv1a(task) ^ (salt * 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::size_t draw_range(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(uniform_index(rng, hi - lo + 1));
}

std::string random_letters(std::mt19937_64& rng, std::size_t n, std::string_view alphabet) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[uniform_index(rng, alphabet.size())]);
  return s;
}

constexpr std::string_view kLower = "abcdefghijklmnopqrstuvwxyz";
const std::vector<std::string> kOptionWords = {"cat", "dog", "sun", "map", "pen", "cup",
                                               "box", "key", "hat", "bus", "egg", "fan"};

}  // namespace

namespace {
struct RuleEntry {
  GenRule rule;
  std::string_view id;
  std::string_view instruction;
};
constexpr RuleEntry kRules[] = {
    {GenRule::kCopy, "copy", "copy"},
    {GenRule::kReverse, "reverse", "reverse"},
    {GenRule::kUppercaseExtract, "uppercase-extract", "caps"},
    {GenRule::kArithmeticEval, "arithmetic-eval", "calc"},
    {GenRule::kOptionPick, "option-pick", "pick"},
};
}  // namespace

GenRule parse_gen_rule(std::string_view id) {
  for (const auto& r : kRules) {
    if (r.id == id) return r.rule;
  }
  throw ConfigError("unknown generative rule '" + std::string(id) +
                    "' (expected copy, reverse, uppercase-extract, arithmetic-eval or option-pick)");
}

std::string_view gen_rule_id(GenRule rule) {
  for (const auto& r : kRules) {
    if (r.rule == rule) return r.id;
  }
  return "?";
}

std::string apply_gen_rule(GenRule rule, std::string_view input) {
  switch (rule) {
    case GenRule::kCopy:
      return std::string(input);
    case GenRule::kReverse:
      return std::string(input.rbegin(), input.rend());
    case GenRule::kUppercaseExtract: {
      std::string out;
      for (char c : input) {
        if (std::isupper(static_cast<unsigned char>(c))) out.push_back(c);
      }
      return out;
    }
    case GenRule::kArithmeticEval: {
      const auto op = input.find_first_of("+-");
      if (op == std::string_view::npos || op == 0) throw DataError("arithmetic input '" + std::string(input) + "'");
      const long a = std::stol(std::string(input.substr(0, op)));
      const long b = std::stol(std::string(input.substr(op + 1)));
      return std::to_string(input[op] == '+' ? a + b : a - b);
    }
    case GenRule::kOptionPick: {
      const auto q = input.rfind("? ");
      if (q == std::string_view::npos || q + 2 >= input.size()) {
        throw DataError("option input '" + std::string(input) + "'");
      }
      const std::string tag = std::string(input.substr(q + 2)) + ") ";
      const auto at = input.find(tag);
      if (at == std::string_view::npos) throw DataError("option input '" + std::string(input) + "'");
      const auto start = at + tag.size();
      const auto end = input.find(' ', start);
      return std::string(input.substr(start, end - start));
    }
  }
  return {};
}

std::vector<GenerativeSample> synth_generative(std::uint64_t seed, const std::string& task, GenRule rule,
                                               std::size_t count) {
  std::mt19937_64 rng(mix_seed(seed, task, 0));
  std::string_view instruction;
  for (const auto& r : kRules) {
    if (r.rule == rule) instruction = r.instruction;
  }
  std::vector<GenerativeSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string input;
    switch (rule) {
      case GenRule::kCopy:
      case GenRule::kReverse:
        input = random_letters(rng, draw_range(rng, 3, 6), kLower);
        break;
      case GenRule::kUppercaseExtract: {
        const std::size_t n = draw_range(rng, 5, 8);
        input = random_letters(rng, n, kLower);
        const std::size_t ups = draw_range(rng, 1, 3);
        for (std::size_t k = 0; k < ups; ++k) {
          auto& c = input[uniform_index(rng, n)];
          c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
        break;
      }
      case GenRule::kArithmeticEval: {
        long a = static_cast<long>(uniform_index(rng, 50)), b = static_cast<long>(uniform_index(rng, 50));
        const bool plus = uniform_index(rng, 2) == 0;
        if (!plus && b > a) std::swap(a, b);
        input = std::to_string(a) + (plus ? "+" : "-") + std::to_string(b);
        break;
      }
      case GenRule::kOptionPick: {
        std::vector<std::size_t> words(kOptionWords.size());
        for (std::size_t k = 0; k < words.size(); ++k) words[k] = k;
        shuffle_in_place(words, rng);
        const char tags[] = {'a', 'b', 'c'};
        for (std::size_t k = 0; k < 3; ++k) input += std::string(1, tags[k]) + ") " + kOptionWords[words[k]] + " ";
        input += "? " + std::string(1, tags[uniform_index(rng, 3)]);
        break;
      }
    }
    out.push_back({task, std::string(instruction), input, apply_gen_rule(rule, input)});
  }
  return out;
}

EmbedFamily parse_embed_family(std::string_view id) {
  if (id == "keyword-match") return EmbedFamily::kKeywordMatch;
  if (id == "attribute-match") return EmbedFamily::kAttributeMatch;
  throw ConfigError("unknown embedding family '" + std::string(id) + "' (expected keyword-match or attribute-match)");
}

std::string_view embed_family_id(EmbedFamily f) {
  return f == EmbedFamily::kKeywordMatch ? "keyword-match" : "attribute-match";
}

namespace {

const std::vector<std::string> kFiller = {"lamp", "mug", "sofa", "desk", "rug", "vase", "clock", "shelf"};
const std::vector<std::string> kColors = {"red", "blue", "green", "black", "white", "pink", "gray", "gold"};
const std::vector<std::string> kShapes = {"cube", "ring", "disk", "cone", "star", "ball", "tube", "arch"};
const std::vector<std::string> kMaterials = {"wood", "iron", "silk", "clay", "wool", "jade", "zinc", "felt"};
const std::vector<std::string> kSizes = {"tiny", "small", "large", "huge"};

bool held_out(std::string_view key) { return fnv1a(key) % 8 == 0; }

struct Item {
  std::string key;
  std::string query;
  std::string text;
};

Item keyword_item(const std::string& kw, std::mt19937_64& rng) {
  const auto& f1 = kFiller[uniform_index(rng, kFiller.size())];
  const auto& f2 = kFiller[uniform_index(rng, kFiller.size())];
  return {kw, "find " + kw, kw + " " + f1 + " " + f2};
}

struct Attrs {
  std::size_t color, shape, material, size;
  std::string key() const {
    return kSizes[size] + "/" + kColors[color] + "/" + kMaterials[material] + "/" + kShapes[shape];
  }
};

Item attribute_item(const Attrs& a) {
  return {a.key(), "want " + kSizes[a.size] + " " + kColors[a.color] + " " + kMaterials[a.material] + " " + kShapes[a.shape],
          kShapes[a.shape] + ": " + kColors[a.color] + ", " + kMaterials[a.material] + ", " + kSizes[a.size]};
}

Attrs random_attrs(std::mt19937_64& rng) {
  Attrs a;
  a.color = uniform_index(rng, kColors.size());
  a.shape = uniform_index(rng, kShapes.size());
  a.material = uniform_index(rng, kMaterials.size());
  a.size = uniform_index(rng, kSizes.size());
  return a;
}

}  // namespace

std::vector<EmbeddingTriplet> synth_embedding(std::uint64_t seed, const std::string& task, EmbedFamily family,
                                              std::size_t count, std::size_t distractors, ItemRegion region) {
  if (distractors < 1) throw ConfigError("synth_embedding needs at least one distractor");
  std::mt19937_64 rng(mix_seed(seed, task, region == ItemRegion::kTrain ? 11 : 13));
  const bool want_held_out = region == ItemRegion::kHeldOut;
  std::set<std::string> used;
  std::vector<EmbeddingTriplet> out;
  out.reserve(count);
  const std::size_t max_attempts = 10000;
  while (out.size() < count) {
    Item item;
    std::vector<Item> near;
    std::size_t attempts = 0;
    for (;; ++attempts) {
      if (attempts > max_attempts) {
        throw DataError("synth_embedding: item space exhausted for task '" + task + "' after " +
                        std::to_string(out.size()) + " samples");
      }
      if (family == EmbedFamily::kKeywordMatch) {
        item = keyword_item(random_letters(rng, 4, kLower), rng);
      } else {
        item = attribute_item(random_attrs(rng));
      }
      if (held_out(item.key) != want_held_out) continue;
      if (want_held_out && used.count(item.key)) continue;
      break;
    }
    used.insert(item.key);
    // Near misses: one keyword letter or one attribute changed.
    for (std::size_t d = 0; d < distractors; ++d) {
      if (family == EmbedFamily::kKeywordMatch) {
        std::string kw = item.key;
        const std::size_t pos = uniform_index(rng, kw.size());
        char c;
        do {
          c = kLower[uniform_index(rng, kLower.size())];
        } while (c == kw[pos]);
        kw[pos] = c;
        near.push_back(keyword_item(kw, rng));
      } else {
        Attrs a = random_attrs(rng);
        // Rebuild the positive's attributes from its key, then perturb one.
        std::vector<std::string> parts;
        std::stringstream ss(item.key);
        for (std::string p; std::getline(ss, p, '/');) parts.push_back(p);
        auto index_of = [](const std::vector<std::string>& v, const std::string& s) {
          return static_cast<std::size_t>(std::find(v.begin(), v.end(), s) - v.begin());
        };
        Attrs b{index_of(kColors, parts[1]), index_of(kShapes, parts[3]), index_of(kMaterials, parts[2]),
                index_of(kSizes, parts[0])};
        switch (uniform_index(rng, 4)) {
          case 0:
            b.color = b.color == a.color ? (a.color + 1) % kColors.size() : a.color;
            break;
          case 1:
            b.shape = b.shape == a.shape ? (a.shape + 1) % kShapes.size() : a.shape;
            break;
          case 2:
            b.material = b.material == a.material ? (a.material + 1) % kMaterials.size() : a.material;
            break;
          default:
            b.size = b.size == a.size ? (a.size + 1) % kSizes.size() : a.size;
            break;
        }
        near.push_back(attribute_item(b));
      }
    }
    const auto& neg = near[uniform_index(rng, near.size())];
    out.push_back({task, item.query, item.text, neg.text});
  }
  return out;
}

TaskPool::TaskPool(std::vector<std::size_t> items) : items_(std::move(items)) {}

std::vector<std::size_t> TaskPool::draw(std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (count == 0) return out;
  if (items_.empty()) throw DataError("cannot draw from an empty task pool");
  out.reserve(count);
  while (out.size() < count) {
    if (cursor_ == order_.size()) {
      order_ = items_;
      shuffle_in_place(order_, rng);
      cursor_ = 0;
      ++epochs_;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

std::map<TaskId, TaskPool> build_pools(const std::vector<TaskId>& task_of) {
  std::map<TaskId, std::vector<std::size_t>> idx;
  for (std::size_t i = 0; i < task_of.size(); ++i) idx[task_of[i]].push_back(i);
  std::map<TaskId, TaskPool> pools;
  for (auto& [t, v] : idx) pools.emplace(t, TaskPool(std::move(v)));
  return pools;
}

void generate_dataset(const std::filesystem::path& dir, std::uint64_t seed, const GenDataConfig& cfg) {
  std::filesystem::create_directories(dir);
  struct Split {
    const char* name;
    std::size_t count;
    std::uint64_t salt;
  };
  const Split splits[] = {{"train", cfg.train_per_task, 1}, {"val", cfg.val_per_task, 2}, {"test", cfg.test_per_task, 3}};
  Json manifest;
  manifest["format"] = "recfound-data/1";
  manifest["seed"] = seed;
  manifest["distractors"] = cfg.distractors;
  for (const auto& sp : splits) {
    std::vector<GenerativeSample> gen;
    for (const auto& t : cfg.generative_tasks) {
      auto s = synth_generative(mix_seed(seed, sp.name, sp.salt), t, parse_gen_rule(t), sp.count);
      manifest["counts"][sp.name]["generative"][t] = s.size();
      gen.insert(gen.end(), s.begin(), s.end());
    }
    std::vector<EmbeddingTriplet> emb;
    const ItemRegion region = std::string_view(sp.name) == "train" ? ItemRegion::kTrain : ItemRegion::kHeldOut;
    for (const auto& t : cfg.embedding_tasks) {
      auto s = synth_embedding(mix_seed(seed, sp.name, sp.salt), t, parse_embed_family(t), sp.count, cfg.distractors,
                               region);
      manifest["counts"][sp.name]["embedding"][t] = s.size();
      emb.insert(emb.end(), s.begin(), s.end());
    }
    if (!gen.empty()) save_jsonl(dir / ("generative_" + std::string(sp.name) + ".jsonl"), gen);
    if (!emb.empty()) save_jsonl(dir / ("embedding_" + std::string(sp.name) + ".jsonl"), emb);
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

}  // namespace recfound
