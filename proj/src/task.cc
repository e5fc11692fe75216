// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/tmole/task.h"

#include "recfound/error.h"

namespace recfound {

std::string_view branch_name(Branch b) { return b == Branch::kEmbedding ? "embedding" : "generative"; }

Branch parse_branch(std::string_view s) {
  if (s == "embedding" || s == "E") return Branch::kEmbedding;
  if (s == "generative" || s == "G") return Branch::kGenerative;
  throw DataError("unknown branch '" + std::string(s) + "' (expected embedding or generative)");
}

const TaskSpec& TaskRegistry::add(std::string name, Branch branch) {
  if (name.empty()) throw ConfigError("task name must be non-empty");
  if (contains(name)) throw ConfigError("task '" + name + "' registered twice");
  tasks_.push_back(TaskSpec{tasks_.size(), branch, std::move(name)});
  return tasks_.back();
}

const TaskSpec& TaskRegistry::at(TaskId id) const {
  if (id >= tasks_.size()) {
    throw DataError("unknown task id " + std::to_string(id) + "; registered: " + names_list());
  }
  return tasks_[id];
}

const TaskSpec& TaskRegistry::find(std::string_view name) const {
  for (const auto& t : tasks_) {
    if (t.name == name) return t;
  }
  throw DataError("unknown task '" + std::string(name) + "'; registered: " + names_list());
}

bool TaskRegistry::contains(std::string_view name) const {
  for (const auto& t : tasks_) {
    if (t.name == name) return true;
  }
  return false;
}

std::vector<TaskSpec> TaskRegistry::of_branch(Branch b) const {
  std::vector<TaskSpec> out;
  for (const auto& t : tasks_) {
    if (t.branch == b) out.push_back(t);
  }
  return out;
}

std::string TaskRegistry::names_list() const {
  std::string s;
  for (const auto& t : tasks_) s += (s.empty() ? "" : ", ") + t.name;
  return s.empty() ? "(none)" : s;
}

}  // namespace recfound
