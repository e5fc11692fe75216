// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace recfound {

enum class Branch { kEmbedding, kGenerative };

std::string_view branch_name(Branch b);
Branch parse_branch(std::string_view s);

using TaskId = std::size_t;

struct TaskSpec {
  TaskId id = 0;
  Branch branch = Branch::kEmbedding;
  std::string name;
};

// Registration order defines task ids, the router's embedding-table rows and
// the row/column order of every exported per-task matrix.
class TaskRegistry {
 public:
  const TaskSpec& add(std::string name, Branch branch);

  const TaskSpec& at(TaskId id) const;
  const TaskSpec& find(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return tasks_.size(); }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  std::vector<TaskSpec> of_branch(Branch b) const;
  std::string names_list() const;

 private:
  std::vector<TaskSpec> tasks_;
};

}  // namespace recfound
